#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mia/common.hpp"
#include "mia/rng.hpp"

namespace mia {

/// One observation of one individual: a feature vector in [0,1]^D plus an
/// identity label and a provenance tag.
struct Sample {
    std::string sample_id;
    int individual_id = 0;
    std::vector<double> features;
    std::string source;
};

namespace detail {
inline void validate_features(const Sample& s, std::size_t dim) {
    if (s.features.size() != dim)
        throw FormatError("sample '" + s.sample_id + "': feature dimension " +
                          std::to_string(s.features.size()) + " != " + std::to_string(dim));
    for (double f : s.features) {
        if (!std::isfinite(f) || f < 0.0 || f > 1.0)
            throw FormatError("sample '" + s.sample_id + "': feature out of [0,1]");
    }
}
}  // namespace detail

/// Immutable, validated collection of samples sharing one feature dimension.
class Dataset {
public:
    Dataset() = default;

    explicit Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {
        if (samples_.empty()) return;
        feature_dim_ = samples_[0].features.size();
        std::set<std::string> seen;
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const Sample& s = samples_[i];
            detail::validate_features(s, feature_dim_);
            if (!seen.insert(s.sample_id).second)
                throw FormatError("duplicate sample_id '" + s.sample_id + "'");
            by_identity_[s.individual_id].push_back(i);
        }
    }

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    std::size_t feature_dim() const { return feature_dim_; }

    const Sample& operator[](std::size_t i) const { return samples_[i]; }
    auto begin() const { return samples_.begin(); }
    auto end() const { return samples_.end(); }
    const std::vector<Sample>& samples() const { return samples_; }

    /// Sorted distinct individual_ids present in the dataset.
    std::vector<int> identities() const {
        std::vector<int> ids;
        ids.reserve(by_identity_.size());
        for (const auto& [id, _] : by_identity_) ids.push_back(id);
        return ids;
    }

    /// Indices of the samples belonging to one identity (file order).
    const std::vector<std::size_t>& indices_of(int individual_id) const {
        auto it = by_identity_.find(individual_id);
        require(it != by_identity_.end(),
                "identity " + std::to_string(individual_id) + " not present in dataset");
        return it->second;
    }

    bool has_identity(int individual_id) const { return by_identity_.count(individual_id) > 0; }

private:
    std::vector<Sample> samples_;
    std::size_t feature_dim_ = 0;
    std::map<int, std::vector<std::size_t>> by_identity_;
};

/// Synthetic identity population: each identity is an isotropic Gaussian
/// cluster around a center drawn uniformly in the unit cube; samples are
/// center plus noise, clipped to [0,1]. Separability is controlled by
/// intra_class_noise alone. Deterministic in the seed.
inline Dataset generate_synthetic_population(int n_individuals, int samples_per_id,
                                             int feature_dim, double intra_class_noise,
                                             std::uint64_t seed) {
    require(n_individuals >= 2, "generate_synthetic_population: need at least 2 individuals");
    require(samples_per_id >= 1, "generate_synthetic_population: samples_per_id must be positive");
    require(feature_dim >= 2, "generate_synthetic_population: feature_dim must be >= 2");
    require(intra_class_noise > 0.0 && std::isfinite(intra_class_noise),
            "generate_synthetic_population: intra_class_noise must be > 0");

    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(n_individuals) * samples_per_id);
    for (int id = 0; id < n_individuals; ++id) {
        Rng center_rng(derive_seed(seed, "center", static_cast<std::uint64_t>(id)));
        std::vector<double> center(feature_dim);
        for (double& c : center) c = center_rng.uniform01();

        Rng noise_rng(derive_seed(seed, "noise", static_cast<std::uint64_t>(id)));
        for (int k = 0; k < samples_per_id; ++k) {
            Sample s;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "syn-%04d-%04d", id, k);
            s.sample_id = buf;
            s.individual_id = id;
            s.source = "synthetic";
            s.features.resize(feature_dim);
            for (int d = 0; d < feature_dim; ++d) {
                double v = center[d] + noise_rng.normal(0.0, intra_class_noise);
                s.features[d] = std::clamp(v, 0.0, 1.0);
            }
            samples.push_back(std::move(s));
        }
    }
    return Dataset(std::move(samples));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class Augmentation { HorizontalFlip, Rotate90, Rotate180, Rotate270, Rotate330, Brightness };

struct ImageShape {
    int rows = 0;
    int cols = 0;
};

inline const char* augmentation_name(Augmentation a) {
    switch (a) {
        case Augmentation::HorizontalFlip: return "flip";
        case Augmentation::Rotate90: return "rot90";
        case Augmentation::Rotate180: return "rot180";
        case Augmentation::Rotate270: return "rot270";
        case Augmentation::Rotate330: return "rot330";
        case Augmentation::Brightness: return "bright";
    }
    return "?";
}

inline std::optional<Augmentation> augmentation_from_name(std::string_view n) {
    if (n == "flip") return Augmentation::HorizontalFlip;
    if (n == "rot90") return Augmentation::Rotate90;
    if (n == "rot180") return Augmentation::Rotate180;
    if (n == "rot270") return Augmentation::Rotate270;
    if (n == "rot330") return Augmentation::Rotate330;
    if (n == "bright") return Augmentation::Brightness;
    return std::nullopt;
}

namespace detail {

/// Clockwise rotation by `degrees` about the image center, nearest-neighbor
/// inverse mapping, out-of-bounds pixels fill with 0. Exact at pixel centers
/// for multiples of 90 on any grid.
inline std::vector<double> rotate_grid(const std::vector<double>& px, int rows, int cols,
                                       double degrees) {
    const double th = degrees * M_PI / 180.0;
    // Inverse map: output pixel -> source location (rotate backward).
    const double c = std::cos(-th), s = std::sin(-th);
    const double cy = rows / 2.0, cx = cols / 2.0;
    std::vector<double> out(px.size(), 0.0);
    for (int r = 0; r < rows; ++r) {
        for (int col = 0; col < cols; ++col) {
            const double y = r + 0.5 - cy;
            const double x = col + 0.5 - cx;
            const double sx = c * x - s * y + cx;
            const double sy = s * x + c * y + cy;
            const int sr = static_cast<int>(std::floor(sy));
            const int sc = static_cast<int>(std::floor(sx));
            if (sr >= 0 && sr < rows && sc >= 0 && sc < cols)
                out[static_cast<std::size_t>(r) * cols + col] =
                    px[static_cast<std::size_t>(sr) * cols + sc];
        }
    }
    return out;
}

}  // namespace detail

/// Returns one augmented copy of `sample` per requested kind. Rotations view
/// the feature vector as a rows x cols grid and need image_shape; the flip
/// treats a shapeless vector as a single row. individual_id is preserved and
/// all outputs stay in [0,1].
inline std::vector<Sample> augment(const Sample& sample, std::optional<ImageShape> image_shape,
                                   const std::vector<Augmentation>& kinds, std::uint64_t seed) {
    if (image_shape) {
        require(image_shape->rows > 0 && image_shape->cols > 0, "augment: image_shape must be positive");
        require(static_cast<std::size_t>(image_shape->rows) * image_shape->cols == sample.features.size(),
                "augment: rows*cols must equal the feature dimension");
    }
    std::vector<Sample> out;
    out.reserve(kinds.size());
    for (Augmentation kind : kinds) {
        Sample a = sample;
        a.sample_id = sample.sample_id + "-" + augmentation_name(kind);
        switch (kind) {
            case Augmentation::HorizontalFlip: {
                const int rows = image_shape ? image_shape->rows : 1;
                const int cols = image_shape ? image_shape->cols
                                            : static_cast<int>(sample.features.size());
                for (int r = 0; r < rows; ++r)
                    std::reverse(a.features.begin() + static_cast<std::ptrdiff_t>(r) * cols,
                                 a.features.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
                break;
            }
            case Augmentation::Rotate90:
            case Augmentation::Rotate180:
            case Augmentation::Rotate270:
            case Augmentation::Rotate330: {
                require(image_shape.has_value(), "augment: rotation requires image_shape");
                double deg = kind == Augmentation::Rotate90    ? 90.0
                             : kind == Augmentation::Rotate180 ? 180.0
                             : kind == Augmentation::Rotate270 ? 270.0
                                                               : 330.0;
                a.features = detail::rotate_grid(sample.features, image_shape->rows,
                                                 image_shape->cols, deg);
                break;
            }
            case Augmentation::Brightness: {
                Rng rng(derive_seed(seed, "brightness", fnv1a64(sample.sample_id)));
                const double factor = rng.uniform01();
                for (double& f : a.features) f = std::clamp(f * factor, 0.0, 1.0);
                break;
            }
        }
        for (double& f : a.features) f = std::clamp(f, 0.0, 1.0);
        out.push_back(std::move(a));
    }
    return out;
}

/// Applies `augment` to every sample of a dataset and returns the originals
/// plus all augmented copies as one dataset.
inline Dataset augment_dataset(const Dataset& ds, std::optional<ImageShape> image_shape,
                               const std::vector<Augmentation>& kinds, std::uint64_t seed) {
    std::vector<Sample> all;
    all.reserve(ds.size() * (1 + kinds.size()));
    for (const Sample& s : ds) {
        all.push_back(s);
        for (Sample& a : augment(s, image_shape, kinds, seed)) all.push_back(std::move(a));
    }
    return Dataset(std::move(all));
}

// ---------------------------------------------------------------------------
// CSV round trip
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

/// CSV schema: header `sample_id,individual_id,f0,...,f{D-1}`. Features are
/// written with round-trip decimal precision so save/load is bit exact.
inline void save_dataset(const Dataset& ds, const std::string& path) {
    require(!ds.empty(), "save_dataset: refusing to write an empty dataset");
    std::ostringstream out;
    out << "sample_id,individual_id";
    for (std::size_t d = 0; d < ds.feature_dim(); ++d) out << ",f" << d;
    out << "\n";
    for (const Sample& s : ds) {
        out << s.sample_id << "," << s.individual_id;
        for (double f : s.features) out << "," << detail::format_double(f);
        out << "\n";
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_dataset: cannot open '" + path + "' for writing");
    f << out.str();
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_dataset: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw FormatError("load_dataset: '" + path + "' is empty");
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "individual_id")
        throw FormatError("load_dataset: bad header in '" + path + "'");
    const std::size_t dim = header.size() - 2;

    std::vector<Sample> samples;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw FormatError("load_dataset: line " + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        Sample s;
        s.sample_id = fields[0];
        s.source = "external";
        try {
            std::size_t pos = 0;
            s.individual_id = std::stoi(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError("load_dataset: line " + std::to_string(lineno) +
                              ": bad individual_id '" + fields[1] + "'");
        }
        s.features.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            const std::string& fs = fields[d + 2];
            char* endp = nullptr;
            double v = std::strtod(fs.c_str(), &endp);
            if (fs.empty() || endp != fs.c_str() + fs.size())
                throw FormatError("load_dataset: line " + std::to_string(lineno) +
                                  ": bad feature '" + fs + "'");
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw FormatError("load_dataset: line " + std::to_string(lineno) +
                                  ": feature " + fs + " outside [0,1]");
            s.features[d] = v;
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw FormatError("load_dataset: '" + path + "' has no data rows");
    return Dataset(std::move(samples));
}

}  // namespace mia
