#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mia/dataset.hpp"
#include "mia/rng.hpp"

namespace mia {

/// Softmax output of a classifier: non-negative entries summing to 1.
struct PredictionVector {
    std::vector<double> confidences;

    std::size_t n_classes() const { return confidences.size(); }
};

/// Checks the PredictionVector invariants. `tol` bounds |sum - 1|.
inline void validate_prediction_vector(const PredictionVector& p, double tol = 1e-6) {
    require(!p.confidences.empty(), "PredictionVector: empty");
    double sum = 0.0;
    for (double c : p.confidences) {
        if (!std::isfinite(c) || c < 0.0)
            throw ContractError("PredictionVector: negative or non-finite entry");
        sum += c;
    }
    if (std::abs(sum - 1.0) > tol)
        throw ContractError("PredictionVector: entries sum to " + std::to_string(sum));
}

/// Fully connected architecture: input dim, hidden widths, class count.
/// Hidden layers use tanh; the output layer is softmax.
struct ClassifierSpec {
    std::vector<int> layer_widths;

    int input_dim() const { return layer_widths.front(); }
    int n_classes() const { return layer_widths.back(); }
};

inline ClassifierSpec make_spec(int feature_dim, std::vector<int> hidden, int n_classes) {
    require(feature_dim > 0 && n_classes >= 2, "make_spec: bad dimensions");
    ClassifierSpec spec;
    spec.layer_widths.push_back(feature_dim);
    for (int h : hidden) {
        require(h > 0, "make_spec: hidden widths must be positive");
        spec.layer_widths.push_back(h);
    }
    spec.layer_widths.push_back(n_classes);
    return spec;
}

enum class TrainPreset { Overfitting, NoOverfitting, Custom };

/// SGD hyperparameters. Two presets: no_overfitting enables weight decay 0.5
/// and dropout 0.5, overfitting disables both; batch 32, 200 epochs and
/// learning rate 0.05 are shared (see README for what each preset does to
/// the compact classifier).
struct TrainConfig {
    double learning_rate = 0.05;
    double weight_decay = 0.0;
    double dropout_rate = 0.0;
    int batch_size = 32;
    int epochs = 200;
    std::uint64_t seed = 0;
    TrainPreset preset = TrainPreset::Custom;

    static TrainConfig overfitting(std::uint64_t seed) {
        TrainConfig c;
        c.learning_rate = 0.05;
        c.weight_decay = 0.0;
        c.dropout_rate = 0.0;
        c.batch_size = 32;
        c.epochs = 200;
        c.seed = seed;
        c.preset = TrainPreset::Overfitting;
        return c;
    }

    static TrainConfig no_overfitting(std::uint64_t seed) {
        TrainConfig c;
        c.learning_rate = 0.05;
        c.weight_decay = 0.5;
        c.dropout_rate = 0.5;
        c.batch_size = 32;
        c.epochs = 200;
        c.seed = seed;
        c.preset = TrainPreset::NoOverfitting;
        return c;
    }

    void validate() const {
        require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
        require(weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
        require(dropout_rate >= 0.0 && dropout_rate < 1.0, "TrainConfig: dropout_rate in [0,1)");
        require(batch_size > 0, "TrainConfig: batch_size must be positive");
        require(epochs >= 0, "TrainConfig: epochs must be >= 0");
    }
};

struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0, train_accuracy = 0.0;
    double val_loss = 0.0, val_accuracy = 0.0;
};

/// A trained feed-forward classifier. Immutable after training; concurrent
/// read-only queries are safe.
class TrainedClassifier {
public:
    ClassifierSpec spec;
    std::vector<Matrix> weights;             // weights[l]: rows = out, cols = in
    std::vector<std::vector<double>> biases;
    std::vector<int> class_labels;           // output index -> individual_id
    std::vector<EpochStats> history;

    std::size_t n_layers() const { return weights.size(); }
    int n_classes() const { return spec.n_classes(); }

    /// Raw output logits (pre-softmax), dropout disabled.
    std::vector<double> logits(std::span<const double> x) const {
        require(x.size() == static_cast<std::size_t>(spec.input_dim()),
                "TrainedClassifier: feature dimension mismatch");
        std::vector<double> h(x.begin(), x.end());
        std::vector<double> z;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const Matrix& W = weights[l];
            z.assign(W.rows, 0.0);
            for (std::size_t r = 0; r < W.rows; ++r) {
                double acc = biases[l][r];
                const double* wr = &W.a[r * W.cols];
                for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * h[c];
                z[r] = acc;
            }
            if (l + 1 < weights.size())
                for (double& v : z) v = std::tanh(v);
            h = z;
        }
        return h;
    }
};

namespace detail {

inline std::vector<double> softmax(std::vector<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

inline int class_index_of(const TrainedClassifier& model, int individual_id) {
    auto it = std::lower_bound(model.class_labels.begin(), model.class_labels.end(), individual_id);
    if (it == model.class_labels.end() || *it != individual_id) return -1;
    return static_cast<int>(it - model.class_labels.begin());
}

/// Forward pass storing every layer's activations. When dropout is active,
/// hidden activations are the post-mask values and `masks` holds the
/// inverted-dropout scale per unit (0 for dropped units).
inline void forward_cached(const TrainedClassifier& model, std::span<const double> x,
                           double dropout_rate, Rng* dropout_rng,
                           std::vector<std::vector<double>>& acts,
                           std::vector<std::vector<double>>& masks) {
    const std::size_t L = model.n_layers();
    acts.resize(L + 1);
    masks.resize(L);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
        const Matrix& W = model.weights[l];
        acts[l + 1].assign(W.rows, 0.0);
        for (std::size_t r = 0; r < W.rows; ++r) {
            double acc = model.biases[l][r];
            const double* wr = &W.a[r * W.cols];
            const double* in = acts[l].data();
            for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * in[c];
            acts[l + 1][r] = acc;
        }
        if (l + 1 < L) {
            auto& h = acts[l + 1];
            for (double& v : h) v = std::tanh(v);
            if (dropout_rate > 0.0) {
                masks[l].assign(h.size(), 0.0);
                const double keep = 1.0 - dropout_rate;
                for (std::size_t k = 0; k < h.size(); ++k) {
                    if (dropout_rng->uniform01() >= dropout_rate) masks[l][k] = 1.0 / keep;
                    h[k] *= masks[l][k];
                }
            } else {
                masks[l].clear();
            }
        }
    }
    acts[L] = softmax(std::move(acts[L]));
}

/// Backpropagates the cross-entropy gradient of one sample through the
/// cached activations, accumulating into gW/gb.
inline void backward_accumulate(const TrainedClassifier& model,
                                const std::vector<std::vector<double>>& acts,
                                const std::vector<std::vector<double>>& masks, int truth,
                                std::vector<Matrix>& gW, std::vector<std::vector<double>>& gb) {
    const std::size_t L = model.n_layers();
    std::vector<double> delta = acts[L];  // softmax probabilities
    delta[truth] -= 1.0;
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& W = model.weights[l];
        for (std::size_t r = 0; r < W.rows; ++r) {
            const double d = delta[r];
            double* gr = &gW[l].a[r * W.cols];
            const double* in = acts[l].data();
            for (std::size_t c = 0; c < W.cols; ++c) gr[c] += d * in[c];
            gb[l][r] += d;
        }
        if (l > 0) {
            std::vector<double> prev(W.cols, 0.0);
            for (std::size_t r = 0; r < W.rows; ++r) {
                const double d = delta[r];
                const double* wr = &W.a[r * W.cols];
                for (std::size_t c = 0; c < W.cols; ++c) prev[c] += d * wr[c];
            }
            const bool dropped = !masks[l - 1].empty();
            for (std::size_t c = 0; c < W.cols; ++c) {
                double h = acts[l][c];
                if (dropped) {
                    const double m = masks[l - 1][c];
                    prev[c] *= m;
                    h = (m > 0.0) ? h / m : 0.0;  // recover the tanh output
                }
                prev[c] *= (1.0 - h * h);
            }
            delta = std::move(prev);
        }
    }
}

inline TrainedClassifier init_classifier(const ClassifierSpec& spec,
                                         const std::vector<int>& class_labels,
                                         std::uint64_t seed) {
    TrainedClassifier m;
    m.spec = spec;
    m.class_labels = class_labels;
    Rng rng(derive_seed(seed, "init"));
    for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
        const std::size_t in = spec.layer_widths[l];
        const std::size_t out = spec.layer_widths[l + 1];
        const double lim = 1.0 / std::sqrt(static_cast<double>(in));
        Matrix W(out, in);
        for (double& w : W.a) w = rng.uniform(-lim, lim);
        std::vector<double> b(out);
        for (double& v : b) v = rng.uniform(-lim, lim);
        m.weights.push_back(std::move(W));
        m.biases.push_back(std::move(b));
    }
    return m;
}

}  // namespace detail

inline PredictionVector predict_confidences(const TrainedClassifier& model,
                                            std::span<const double> features) {
    return PredictionVector{detail::softmax(model.logits(features))};
}

/// Argmax of a confidence vector; exact ties resolve to the lowest index.
inline int argmax_index(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline int predict_label(const TrainedClassifier& model, std::span<const double> features) {
    const PredictionVector p = predict_confidences(model, features);
    return model.class_labels[argmax_index(p.confidences)];
}

/// -log p[true_class], probability floored at 1e-12 before the log.
inline double cross_entropy(const PredictionVector& pred, int true_class) {
    require(true_class >= 0 && true_class < static_cast<int>(pred.n_classes()),
            "cross_entropy: class index out of range");
    return -std::log(std::max(pred.confidences[true_class], 1e-12));
}

// ---------------------------------------------------------------------------
// Training objective (shared by the SGD loop and the gradient check)
// ---------------------------------------------------------------------------

/// The objective SGD descends on a batch: mean cross-entropy plus
/// (weight_decay / 2) * sum of squared weight-matrix entries. Biases are not
/// decayed. Dropout is off here.
inline double training_loss(const TrainedClassifier& model,
                            const std::vector<std::vector<double>>& xs,
                            const std::vector<int>& truths, double weight_decay) {
    require(xs.size() == truths.size() && !xs.empty(), "training_loss: bad batch");
    double loss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const PredictionVector p = predict_confidences(model, xs[i]);
        loss += -std::log(std::max(p.confidences[truths[i]], 1e-300));
    }
    loss /= static_cast<double>(xs.size());
    double reg = 0.0;
    for (const Matrix& W : model.weights)
        for (double w : W.a) reg += w * w;
    return loss + 0.5 * weight_decay * reg;
}

/// Analytic gradient of training_loss. The same backward pass the SGD loop
/// uses, with dropout off.
inline void training_gradient(const TrainedClassifier& model,
                              const std::vector<std::vector<double>>& xs,
                              const std::vector<int>& truths, double weight_decay,
                              std::vector<Matrix>& gW, std::vector<std::vector<double>>& gb) {
    require(xs.size() == truths.size() && !xs.empty(), "training_gradient: bad batch");
    gW.clear();
    gb.clear();
    for (const Matrix& W : model.weights) {
        gW.emplace_back(W.rows, W.cols);
        gb.emplace_back(W.rows, 0.0);
    }
    std::vector<std::vector<double>> acts, masks;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        detail::forward_cached(model, xs[i], 0.0, nullptr, acts, masks);
        detail::backward_accumulate(model, acts, masks, truths[i], gW, gb);
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (std::size_t l = 0; l < gW.size(); ++l) {
        for (std::size_t k = 0; k < gW[l].a.size(); ++k)
            gW[l].a[k] = gW[l].a[k] * inv + weight_decay * model.weights[l].a[k];
        for (double& g : gb[l]) g *= inv;
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

/// Mean cross-entropy and accuracy over a dataset (dropout off).
inline std::pair<double, double> dataset_loss_acc(const TrainedClassifier& m, const Dataset& ds) {
    double loss = 0.0;
    std::size_t correct = 0;
    for (const Sample& s : ds) {
        const PredictionVector p = predict_confidences(m, s.features);
        const int truth = class_index_of(m, s.individual_id);
        require(truth >= 0, "dataset contains identity unknown to the classifier");
        loss += cross_entropy(p, truth);
        if (m.class_labels[argmax_index(p.confidences)] == s.individual_id) ++correct;
    }
    return {loss / ds.size(), static_cast<double>(correct) / ds.size()};
}

}  // namespace detail

/// Mini-batch SGD with cross-entropy loss plus L2 weight decay on the weight
/// matrices; inverted dropout on hidden activations at training time only.
/// Bit-deterministic for a fixed config seed. The observer, when given, sees
/// the model at each epoch boundary (including epoch 0, the initialization).
inline TrainedClassifier train_classifier(
    const Dataset& train, const Dataset& val, const ClassifierSpec& spec, const TrainConfig& config,
    const std::function<void(int, const TrainedClassifier&)>& epoch_observer = nullptr) {
    config.validate();
    require(!train.empty(), "train_classifier: empty training set");
    require(spec.layer_widths.size() >= 2, "train_classifier: spec needs at least two layers");
    require(train.feature_dim() == static_cast<std::size_t>(spec.input_dim()),
            "train_classifier: feature dim does not match spec");

    const std::vector<int> labels = train.identities();
    require(static_cast<int>(labels.size()) == spec.n_classes(),
            "train_classifier: spec class count (" + std::to_string(spec.n_classes()) +
                ") != training identities (" + std::to_string(labels.size()) + ")");
    if (!val.empty()) {
        require(val.feature_dim() == train.feature_dim(),
                "train_classifier: val feature dim mismatch");
        for (int id : val.identities())
            require(std::binary_search(labels.begin(), labels.end(), id),
                    "train_classifier: val identity " + std::to_string(id) + " absent from train");
    }

    TrainedClassifier model = detail::init_classifier(spec, labels, config.seed);
    if (epoch_observer) epoch_observer(0, model);

    const std::size_t n = train.size();
    std::vector<int> truth(n);
    for (std::size_t i = 0; i < n; ++i)
        truth[i] = detail::class_index_of(model, train[i].individual_id);

    Rng batch_rng(derive_seed(config.seed, "batches"));
    Rng dropout_rng(derive_seed(config.seed, "dropout"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    const std::size_t L = model.n_layers();
    std::vector<std::vector<double>> acts, masks;
    std::vector<Matrix> gW;
    std::vector<std::vector<double>> gb;
    for (std::size_t l = 0; l < L; ++l) {
        gW.emplace_back(model.weights[l].rows, model.weights[l].cols);
        gb.emplace_back(model.weights[l].rows, 0.0);
    }

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        batch_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bsz = std::min<std::size_t>(config.batch_size, n - start);
            for (std::size_t l = 0; l < L; ++l) {
                std::fill(gW[l].a.begin(), gW[l].a.end(), 0.0);
                std::fill(gb[l].begin(), gb[l].end(), 0.0);
            }
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const Sample& s = train[order[start + bi]];
                detail::forward_cached(model, s.features, config.dropout_rate, &dropout_rng, acts,
                                       masks);
                detail::backward_accumulate(model, acts, masks, truth[order[start + bi]], gW, gb);
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            for (std::size_t l = 0; l < L; ++l) {
                Matrix& W = model.weights[l];
                for (std::size_t k = 0; k < W.a.size(); ++k)
                    W.a[k] -=
                        config.learning_rate * (gW[l].a[k] * inv + config.weight_decay * W.a[k]);
                for (std::size_t r = 0; r < W.rows; ++r)
                    model.biases[l][r] -= config.learning_rate * gb[l][r] * inv;
            }
        }
        EpochStats st;
        st.epoch = epoch;
        std::tie(st.train_loss, st.train_accuracy) = detail::dataset_loss_acc(model, train);
        if (!val.empty())
            std::tie(st.val_loss, st.val_accuracy) = detail::dataset_loss_acc(model, val);
        model.history.push_back(st);
        if (epoch_observer) epoch_observer(epoch, model);
    }
    return model;
}

/// Fraction of samples whose predicted label matches individual_id.
inline double accuracy(const TrainedClassifier& model, const Dataset& dataset) {
    require(!dataset.empty(), "accuracy: empty dataset");
    std::size_t correct = 0;
    for (const Sample& s : dataset)
        if (predict_label(model, s.features) == s.individual_id) ++correct;
    return static_cast<double>(correct) / dataset.size();
}

/// Training accuracy minus test accuracy; may be negative.
inline double overfitting_level(const TrainedClassifier& model, const Dataset& train,
                                const Dataset& test) {
    return accuracy(model, train) - accuracy(model, test);
}

// ---------------------------------------------------------------------------
// Checkpoint (single JSON document, full decimal precision)
// ---------------------------------------------------------------------------

inline nlohmann::json classifier_to_json(const TrainedClassifier& m) {
    nlohmann::json j;
    j["layer_widths"] = m.spec.layer_widths;
    j["class_labels"] = m.class_labels;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        nlohmann::json layer;
        layer["rows"] = m.weights[l].rows;
        layer["cols"] = m.weights[l].cols;
        layer["w"] = m.weights[l].a;
        layer["b"] = m.biases[l];
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochStats& e : m.history)
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"val_loss", e.val_loss},
                        {"val_accuracy", e.val_accuracy}});
    j["history"] = std::move(hist);
    return j;
}

inline TrainedClassifier classifier_from_json(const nlohmann::json& j) {
    TrainedClassifier m;
    try {
        m.spec.layer_widths = j.at("layer_widths").get<std::vector<int>>();
        m.class_labels = j.at("class_labels").get<std::vector<int>>();
        for (const auto& layer : j.at("layers")) {
            Matrix W(layer.at("rows").get<std::size_t>(), layer.at("cols").get<std::size_t>());
            W.a = layer.at("w").get<std::vector<double>>();
            if (W.a.size() != W.rows * W.cols) throw FormatError("checkpoint: weight size mismatch");
            m.weights.push_back(std::move(W));
            m.biases.push_back(layer.at("b").get<std::vector<double>>());
        }
        for (const auto& e : j.value("history", nlohmann::json::array())) {
            EpochStats st;
            st.epoch = e.value("epoch", 0);
            st.train_loss = e.value("train_loss", 0.0);
            st.train_accuracy = e.value("train_accuracy", 0.0);
            st.val_loss = e.value("val_loss", 0.0);
            st.val_accuracy = e.value("val_accuracy", 0.0);
            m.history.push_back(st);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad JSON: ") + e.what());
    }
    require(m.weights.size() + 1 == m.spec.layer_widths.size(), "checkpoint: layer count mismatch");
    for (const Matrix& W : m.weights)
        for (double w : W.a)
            if (!std::isfinite(w)) throw FormatError("checkpoint: non-finite weight");
    std::set<int> uniq(m.class_labels.begin(), m.class_labels.end());
    if (uniq.size() != m.class_labels.size()) throw FormatError("checkpoint: duplicate class labels");
    return m;
}

inline void save_classifier(const TrainedClassifier& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_classifier: cannot open '" + path + "'");
    f << classifier_to_json(m).dump(2) << "\n";
}

inline TrainedClassifier load_classifier(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_classifier: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_classifier: bad JSON in '" + path + "': " + e.what());
    }
    return classifier_from_json(j);
}

}  // namespace mia
