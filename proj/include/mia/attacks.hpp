#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mia/records.hpp"

namespace mia {

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

struct ThresholdPoint {
    double tau = 0.0;
    double accuracy = 0.0, tpr = 0.0, fpr = 0.0;
};

struct CalibrationResult {
    double tau = 0.0;
    double objective_value = 0.0;
    std::vector<ThresholdPoint> sweep;  // one point per grid value, grid order
};

struct CalibrationObjective {
    enum Kind { Accuracy, FprAtTpr } kind = Accuracy;
    double tpr_target = 0.95;  // only for FprAtTpr

    static CalibrationObjective accuracy() { return {Accuracy, 0.0}; }
    static CalibrationObjective fpr_at_tpr(double target) { return {FprAtTpr, target}; }
};

/// Sweeps the grid over loss-like scores (member iff score <= tau) and
/// returns the tau that maximizes the objective, ties broken by smallest tau,
/// together with the full per-tau sweep. Distance-like scores are calibrated
/// by feeding their negation (see LabelOnlyAttack).
inline CalibrationResult calibrate_threshold(const std::vector<std::pair<double, int>>& scores,
                                             const std::vector<double>& grid,
                                             CalibrationObjective objective = {}) {
    require(!scores.empty(), "calibrate_threshold: no scores");
    require(!grid.empty(), "calibrate_threshold: empty grid");
    std::size_t pos = 0, neg = 0;
    for (const auto& [s, m] : scores) {
        require(m == 0 || m == 1, "calibrate_threshold: membership must be 0 or 1");
        (m == 1 ? pos : neg)++;
    }
    require(pos > 0 && neg > 0, "calibrate_threshold: scores must contain both classes");

    CalibrationResult res;
    res.sweep.reserve(grid.size());
    bool have_best = false;
    double best_obj = 0.0;
    for (double tau : grid) {
        std::size_t tp = 0, fp = 0;
        for (const auto& [s, m] : scores) {
            const bool member = s <= tau;  // boundary counts as member
            if (member && m == 1) ++tp;
            if (member && m == 0) ++fp;
        }
        ThresholdPoint pt;
        pt.tau = tau;
        pt.tpr = static_cast<double>(tp) / pos;
        pt.fpr = static_cast<double>(fp) / neg;
        pt.accuracy = static_cast<double>(tp + (neg - fp)) / scores.size();
        res.sweep.push_back(pt);

        double obj;
        if (objective.kind == CalibrationObjective::Accuracy) {
            obj = pt.accuracy;
        } else {
            // feasible iff TPR meets the target; maximize -FPR among feasible
            if (pt.tpr < objective.tpr_target) continue;
            obj = -pt.fpr;
        }
        if (!have_best || obj > best_obj || (obj == best_obj && tau < res.tau)) {
            have_best = true;
            best_obj = obj;
            res.tau = tau;
            res.objective_value = obj;
        }
    }
    if (!have_best) {
        // FprAtTpr with an unreachable target: fall back to the largest grid
        // tau (most permissive), which maximizes TPR.
        res.tau = *std::max_element(grid.begin(), grid.end());
        res.objective_value = -1.0;
    }
    return res;
}

/// Midpoints between consecutive distinct scores plus below-min/above-max
/// sentinels: the exhaustive decision grid for threshold rules.
inline std::vector<double> make_threshold_grid(const std::vector<std::pair<double, int>>& scores) {
    std::vector<double> u;
    u.reserve(scores.size());
    for (const auto& [s, m] : scores) u.push_back(s);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    std::vector<double> grid;
    grid.reserve(u.size() + 1);
    grid.push_back(u.front() - 1.0);
    for (std::size_t i = 0; i + 1 < u.size(); ++i) grid.push_back(0.5 * (u[i] + u[i + 1]));
    grid.push_back(u.back() + 1.0);
    return grid;
}

// ---------------------------------------------------------------------------
// Metric attack (loss threshold)
// ---------------------------------------------------------------------------

/// Member iff loss <= tau; the boundary counts as member.
inline bool yeom_decide(double loss, double tau) { return loss <= tau; }

/// The metric attack's score: cross-entropy of the prediction against its
/// own predicted class, i.e. -log(max confidence). Unknown individuals have
/// no class index in the target's label space, so the deployable black-box
/// loss is computed against the predicted label for every sample alike.
inline double yeom_score(const PredictionRecord& r) {
    return cross_entropy(r.prediction, r.predicted_label);
}

enum class YeomCalibration { Sweep, MeanTrainLoss };

struct MetricAttack {
    double tau = 0.0;
    std::vector<ThresholdPoint> sweep;  // calibration sweep, for ROC audits

    bool decide(const PredictionRecord& r) const { return yeom_decide(yeom_score(r), tau); }
};

/// Calibrates the loss threshold on labelled records: a grid sweep
/// maximizing accuracy (the default), or the classic mean-member-loss rule
/// (mode MeanTrainLoss).
inline MetricAttack train_yeom(const std::vector<PredictionRecord>& records,
                               YeomCalibration mode = YeomCalibration::Sweep) {
    require(!records.empty(), "train_yeom: no records");
    std::vector<std::pair<double, int>> scores;
    scores.reserve(records.size());
    double member_loss_sum = 0.0;
    std::size_t member_count = 0;
    for (const PredictionRecord& r : records) {
        require(r.membership != Membership::Unknown, "train_yeom: record with unknown membership");
        const double s = yeom_score(r);
        scores.emplace_back(s, static_cast<int>(r.membership));
        if (r.membership == Membership::Member) {
            member_loss_sum += s;
            ++member_count;
        }
    }
    MetricAttack attack;
    const CalibrationResult cal = calibrate_threshold(scores, make_threshold_grid(scores));
    attack.sweep = cal.sweep;
    if (mode == YeomCalibration::Sweep) {
        attack.tau = cal.tau;
    } else {
        require(member_count > 0, "train_yeom: mean-train-loss mode needs member records");
        attack.tau = member_loss_sum / member_count;
    }
    return attack;
}

// ---------------------------------------------------------------------------
// Salem attack (MLP on sorted confidence vectors)
// ---------------------------------------------------------------------------

/// Confidences sorted descending: class-count-agnostic and permutation
/// invariant, which the cross-distribution setting requires.
inline std::vector<double> sorted_confidences(const PredictionVector& p) {
    std::vector<double> v = p.confidences;
    std::sort(v.begin(), v.end(), std::greater<double>());
    return v;
}

struct SalemAttack {
    TrainedClassifier net;  // input = class count, hidden 64/32, 2 outputs

    /// P(member) from the attack net.
    double member_confidence(const PredictionVector& p) const {
        const std::vector<double> x = sorted_confidences(p);
        const PredictionVector out = predict_confidences(net, x);
        return out.confidences[1];  // class_labels = {0,1}; index 1 = member
    }
};

/// Member iff the attack net's member-class confidence >= 0.5.
inline bool salem_decide(const SalemAttack& attack, const PredictionVector& prediction) {
    return attack.member_confidence(prediction) >= 0.5;
}

/// Trains the 64/32/2 perceptron on descending-sorted confidence vectors
/// labelled by membership. Records are sorted by sample_id first, so the
/// result is independent of input order for a fixed seed.
inline SalemAttack train_salem(const std::vector<PredictionRecord>& records,
                               const TrainConfig& config) {
    require(!records.empty(), "train_salem: no records");
    std::size_t members = 0, nonmembers = 0;
    for (const PredictionRecord& r : records) {
        require(r.membership != Membership::Unknown, "train_salem: record with unknown membership");
        (r.membership == Membership::Member ? members : nonmembers)++;
    }
    require(members == nonmembers, "train_salem: records must be balanced (" +
                                       std::to_string(members) + " members vs " +
                                       std::to_string(nonmembers) + " non-members)");

    std::vector<const PredictionRecord*> sorted;
    sorted.reserve(records.size());
    for (const PredictionRecord& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const PredictionRecord* a, const PredictionRecord* b) {
                  return a->sample_id < b->sample_id;
              });

    std::vector<Sample> train_samples;
    train_samples.reserve(sorted.size());
    for (const PredictionRecord* r : sorted) {
        Sample s;
        s.sample_id = r->sample_id;
        s.individual_id = static_cast<int>(r->membership);
        s.features = sorted_confidences(r->prediction);
        s.source = "attack-records";
        train_samples.push_back(std::move(s));
    }
    Dataset train_set(std::move(train_samples));
    const ClassifierSpec spec =
        make_spec(static_cast<int>(train_set.feature_dim()), {64, 32}, 2);
    SalemAttack attack;
    attack.net = train_classifier(train_set, Dataset{}, spec, config);
    return attack;
}

// ---------------------------------------------------------------------------
// Label-only attack (boundary-distance threshold)
// ---------------------------------------------------------------------------

struct BoundarySearchConfig {
    int init_trials = 40;      // noise draws attempted for a misclassified start
    int blend_steps = 20;      // blend-factor grid per noise draw
    int max_iters = 30;        // boundary-walk iterations
    int grad_queries = 100;    // label queries per normal-direction estimate
    double step_init = 1.0;    // geometric step schedule
    double step_decay = 0.5;
    double bin_search_tol = 1e-3;  // relative tolerance for boundary projection
    std::uint64_t seed = 0;

    void validate() const {
        require(init_trials > 0 && blend_steps > 0 && max_iters > 0 && grad_queries > 0,
                "BoundarySearchConfig: counts must be positive");
        require(step_decay > 0.0 && step_decay < 1.0, "BoundarySearchConfig: step_decay in (0,1)");
        require(step_init > 0.0, "BoundarySearchConfig: step_init must be positive");
        require(bin_search_tol > 0.0, "BoundarySearchConfig: tolerance must be positive");
    }
};

/// Black-box label oracle: features -> predicted label.
using LabelOracle = std::function<int(const std::vector<double>&)>;

inline LabelOracle label_oracle(const TrainedClassifier& model) {
    return [&model](const std::vector<double>& x) { return predict_label(model, x); };
}

namespace detail {

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Binary search along [x, hi] for the adversarial point nearest x, to a
/// relative interval tolerance. hi must already be adversarial.
inline std::vector<double> project_to_boundary(const LabelOracle& oracle,
                                               const std::vector<double>& x,
                                               std::vector<double> hi, int orig_label,
                                               double rel_tol) {
    std::vector<double> lo = x;
    std::vector<double> mid(x.size());
    double gap = l2_distance(lo, hi);
    const double scale = std::max(l2_distance(x, hi), 1e-12);
    int guard = 0;
    while (gap > rel_tol * scale && guard++ < 200) {
        for (std::size_t i = 0; i < x.size(); ++i) mid[i] = 0.5 * (lo[i] + hi[i]);
        if (oracle(mid) != orig_label)
            hi = mid;
        else
            lo = mid;
        gap *= 0.5;
    }
    return hi;
}

}  // namespace detail

/// Estimates the L2 distance from x to the target's decision boundary with a
/// HopSkipJump-style walk: (1) find a misclassified start by blending x with
/// uniform noise, (2) binary-search the segment to the boundary, (3) iterate
/// Monte-Carlo normal estimation + geometric stepping + re-projection.
/// Returns +inf when no label flip is found within budget (maximally
/// member-like). When a reference label is given and x is already classified
/// differently, the distance is 0. Deterministic per config seed.
inline double estimate_boundary_distance(const LabelOracle& oracle, const std::vector<double>& x,
                                         const BoundarySearchConfig& config,
                                         std::optional<int> reference_label = std::nullopt) {
    config.validate();
    for (double v : x)
        require(std::isfinite(v), "estimate_boundary_distance: non-finite feature");

    const int orig = oracle(x);
    if (reference_label && orig != *reference_label) return 0.0;

    Rng rng(config.seed);
    const std::size_t dim = x.size();

    // Phase 1: misclassified start from noise blending.
    std::vector<double> start;
    std::vector<double> noise(dim), cand(dim);
    for (int trial = 0; trial < config.init_trials && start.empty(); ++trial) {
        for (double& v : noise) v = rng.uniform01();
        for (int k = 1; k <= config.blend_steps; ++k) {
            const double a = static_cast<double>(k) / config.blend_steps;
            for (std::size_t i = 0; i < dim; ++i) cand[i] = (1.0 - a) * x[i] + a * noise[i];
            if (oracle(cand) != orig) {
                start = cand;
                break;
            }
        }
    }
    if (start.empty()) return std::numeric_limits<double>::infinity();

    // Phase 2: project the start onto the boundary.
    std::vector<double> b =
        detail::project_to_boundary(oracle, x, std::move(start), orig, config.bin_search_tol);

    // Phase 3: walk along the boundary toward x.
    std::vector<double> u(dim), probe(dim), step_cand(dim);
    for (int it = 0; it < config.max_iters; ++it) {
        const double dist = detail::l2_distance(b, x);
        if (dist <= 0.0) break;
        const double delta = std::max(dist / std::sqrt(static_cast<double>(dim)), 1e-9);

        // Monte-Carlo estimate of the boundary normal (into the adversarial
        // side), with baseline subtraction as in HopSkipJump.
        std::vector<double> v(dim, 0.0);
        std::vector<double> signs(config.grad_queries);
        std::vector<std::vector<double>> dirs(config.grad_queries, std::vector<double>(dim));
        double mean_sign = 0.0;
        for (int q = 0; q < config.grad_queries; ++q) {
            double norm = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                u[i] = rng.normal();
                norm += u[i] * u[i];
            }
            norm = std::sqrt(std::max(norm, 1e-30));
            for (std::size_t i = 0; i < dim; ++i) {
                u[i] /= norm;
                probe[i] = b[i] + delta * u[i];
            }
            signs[q] = (oracle(probe) != orig) ? 1.0 : -1.0;
            dirs[q] = u;
            mean_sign += signs[q];
        }
        mean_sign /= config.grad_queries;
        const bool unanimous = std::abs(std::abs(mean_sign) - 1.0) < 1e-12;
        for (int q = 0; q < config.grad_queries; ++q) {
            const double w = unanimous ? signs[q] : (signs[q] - mean_sign);
            for (std::size_t i = 0; i < dim; ++i) v[i] += w * dirs[q][i];
        }
        double vnorm = 0.0;
        for (double vi : v) vnorm += vi * vi;
        vnorm = std::sqrt(vnorm);
        if (vnorm < 1e-12) continue;
        for (double& vi : v) vi /= vnorm;

        // Geometric step into the adversarial side, halved until it lands
        // there, then re-projection toward x.
        double step = config.step_init * std::pow(config.step_decay, it) * dist;
        bool adversarial = false;
        for (int halve = 0; halve < 10; ++halve) {
            for (std::size_t i = 0; i < dim; ++i) step_cand[i] = b[i] + step * v[i];
            if (oracle(step_cand) != orig) {
                adversarial = true;
                break;
            }
            step *= 0.5;
        }
        if (!adversarial) continue;
        std::vector<double> b2 =
            detail::project_to_boundary(oracle, x, step_cand, orig, config.bin_search_tol);
        if (detail::l2_distance(b2, x) < dist) b = std::move(b2);
    }
    return detail::l2_distance(b, x);
}

/// Member iff distance >= tau_d; the +inf sentinel is always a member.
inline bool label_only_decide(double distance, double tau_d) { return distance >= tau_d; }

struct LabelOnlyAttack {
    double tau_d = 0.0;
    BoundarySearchConfig search;

    bool decide(double distance) const { return label_only_decide(distance, tau_d); }
};

/// Calibrates the distance threshold by reusing calibrate_threshold on
/// negated distances (distance is member-like when large, so -distance is a
/// loss-like score). Infinite distances enter the sweep as a finite sentinel
/// beyond the largest observed value.
inline LabelOnlyAttack calibrate_label_only(const std::vector<std::pair<double, int>>& distances,
                                            const BoundarySearchConfig& search) {
    require(!distances.empty(), "calibrate_label_only: no distances");
    double dmax = 1.0;
    for (const auto& [d, m] : distances)
        if (std::isfinite(d)) dmax = std::max(dmax, d);
    std::vector<std::pair<double, int>> scores;
    scores.reserve(distances.size());
    for (const auto& [d, m] : distances)
        scores.emplace_back(std::isfinite(d) ? -d : -10.0 * dmax, m);
    const CalibrationResult cal = calibrate_threshold(scores, make_threshold_grid(scores));
    LabelOnlyAttack attack;
    attack.tau_d = -cal.tau;
    attack.search = search;
    return attack;
}

// ---------------------------------------------------------------------------
// Attack artifact serialization
// ---------------------------------------------------------------------------

inline nlohmann::json sweep_to_json(const std::vector<ThresholdPoint>& sweep) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ThresholdPoint& p : sweep)
        arr.push_back({{"tau", p.tau}, {"accuracy", p.accuracy}, {"tpr", p.tpr}, {"fpr", p.fpr}});
    return arr;
}

inline nlohmann::json to_json(const MetricAttack& a) {
    return {{"method", "yeom"}, {"tau", a.tau}, {"sweep", sweep_to_json(a.sweep)}};
}

inline nlohmann::json to_json(const SalemAttack& a) {
    return {{"method", "salem"}, {"model", classifier_to_json(a.net)}};
}

inline nlohmann::json to_json(const BoundarySearchConfig& c) {
    return {{"init_trials", c.init_trials},   {"blend_steps", c.blend_steps},
            {"max_iters", c.max_iters},       {"grad_queries", c.grad_queries},
            {"step_init", c.step_init},       {"step_decay", c.step_decay},
            {"bin_search_tol", c.bin_search_tol}, {"seed", c.seed}};
}

inline BoundarySearchConfig boundary_config_from_json(const nlohmann::json& j) {
    BoundarySearchConfig c;
    c.init_trials = j.value("init_trials", c.init_trials);
    c.blend_steps = j.value("blend_steps", c.blend_steps);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.grad_queries = j.value("grad_queries", c.grad_queries);
    c.step_init = j.value("step_init", c.step_init);
    c.step_decay = j.value("step_decay", c.step_decay);
    c.bin_search_tol = j.value("bin_search_tol", c.bin_search_tol);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const LabelOnlyAttack& a) {
    return {{"method", "label-only"}, {"tau_d", a.tau_d}, {"search", to_json(a.search)}};
}

inline MetricAttack metric_attack_from_json(const nlohmann::json& j) {
    MetricAttack a;
    try {
        a.tau = j.at("tau").get<double>();
        for (const auto& p : j.value("sweep", nlohmann::json::array()))
            a.sweep.push_back({p.at("tau").get<double>(), p.at("accuracy").get<double>(),
                               p.at("tpr").get<double>(), p.at("fpr").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metric attack artifact: ") + e.what());
    }
    return a;
}

inline SalemAttack salem_attack_from_json(const nlohmann::json& j) {
    SalemAttack a;
    try {
        a.net = classifier_from_json(j.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("salem attack artifact: ") + e.what());
    }
    return a;
}

inline LabelOnlyAttack label_only_attack_from_json(const nlohmann::json& j) {
    LabelOnlyAttack a;
    try {
        a.tau_d = j.at("tau_d").get<double>();
        a.search = boundary_config_from_json(j.at("search"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("label-only attack artifact: ") + e.what());
    }
    return a;
}

}  // namespace mia
