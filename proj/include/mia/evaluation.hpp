#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mia/ensemble.hpp"

namespace mia {

/// Confusion-matrix scores of a membership decision set. Positives are
/// members, so FPR is the fraction of unknown individuals wrongly admitted
/// as known. Counts are exact; ratios are computed at the end, with 0/0 -> 0.
struct AttackMetrics {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    double fpr = 0.0, tpr = 0.0;
    double auc = std::numeric_limits<double>::quiet_NaN();  // set when a score sweep exists
};

/// decisions: (decision, truth) pairs, both in {0,1}.
inline AttackMetrics evaluate_decisions(const std::vector<std::pair<int, int>>& decisions) {
    require(!decisions.empty(), "evaluate_decisions: empty input");
    AttackMetrics m;
    for (const auto& [d, t] : decisions) {
        require((d == 0 || d == 1) && (t == 0 || t == 1),
                "evaluate_decisions: decisions and truths must be 0/1");
        if (d == 1 && t == 1) ++m.tp;
        else if (d == 1 && t == 0) ++m.fp;
        else if (d == 0 && t == 0) ++m.tn;
        else ++m.fn;
    }
    const auto ratio = [](long long num, long long den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    m.accuracy = ratio(m.tp + m.tn, m.tp + m.fp + m.tn + m.fn);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.tpr = m.recall;
    m.fpr = ratio(m.fp, m.fp + m.tn);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

// ---------------------------------------------------------------------------
// ROC sweep
// ---------------------------------------------------------------------------

enum class ScoreOrientation { LowerIsMember, HigherIsMember };

struct RocPoint {
    double tau = 0.0;
    double tpr = 0.0, fpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Sweeps every distinct score value plus +/-inf sentinels and integrates
/// AUC by trapezoid over the (fpr, tpr) polyline. The orientation selects
/// loss-like (lower => member) or distance-like (higher => member) scores.
inline RocCurve roc_sweep(const std::vector<std::pair<double, int>>& scores,
                          ScoreOrientation orientation) {
    require(!scores.empty(), "roc_sweep: empty input");
    long long pos = 0, neg = 0;
    for (const auto& [s, t] : scores) {
        require(t == 0 || t == 1, "roc_sweep: truth must be 0/1");
        (t == 1 ? pos : neg)++;
    }
    require(pos > 0 && neg > 0, "roc_sweep: need both classes");

    std::vector<double> taus;
    taus.reserve(scores.size() + 2);
    taus.push_back(-std::numeric_limits<double>::infinity());
    for (const auto& [s, t] : scores) taus.push_back(s);
    taus.push_back(std::numeric_limits<double>::infinity());
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

    RocCurve curve;
    curve.points.reserve(taus.size());
    for (double tau : taus) {
        long long tp = 0, fp = 0;
        for (const auto& [s, t] : scores) {
            const bool member =
                orientation == ScoreOrientation::LowerIsMember ? (s <= tau) : (s >= tau);
            if (member && t == 1) ++tp;
            if (member && t == 0) ++fp;
        }
        curve.points.push_back(
            {tau, static_cast<double>(tp) / pos, static_cast<double>(fp) / neg});
    }
    // Integrate along increasing FPR.
    std::vector<RocPoint> by_fpr = curve.points;
    std::sort(by_fpr.begin(), by_fpr.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
    });
    double auc = 0.0;
    for (std::size_t i = 1; i < by_fpr.size(); ++i)
        auc += (by_fpr[i].fpr - by_fpr[i - 1].fpr) * 0.5 * (by_fpr[i].tpr + by_fpr[i - 1].tpr);
    curve.auc = auc;
    return curve;
}

// ---------------------------------------------------------------------------
// Score histograms and KL divergence
// ---------------------------------------------------------------------------

/// A normalized, smoothed histogram: every bin strictly positive so it can
/// appear on either side of a KL divergence.
struct ScoreDistribution {
    std::vector<double> bin_edges;      // n_bins + 1 monotone edges
    std::vector<double> probabilities;  // n_bins entries summing to 1
    double epsilon = 0.0;
};

/// Uniform-width bins over `range` (defaults to the min/max of the values);
/// epsilon is added to every bin's probability before renormalizing. Values
/// outside an explicit range are clamped into the edge bins so mass is
/// conserved.
inline ScoreDistribution score_histogram(const std::vector<double>& values, int n_bins,
                                         std::optional<std::pair<double, double>> range,
                                         double epsilon = 1e-9) {
    require(!values.empty(), "score_histogram: empty values");
    require(n_bins >= 2, "score_histogram: need at least 2 bins");
    require(epsilon > 0.0, "score_histogram: epsilon must be positive (KL finiteness)");
    double lo, hi;
    if (range) {
        lo = range->first;
        hi = range->second;
        require(lo < hi, "score_histogram: empty range");
    } else {
        lo = *std::min_element(values.begin(), values.end());
        hi = *std::max_element(values.begin(), values.end());
        if (hi <= lo) hi = lo + 1e-9;
    }
    ScoreDistribution dist;
    dist.epsilon = epsilon;
    dist.bin_edges.resize(n_bins + 1);
    const double w = (hi - lo) / n_bins;
    for (int i = 0; i <= n_bins; ++i) dist.bin_edges[i] = lo + w * i;
    dist.bin_edges.back() = hi;

    std::vector<double> counts(n_bins, 0.0);
    for (double v : values) {
        int bin = static_cast<int>(std::floor((v - lo) / w));
        bin = std::clamp(bin, 0, n_bins - 1);
        counts[bin] += 1.0;
    }
    const double n = static_cast<double>(values.size());
    double total = 0.0;
    dist.probabilities.resize(n_bins);
    for (int i = 0; i < n_bins; ++i) {
        dist.probabilities[i] = counts[i] / n + epsilon;
        total += dist.probabilities[i];
    }
    for (double& p : dist.probabilities) p /= total;
    return dist;
}

/// Shared range for two cohorts so their histograms are comparable.
inline std::pair<double, double> joint_range(const std::vector<double>& a,
                                             const std::vector<double>& b) {
    require(!a.empty() && !b.empty(), "joint_range: empty cohort");
    double lo = std::min(*std::min_element(a.begin(), a.end()),
                         *std::min_element(b.begin(), b.end()));
    double hi = std::max(*std::max_element(a.begin(), a.end()),
                         *std::max_element(b.begin(), b.end()));
    if (hi <= lo) hi = lo + 1e-9;
    return {lo, hi};
}

/// KL(P || Q) = sum P(x) ln(P(x)/Q(x)); terms with P(x)=0 contribute 0.
/// Requires identical bin edges.
inline double kl_divergence(const ScoreDistribution& P, const ScoreDistribution& Q) {
    require(P.bin_edges == Q.bin_edges, "kl_divergence: mismatched bin edges");
    require(P.probabilities.size() == Q.probabilities.size(), "kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < P.probabilities.size(); ++i) {
        const double p = P.probabilities[i];
        if (p <= 0.0) continue;
        const double q = Q.probabilities[i];
        require(q > 0.0, "kl_divergence: zero Q bin (histogram not smoothed?)");
        kl += p * std::log(p / q);
    }
    return kl;
}

/// Spearman rank correlation (average ranks on ties).
inline double spearman_rank_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b) {
    require(a.size() == b.size() && a.size() >= 2, "spearman: need two aligned series");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Epoch study: overfitting level, member/non-member cross-entropy KL and
// attack accuracy per training checkpoint.
// ---------------------------------------------------------------------------

struct EpochStudyRow {
    int epoch = 0;
    double overfitting = 0.0;
    double kl = 0.0;
    double attack_accuracy = 0.0;
};

struct EpochStudyOptions {
    AttackStrategy strategy = AttackStrategy::Yeom;
    int histogram_bins = 30;
    double epsilon = 1e-9;
    TrainConfig salem_config;        // used when strategy == Salem
    BoundarySearchConfig boundary;   // used when strategy == LabelOnly
};

namespace detail {

/// Self cross-entropy (against the predicted class) per sample: the loss a
/// black-box observer can compute for known and unknown individuals alike.
inline std::vector<double> self_cross_entropies(const TrainedClassifier& model,
                                                const Dataset& ds) {
    std::vector<double> out;
    out.reserve(ds.size());
    for (const Sample& s : ds) {
        const PredictionVector p = predict_confidences(model, s.features);
        out.push_back(cross_entropy(p, argmax_index(p.confidences)));
    }
    return out;
}

inline std::vector<double> boundary_distances(const TrainedClassifier& model, const Dataset& ds,
                                              const BoundarySearchConfig& base) {
    std::vector<double> out(ds.size());
    const LabelOracle oracle = label_oracle(model);
    parallel_for(ds.size(), [&](std::size_t i) {
        BoundarySearchConfig cfg = base;
        cfg.seed = derive_seed(base.seed, ds[i].sample_id);
        out[i] = estimate_boundary_distance(oracle, ds[i].features, cfg);
    });
    return out;
}

/// Calibrates the chosen attack on the attack split and scores it on the
/// evaluation split, at a fixed model snapshot.
inline double snapshot_attack_accuracy(const TrainedClassifier& model,
                                       const ExperimentSplits& splits,
                                       const EpochStudyOptions& opt) {
    const std::vector<PredictionRecord> cal =
        build_attack_training_set(model, splits.attack_member, splits.attack_nonmember);
    std::vector<std::pair<int, int>> decisions;
    switch (opt.strategy) {
        case AttackStrategy::Yeom: {
            const MetricAttack attack = train_yeom(cal);
            for (const Sample& s : splits.eval_member)
                decisions.emplace_back(attack.decide(make_record(model, s, Membership::Member)), 1);
            for (const Sample& s : splits.eval_nonmember)
                decisions.emplace_back(attack.decide(make_record(model, s, Membership::NonMember)),
                                       0);
            break;
        }
        case AttackStrategy::Salem: {
            const SalemAttack attack = train_salem(cal, opt.salem_config);
            for (const Sample& s : splits.eval_member)
                decisions.emplace_back(
                    salem_decide(attack, predict_confidences(model, s.features)), 1);
            for (const Sample& s : splits.eval_nonmember)
                decisions.emplace_back(
                    salem_decide(attack, predict_confidences(model, s.features)), 0);
            break;
        }
        case AttackStrategy::LabelOnly: {
            std::vector<std::pair<double, int>> cal_d;
            for (double d : boundary_distances(model, splits.attack_member, opt.boundary))
                cal_d.emplace_back(d, 1);
            for (double d : boundary_distances(model, splits.attack_nonmember, opt.boundary))
                cal_d.emplace_back(d, 0);
            const LabelOnlyAttack attack = calibrate_label_only(cal_d, opt.boundary);
            for (double d : boundary_distances(model, splits.eval_member, opt.boundary))
                decisions.emplace_back(attack.decide(d), 1);
            for (double d : boundary_distances(model, splits.eval_nonmember, opt.boundary))
                decisions.emplace_back(attack.decide(d), 0);
            break;
        }
    }
    return evaluate_decisions(decisions).accuracy;
}

}  // namespace detail

/// Trains once, snapshotting at each checkpoint epoch (0 = initialization);
/// at each snapshot computes the overfitting level, the KL divergence between
/// member and non-member cross-entropy histograms on the evaluation cohorts,
/// and the calibrated attack's accuracy on the evaluation set.
inline std::vector<EpochStudyRow> epoch_study(const ExperimentSplits& splits,
                                              const ClassifierSpec& spec,
                                              const TrainConfig& config,
                                              const std::vector<int>& checkpoints,
                                              const EpochStudyOptions& options = {}) {
    require(!checkpoints.empty(), "epoch_study: no checkpoints");
    for (int cp : checkpoints)
        require(cp >= 0 && cp <= config.epochs,
                "epoch_study: checkpoint " + std::to_string(cp) +
                    " outside configured epochs [0," + std::to_string(config.epochs) + "]");
    std::vector<int> wanted = checkpoints;
    std::sort(wanted.begin(), wanted.end());
    wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());

    std::vector<EpochStudyRow> rows;
    auto observer = [&](int epoch, const TrainedClassifier& snapshot) {
        if (!std::binary_search(wanted.begin(), wanted.end(), epoch)) return;
        EpochStudyRow row;
        row.epoch = epoch;
        row.overfitting = overfitting_level(snapshot, splits.target_train, splits.target_test);
        const std::vector<double> ce_member =
            detail::self_cross_entropies(snapshot, splits.eval_member);
        const std::vector<double> ce_nonmember =
            detail::self_cross_entropies(snapshot, splits.eval_nonmember);
        // Cross-entropy is non-negative; anchoring the shared range at zero
        // keeps the untrained no-signal baseline (all losses equal) inside one
        // common bin instead of amplifying sub-bin noise.
        auto range = joint_range(ce_member, ce_nonmember);
        range.first = 0.0;
        if (range.second <= 0.0) range.second = 1e-9;
        const ScoreDistribution P =
            score_histogram(ce_member, options.histogram_bins, range, options.epsilon);
        const ScoreDistribution Q =
            score_histogram(ce_nonmember, options.histogram_bins, range, options.epsilon);
        row.kl = kl_divergence(P, Q);
        row.attack_accuracy = detail::snapshot_attack_accuracy(snapshot, splits, options);
        rows.push_back(row);
    };
    train_classifier(splits.target_train, splits.target_val, spec, config, observer);
    return rows;
}

}  // namespace mia
