#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mia/evaluation.hpp"

namespace mia {

// ---------------------------------------------------------------------------
// Experiment configuration (single JSON document; CLI flags override fields)
// ---------------------------------------------------------------------------

struct SyntheticParams {
    int n_individuals = 60;
    int samples_per_id = 75;
    int feature_dim = 64;
    double intra_class_noise = 0.25;
};

struct ExperimentConfig {
    nlohmann::json raw;  // canonical source of truth; fingerprinted as-is

    std::uint64_t seed = 0;

    // dataset source (exactly one)
    enum class Source { Synthetic, File, Records } source = Source::Synthetic;
    SyntheticParams synthetic;
    std::string dataset_path;           // Source::File
    std::string attack_records_path;    // Source::Records
    std::string eval_records_path;      // Source::Records
    std::vector<Augmentation> augment_kinds;
    std::optional<ImageShape> augment_shape;

    int samples_per_id_per_portion = 25;

    std::vector<int> target_hidden = {128, 64};
    TrainConfig target_train;

    AttackStrategy method = AttackStrategy::Yeom;
    BoundarySearchConfig boundary;
    TrainConfig salem_train;
    std::optional<std::string> cross_nonmembers_path;      // §-cross: non-member dataset file
    std::optional<SyntheticParams> cross_nonmembers_synth; // or synthetic params
    std::uint64_t cross_nonmembers_seed = 0;
    std::optional<std::vector<int>> surrogate_hidden;      // cross-architecture attack side

    bool ensemble_enabled = false;
    int ensemble_subsets = 1;
    bool ensemble_singleton = false;
    int ensemble_k = 1;

    int histogram_bins = 30;
    double histogram_epsilon = 1e-9;

    bool epoch_study_enabled = false;
    std::vector<int> epoch_checkpoints;
    AttackStrategy epoch_strategy = AttackStrategy::Yeom;
    std::optional<int> epoch_epochs;  // overrides target epochs for the study
};

namespace detail {

inline TrainConfig train_config_from_json(const nlohmann::json& j, std::uint64_t seed) {
    std::string preset = j.value("preset", std::string("custom"));
    TrainConfig cfg;
    if (preset == "overfitting") cfg = TrainConfig::overfitting(seed);
    else if (preset == "no-overfitting" || preset == "no_overfitting")
        cfg = TrainConfig::no_overfitting(seed);
    else if (preset == "custom") cfg.seed = seed;
    else throw ContractError("config: unknown preset '" + preset + "'");
    if (j.contains("learning_rate")) { cfg.learning_rate = j.at("learning_rate").get<double>(); cfg.preset = TrainPreset::Custom; }
    if (j.contains("weight_decay")) { cfg.weight_decay = j.at("weight_decay").get<double>(); cfg.preset = TrainPreset::Custom; }
    if (j.contains("dropout_rate")) { cfg.dropout_rate = j.at("dropout_rate").get<double>(); cfg.preset = TrainPreset::Custom; }
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    cfg.validate();
    return cfg;
}

inline SyntheticParams synthetic_from_json(const nlohmann::json& j) {
    SyntheticParams p;
    p.n_individuals = j.value("n_individuals", p.n_individuals);
    p.samples_per_id = j.value("samples_per_id", p.samples_per_id);
    p.feature_dim = j.value("feature_dim", p.feature_dim);
    p.intra_class_noise = j.value("intra_class_noise", p.intra_class_noise);
    return p;
}

inline void check_path_exists(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        throw ContractError("config: " + what + " path '" + path + "' does not exist");
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.raw = j;
    require(j.contains("seed"), "config: 'seed' is mandatory");
    cfg.seed = j.at("seed").get<std::uint64_t>();

    require(j.contains("dataset"), "config: 'dataset' section is mandatory");
    const auto& ds = j.at("dataset");
    const std::string source = ds.value("source", std::string());
    if (source == "synthetic") {
        cfg.source = ExperimentConfig::Source::Synthetic;
        cfg.synthetic = detail::synthetic_from_json(ds);
    } else if (source == "file") {
        cfg.source = ExperimentConfig::Source::File;
        cfg.dataset_path = ds.at("path").get<std::string>();
        detail::check_path_exists(cfg.dataset_path, "dataset");
    } else if (source == "records") {
        cfg.source = ExperimentConfig::Source::Records;
        cfg.attack_records_path = ds.at("attack_records").get<std::string>();
        cfg.eval_records_path = ds.at("eval_records").get<std::string>();
        detail::check_path_exists(cfg.attack_records_path, "attack_records");
        detail::check_path_exists(cfg.eval_records_path, "eval_records");
    } else {
        throw ContractError("config: dataset.source must be one of synthetic|file|records");
    }
    if (ds.contains("augment")) {
        const auto& aug = ds.at("augment");
        for (const auto& k : aug.value("kinds", nlohmann::json::array())) {
            auto kind = augmentation_from_name(k.get<std::string>());
            require(kind.has_value(), "config: unknown augmentation kind '" + k.get<std::string>() + "'");
            cfg.augment_kinds.push_back(*kind);
        }
        if (aug.contains("image_shape")) {
            const auto& sh = aug.at("image_shape");
            cfg.augment_shape = ImageShape{sh.at(0).get<int>(), sh.at(1).get<int>()};
        }
    }

    cfg.samples_per_id_per_portion =
        j.value("split", nlohmann::json::object()).value("samples_per_id_per_portion", 25);

    const auto target = j.value("target", nlohmann::json::object());
    cfg.target_hidden = target.value("hidden_widths", cfg.target_hidden);
    cfg.target_train = detail::train_config_from_json(target, derive_seed(cfg.seed, "target"));

    const auto attack = j.value("attack", nlohmann::json::object());
    cfg.method = strategy_from_name(attack.value("method", std::string("yeom")));
    if (attack.contains("boundary")) cfg.boundary = boundary_config_from_json(attack.at("boundary"));
    cfg.boundary.seed = derive_seed(cfg.seed, "boundary");
    cfg.salem_train = attack.contains("salem")
                          ? detail::train_config_from_json(attack.at("salem"),
                                                           derive_seed(cfg.seed, "salem"))
                          : TrainConfig::overfitting(derive_seed(cfg.seed, "salem"));
    if (attack.contains("nonmembers_dataset")) {
        cfg.cross_nonmembers_path = attack.at("nonmembers_dataset").get<std::string>();
        detail::check_path_exists(*cfg.cross_nonmembers_path, "attack.nonmembers_dataset");
    }
    if (attack.contains("nonmembers_synthetic")) {
        cfg.cross_nonmembers_synth = detail::synthetic_from_json(attack.at("nonmembers_synthetic"));
        cfg.cross_nonmembers_seed = attack.at("nonmembers_synthetic").value("seed", cfg.seed + 1);
    }
    require(!(cfg.cross_nonmembers_path && cfg.cross_nonmembers_synth),
            "config: give at most one of attack.nonmembers_dataset / attack.nonmembers_synthetic");
    if (attack.contains("surrogate_hidden_widths"))
        cfg.surrogate_hidden = attack.at("surrogate_hidden_widths").get<std::vector<int>>();

    if (j.contains("ensemble")) {
        const auto& ens = j.at("ensemble");
        cfg.ensemble_enabled = true;
        cfg.ensemble_singleton = ens.value("singleton", false);
        cfg.ensemble_subsets = ens.value("n_subsets", 1);
        cfg.ensemble_k = ens.value("k", 1);
    }

    const auto ev = j.value("evaluation", nlohmann::json::object());
    cfg.histogram_bins = ev.value("histogram_bins", 30);
    cfg.histogram_epsilon = ev.value("epsilon", 1e-9);

    if (j.contains("epoch_study")) {
        const auto& es = j.at("epoch_study");
        cfg.epoch_study_enabled = true;
        cfg.epoch_checkpoints = es.at("checkpoints").get<std::vector<int>>();
        cfg.epoch_strategy = strategy_from_name(es.value("strategy", std::string("yeom")));
        if (es.contains("epochs")) cfg.epoch_epochs = es.at("epochs").get<int>();
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: bad JSON in '" + path + "': " + e.what());
    }
    return parse_experiment_config(j);
}

/// Content hash of the canonical config serialization: two configs share a
/// fingerprint exactly when their content is identical.
inline std::string config_fingerprint(const ExperimentConfig& cfg) {
    const std::string canonical = cfg.raw.dump();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return buf;
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Writes via a temp file and rename, so a failed stage leaves no partial
/// artifact behind.
inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw FormatError("cannot open '" + tmp + "' for writing");
        f << content;
        if (!f.good()) throw FormatError("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_json_atomic(const std::string& path, const nlohmann::json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad JSON in '" + path + "': " + e.what());
    }
    return j;
}

inline nlohmann::json metrics_to_json(const AttackMetrics& m) {
    nlohmann::json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["accuracy"] = m.accuracy;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["fpr"] = m.fpr;
    j["tpr"] = m.tpr;
    if (std::isnan(m.auc)) j["auc"] = nullptr;
    else j["auc"] = m.auc;
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Runs the experiment stages against one output directory. Stages may run
/// in one process or as separate CLI invocations; both paths produce the
/// same artifacts because every stage reads its inputs from the directory
/// when they are not already in memory, and all randomness is derived from
/// the config seed.
class Pipeline {
public:
    Pipeline(ExperimentConfig config, std::string out_dir)
        : cfg_(std::move(config)), out_(std::move(out_dir)) {
        std::filesystem::create_directories(out_);
    }

    const ExperimentConfig& config() const { return cfg_; }
    std::string path(const std::string& name) const { return out_ + "/" + name; }

    // -- stage: synth -------------------------------------------------------
    void run_synth() {
        timed("synth", [&] {
            require(cfg_.source != ExperimentConfig::Source::Records,
                    "synth: record-based configs have no dataset stage");
            const Dataset& ds = dataset();
            save_dataset(ds, path("dataset.csv"));
        });
    }

    // -- stage: split -------------------------------------------------------
    void run_split() {
        timed("split", [&] {
            const ExperimentSplits& sp = splits();
            detail::write_json_atomic(path("splits.json"), splits_manifest(sp));
        });
    }

    // -- stage: train-target ------------------------------------------------
    void run_train_target() {
        timed("train-target", [&] {
            const TrainedClassifier& model = target();
            save_classifier(model, path("target_model.json"));
        });
    }

    // -- stage: attack (build records / distances, calibrate, save artifact)
    void run_attack() {
        timed("attack", [&] {
            const std::string method = strategy_name(cfg_.method);
            nlohmann::json artifact;
            switch (cfg_.method) {
                case AttackStrategy::Yeom:
                    artifact = to_json(train_yeom(calibration_records()));
                    break;
                case AttackStrategy::Salem:
                    artifact = to_json(train_salem(calibration_records(), cfg_.salem_train));
                    break;
                case AttackStrategy::LabelOnly: {
                    std::vector<std::pair<double, int>> d;
                    for (const auto& [sid, dist] : calibration_distances())
                        d.emplace_back(dist.first, dist.second);
                    artifact = to_json(calibrate_label_only(d, cfg_.boundary));
                    break;
                }
            }
            detail::write_json_atomic(path("attack_" + method + ".json"), artifact);
        });
    }

    // -- stage: eval ---------------------------------------------------------
    AttackMetrics run_eval() {
        AttackMetrics metrics;
        timed("eval", [&] {
            const std::string method = strategy_name(cfg_.method);
            const nlohmann::json artifact = detail::read_json(path("attack_" + method + ".json"));

            struct Row {
                std::string sample_id;
                double score;
                int decision;
                int truth;
            };
            std::vector<Row> rows;
            ScoreOrientation orientation = ScoreOrientation::LowerIsMember;

            switch (cfg_.method) {
                case AttackStrategy::Yeom: {
                    const MetricAttack attack = metric_attack_from_json(artifact);
                    for (const PredictionRecord& r : eval_records()) {
                        const double s = yeom_score(r);
                        rows.push_back({r.sample_id, s, yeom_decide(s, attack.tau) ? 1 : 0,
                                        r.membership == Membership::Member ? 1 : 0});
                    }
                    orientation = ScoreOrientation::LowerIsMember;
                    break;
                }
                case AttackStrategy::Salem: {
                    const SalemAttack attack = salem_attack_from_json(artifact);
                    for (const PredictionRecord& r : eval_records()) {
                        const double s = attack.member_confidence(r.prediction);
                        rows.push_back({r.sample_id, s, s >= 0.5 ? 1 : 0,
                                        r.membership == Membership::Member ? 1 : 0});
                    }
                    orientation = ScoreOrientation::HigherIsMember;
                    break;
                }
                case AttackStrategy::LabelOnly: {
                    const LabelOnlyAttack attack = label_only_attack_from_json(artifact);
                    for (const auto& [sid, dist] : eval_distances())
                        rows.push_back({sid, dist.first,
                                        label_only_decide(dist.first, attack.tau_d) ? 1 : 0,
                                        dist.second});
                    orientation = ScoreOrientation::HigherIsMember;
                    break;
                }
            }

            std::vector<std::pair<int, int>> decisions;
            std::vector<std::pair<double, int>> scores;
            for (const Row& r : rows) {
                decisions.emplace_back(r.decision, r.truth);
                if (std::isfinite(r.score)) scores.emplace_back(r.score, r.truth);
            }
            metrics = evaluate_decisions(decisions);
            RocCurve roc;
            if (!scores.empty()) {
                roc = roc_sweep(scores, orientation);
                metrics.auc = roc.auc;
            }

            std::ostringstream dec_csv;
            dec_csv << "sample_id,score,decision,truth\n";
            for (const Row& r : rows)
                dec_csv << r.sample_id << "," << detail::format_double(r.score) << ","
                        << r.decision << "," << r.truth << "\n";
            detail::write_text_atomic(path("decisions_" + method + ".csv"), dec_csv.str());

            std::ostringstream roc_csv;
            roc_csv << "tau,tpr,fpr\n";
            for (const RocPoint& p : roc.points)
                roc_csv << detail::format_double(p.tau) << "," << detail::format_double(p.tpr)
                        << "," << detail::format_double(p.fpr) << "\n";
            detail::write_text_atomic(path("roc_" + method + ".csv"), roc_csv.str());

            nlohmann::json mj = detail::metrics_to_json(metrics);
            mj["method"] = method;
            mj["fingerprint"] = config_fingerprint(cfg_);
            mj["seed"] = cfg_.seed;
            detail::write_json_atomic(path("metrics_" + method + ".json"), mj);
        });
        return metrics;
    }

    // -- stage: ensemble ------------------------------------------------------
    AttackMetrics run_ensemble() {
        AttackMetrics metrics;
        timed("ensemble", [&] {
            require(cfg_.source != ExperimentConfig::Source::Records,
                    "ensemble: needs identity-level splits, not raw records");
            const ExperimentSplits& sp = splits();
            std::vector<int> member_ids = sp.attack_member.identities();
            const int n_subsets = cfg_.ensemble_singleton
                                      ? static_cast<int>(member_ids.size())
                                      : cfg_.ensemble_subsets;
            EnsemblePlan plan = partition_identities(member_ids, n_subsets,
                                                     derive_seed(cfg_.seed, "ensemble"));

            EnsembleTrainOptions opts;
            opts.salem_config = cfg_.salem_train;
            opts.boundary = cfg_.boundary;
            opts.vote_k = cfg_.ensemble_k;

            const EnsembleAttack ens = train_ensemble(
                attack_samples(sp.attack_member, Membership::Member, calibration_model()),
                attack_samples(attack_nonmember_set(), Membership::NonMember, calibration_model()),
                plan, cfg_.method, opts);

            const std::vector<AttackSample> eval_m =
                attack_samples(sp.eval_member, Membership::Member, target());
            const std::vector<AttackSample> eval_n =
                attack_samples(sp.eval_nonmember, Membership::NonMember, target());

            std::vector<std::pair<int, int>> decisions;
            std::ostringstream votes_csv;
            votes_csv << "sample_id";
            for (std::size_t i = 0; i < ens.size(); ++i) votes_csv << ",vote" << i;
            votes_csv << ",decision,truth\n";
            auto run_side = [&](const std::vector<AttackSample>& side,
                                const Dataset& ds, int truth) {
                for (std::size_t i = 0; i < side.size(); ++i) {
                    const EnsembleDecision d = ensemble_decide(ens, side[i].query);
                    decisions.emplace_back(d.member ? 1 : 0, truth);
                    votes_csv << ds[i].sample_id;
                    for (bool v : d.votes) votes_csv << "," << (v ? 1 : 0);
                    votes_csv << "," << (d.member ? 1 : 0) << "," << truth << "\n";
                }
            };
            run_side(eval_m, sp.eval_member, 1);
            run_side(eval_n, sp.eval_nonmember, 0);
            metrics = evaluate_decisions(decisions);

            nlohmann::json manifest;
            manifest["strategy"] = strategy_name(cfg_.method);
            manifest["k"] = cfg_.ensemble_k;
            manifest["plan"] = to_json(ens.plan);
            nlohmann::json subs = nlohmann::json::array();
            for (std::size_t i = 0; i < ens.size(); ++i) {
                char name[48];
                std::snprintf(name, sizeof(name), "ensemble_sub_%03zu.json", i);
                detail::write_json_atomic(path(name), sub_model_to_json(ens, i));
                subs.push_back(name);
            }
            manifest["sub_models"] = subs;
            detail::write_json_atomic(path("ensemble_manifest.json"), manifest);
            detail::write_text_atomic(path("votes.csv"), votes_csv.str());

            nlohmann::json mj = detail::metrics_to_json(metrics);
            mj["method"] = std::string("ensemble-") + strategy_name(cfg_.method);
            mj["n_subsets"] = n_subsets;
            mj["k"] = cfg_.ensemble_k;
            mj["fingerprint"] = config_fingerprint(cfg_);
            mj["seed"] = cfg_.seed;
            detail::write_json_atomic(path("metrics_ensemble.json"), mj);
        });
        return metrics;
    }

    // -- stage: epoch-study ----------------------------------------------------
    void run_epoch_study() {
        timed("epoch-study", [&] {
            require(cfg_.epoch_study_enabled, "epoch-study: config has no epoch_study section");
            require(cfg_.source != ExperimentConfig::Source::Records,
                    "epoch-study: needs a trainable dataset source");
            EpochStudyOptions opt;
            opt.strategy = cfg_.epoch_strategy;
            opt.histogram_bins = cfg_.histogram_bins;
            opt.epsilon = cfg_.histogram_epsilon;
            opt.salem_config = cfg_.salem_train;
            opt.boundary = cfg_.boundary;
            TrainConfig tc = cfg_.target_train;
            if (cfg_.epoch_epochs) tc.epochs = *cfg_.epoch_epochs;
            const ClassifierSpec spec = target_spec();
            const std::vector<EpochStudyRow> rows =
                epoch_study(splits(), spec, tc, cfg_.epoch_checkpoints, opt);
            std::ostringstream csv;
            csv << "epoch,overfit,kl,attack_acc\n";
            for (const EpochStudyRow& r : rows)
                csv << r.epoch << "," << detail::format_double(r.overfitting) << ","
                    << detail::format_double(r.kl) << ","
                    << detail::format_double(r.attack_accuracy) << "\n";
            detail::write_text_atomic(path("epoch_study.csv"), csv.str());
        });
    }

    // -- stage: report -----------------------------------------------------------
    nlohmann::json run_report() {
        nlohmann::json report;
        report["fingerprint"] = config_fingerprint(cfg_);
        report["seed"] = cfg_.seed;
        report["config"] = cfg_.raw;
        nlohmann::json artifacts = nlohmann::json::object();
        nlohmann::json metrics = nlohmann::json::object();
        for (const auto& entry : std::filesystem::directory_iterator(out_)) {
            const std::string name = entry.path().filename().string();
            if (name == "run_report.json" || name == "timings.json") continue;
            artifacts[name] = name;
            if (name.rfind("metrics_", 0) == 0) {
                nlohmann::json m = detail::read_json(entry.path().string());
                metrics[m.value("method", name)] = m;
            }
        }
        report["artifacts"] = artifacts;
        report["metrics"] = metrics;
        detail::write_json_atomic(path("run_report.json"), report);
        return report;
    }

    /// Full in-process run: synth -> split -> train -> attack -> eval, plus
    /// the optional ensemble and epoch-study stages, then the report.
    nlohmann::json run_all() {
        if (cfg_.source != ExperimentConfig::Source::Records) {
            run_synth();
            run_split();
            run_train_target();
        }
        run_attack();
        run_eval();
        if (cfg_.ensemble_enabled) run_ensemble();
        if (cfg_.epoch_study_enabled) run_epoch_study();
        return run_report();
    }

    // -- lazily materialized inputs ------------------------------------------

    const Dataset& dataset() {
        if (!dataset_) {
            switch (cfg_.source) {
                case ExperimentConfig::Source::Synthetic: {
                    Dataset ds = generate_synthetic_population(
                        cfg_.synthetic.n_individuals, cfg_.synthetic.samples_per_id,
                        cfg_.synthetic.feature_dim, cfg_.synthetic.intra_class_noise,
                        derive_seed(cfg_.seed, "population"));
                    if (!cfg_.augment_kinds.empty())
                        ds = augment_dataset(ds, cfg_.augment_shape, cfg_.augment_kinds,
                                             derive_seed(cfg_.seed, "augment"));
                    dataset_ = std::move(ds);
                    break;
                }
                case ExperimentConfig::Source::File:
                    dataset_ = load_dataset(cfg_.dataset_path);
                    break;
                case ExperimentConfig::Source::Records:
                    throw ContractError("record-based configs have no sample dataset");
            }
        }
        return *dataset_;
    }

    const ExperimentSplits& splits() {
        if (!splits_) {
            if (std::filesystem::exists(path("splits.json")))
                splits_ = load_splits(dataset(), path("splits.json"));
            else
                splits_ = make_splits(dataset(), cfg_.samples_per_id_per_portion,
                                      derive_seed(cfg_.seed, "split"));
        }
        return *splits_;
    }

    ClassifierSpec target_spec() {
        const ExperimentSplits& sp = splits();
        return make_spec(static_cast<int>(sp.target_train.feature_dim()), cfg_.target_hidden,
                         static_cast<int>(sp.target_train.identities().size()));
    }

    const TrainedClassifier& target() {
        if (!target_) {
            if (std::filesystem::exists(path("target_model.json")))
                target_ = load_classifier(path("target_model.json"));
            else
                target_ = train_classifier(splits().target_train, splits().target_val,
                                           target_spec(), cfg_.target_train);
        }
        return *target_;
    }

    /// The model the attack calibrates against: the target itself, or a
    /// surrogate with its own architecture trained on the attack members
    /// (the cross-architecture setting).
    const TrainedClassifier& calibration_model() {
        if (!cfg_.surrogate_hidden) return target();
        if (!surrogate_) {
            const ExperimentSplits& sp = splits();
            const ClassifierSpec spec =
                make_spec(static_cast<int>(sp.attack_member.feature_dim()), *cfg_.surrogate_hidden,
                          static_cast<int>(sp.attack_member.identities().size()));
            TrainConfig tc = cfg_.target_train;
            tc.seed = derive_seed(cfg_.seed, "surrogate");
            surrogate_ = train_classifier(sp.attack_member, Dataset{}, spec, tc);
        }
        return *surrogate_;
    }

    /// Attack-side non-members: the split's ID2 set by default, or a
    /// cross-distribution replacement of equal size.
    const Dataset& attack_nonmember_set() {
        if (!attack_nonmembers_) {
            const ExperimentSplits& sp = splits();
            if (!cfg_.cross_nonmembers_path && !cfg_.cross_nonmembers_synth) {
                attack_nonmembers_ = sp.attack_nonmember;
            } else {
                Dataset pool = cfg_.cross_nonmembers_path
                                   ? load_dataset(*cfg_.cross_nonmembers_path)
                                   : generate_synthetic_population(
                                         cfg_.cross_nonmembers_synth->n_individuals,
                                         cfg_.cross_nonmembers_synth->samples_per_id,
                                         cfg_.cross_nonmembers_synth->feature_dim,
                                         cfg_.cross_nonmembers_synth->intra_class_noise,
                                         cfg_.cross_nonmembers_seed);
                require(pool.size() >= sp.attack_member.size(),
                        "cross-distribution non-member pool smaller than the member set");
                require(pool.feature_dim() == sp.attack_member.feature_dim(),
                        "cross-distribution non-member pool has a different feature dimension");
                std::vector<std::size_t> idx(pool.size());
                std::iota(idx.begin(), idx.end(), 0);
                Rng rng(derive_seed(cfg_.seed, "cross-nonmembers"));
                rng.shuffle(idx);
                std::vector<Sample> chosen;
                chosen.reserve(sp.attack_member.size());
                for (std::size_t i = 0; i < sp.attack_member.size(); ++i)
                    chosen.push_back(pool[idx[i]]);
                attack_nonmembers_ = Dataset(std::move(chosen));
            }
        }
        return *attack_nonmembers_;
    }

    /// Calibration records: target (or surrogate) outputs for the balanced
    /// attack member/non-member sets, or the imported records file.
    const std::vector<PredictionRecord>& calibration_records() {
        if (!cal_records_) {
            if (cfg_.source == ExperimentConfig::Source::Records) {
                std::vector<PredictionRecord> recs =
                    import_prediction_records(cfg_.attack_records_path);
                for (const PredictionRecord& r : recs)
                    require(r.membership != Membership::Unknown,
                            "attack records must carry membership labels");
                cal_records_ = std::move(recs);
            } else {
                cal_records_ = build_attack_training_set(calibration_model(), splits().attack_member,
                                                         attack_nonmember_set());
            }
        }
        return *cal_records_;
    }

    const std::vector<PredictionRecord>& eval_records() {
        if (!eval_records_) {
            if (cfg_.source == ExperimentConfig::Source::Records) {
                std::vector<PredictionRecord> recs =
                    import_prediction_records(cfg_.eval_records_path);
                for (const PredictionRecord& r : recs)
                    require(r.membership != Membership::Unknown,
                            "eval records must carry membership labels");
                eval_records_ = std::move(recs);
            } else {
                eval_records_ = build_attack_training_set(target(), splits().eval_member,
                                                          splits().eval_nonmember);
            }
        }
        return *eval_records_;
    }

    // Boundary distances keyed by sample_id, cached on disk so the ensemble
    // stage and repeated evaluations reuse them. Values are deterministic
    // (the per-sample seed is derived from the sample_id), so cache reuse
    // never changes results.
    using DistanceMap = std::map<std::string, std::pair<double, int>>;  // id -> (distance, truth)

    const DistanceMap& calibration_distances() {
        if (!cal_dist_) {
            require(cfg_.source != ExperimentConfig::Source::Records,
                    "label-only attacks need feature access, not imported records");
            cal_dist_ = load_or_compute_distances("distances_calibration.csv", calibration_model(),
                                                  splits().attack_member, attack_nonmember_set());
        }
        return *cal_dist_;
    }

    const DistanceMap& eval_distances() {
        if (!eval_dist_) {
            require(cfg_.source != ExperimentConfig::Source::Records,
                    "label-only attacks need feature access, not imported records");
            eval_dist_ = load_or_compute_distances("distances_eval.csv", target(),
                                                   splits().eval_member, splits().eval_nonmember);
        }
        return *eval_dist_;
    }

    const std::map<std::string, double>& timings() const { return timings_; }

private:
    std::vector<AttackSample> attack_samples(const Dataset& ds, Membership membership,
                                             const TrainedClassifier& model) {
        const bool need_distance = cfg_.method == AttackStrategy::LabelOnly;
        if (need_distance) {
            // force both caches; the lookup below resolves each sample's side
            calibration_distances();
            eval_distances();
        }
        std::vector<AttackSample> out;
        out.reserve(ds.size());
        for (const Sample& s : ds) {
            AttackSample a;
            a.individual_id = s.individual_id;
            a.membership = membership;
            a.query.record = make_record(model, s, membership);
            if (need_distance) {
                if (cal_dist_ && cal_dist_->count(s.sample_id))
                    a.query.distance = cal_dist_->at(s.sample_id).first;
                else if (eval_dist_ && eval_dist_->count(s.sample_id))
                    a.query.distance = eval_dist_->at(s.sample_id).first;
                else
                    throw ContractError("no cached distance for sample '" + s.sample_id + "'");
            }
            out.push_back(std::move(a));
        }
        return out;
    }

    DistanceMap load_or_compute_distances(const std::string& cache_name,
                                          const TrainedClassifier& model, const Dataset& members,
                                          const Dataset& nonmembers) {
        const std::string cache = path(cache_name);
        if (std::filesystem::exists(cache)) return load_distances(cache);
        DistanceMap map;
        const LabelOracle oracle = label_oracle(model);
        auto compute = [&](const Dataset& ds, int truth) {
            std::vector<double> d(ds.size());
            parallel_for(ds.size(), [&](std::size_t i) {
                BoundarySearchConfig c = cfg_.boundary;
                c.seed = derive_seed(cfg_.boundary.seed, ds[i].sample_id);
                d[i] = estimate_boundary_distance(oracle, ds[i].features, c);
            });
            for (std::size_t i = 0; i < ds.size(); ++i) map[ds[i].sample_id] = {d[i], truth};
        };
        compute(members, 1);
        compute(nonmembers, 0);
        std::ostringstream csv;
        csv << "sample_id,distance,truth\n";
        for (const auto& [sid, dt] : map)
            csv << sid << "," << detail::format_double(dt.first) << "," << dt.second << "\n";
        detail::write_text_atomic(cache, csv.str());
        return map;
    }

    static DistanceMap load_distances(const std::string& file) {
        std::ifstream f(file, std::ios::binary);
        if (!f) throw FormatError("cannot open '" + file + "'");
        DistanceMap map;
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto fields = detail::split_csv_line(line);
            if (fields.size() != 3) throw FormatError("bad distance cache row in '" + file + "'");
            map[fields[0]] = {std::strtod(fields[1].c_str(), nullptr), std::stoi(fields[2])};
        }
        return map;
    }

    // Times a stage and folds the result into timings.json, so stages run as
    // separate processes still leave one complete record. Timings stay out of
    // run_report.json, keeping reports byte-reproducible.
    template <class F>
    void timed(const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        timings_[stage] = std::chrono::duration<double>(t1 - t0).count();
        nlohmann::json tj = nlohmann::json::object();
        if (std::filesystem::exists(path("timings.json"))) {
            try {
                tj = detail::read_json(path("timings.json"));
            } catch (const FormatError&) {
                tj = nlohmann::json::object();
            }
        }
        if (!tj.contains("stage_seconds") || !tj["stage_seconds"].is_object())
            tj["stage_seconds"] = nlohmann::json::object();
        tj["stage_seconds"][stage] = timings_[stage];
        detail::write_json_atomic(path("timings.json"), tj);
    }

    ExperimentConfig cfg_;
    std::string out_;
    std::optional<Dataset> dataset_;
    std::optional<ExperimentSplits> splits_;
    std::optional<TrainedClassifier> target_;
    std::optional<TrainedClassifier> surrogate_;
    std::optional<Dataset> attack_nonmembers_;
    std::optional<std::vector<PredictionRecord>> cal_records_;
    std::optional<std::vector<PredictionRecord>> eval_records_;
    std::optional<DistanceMap> cal_dist_;
    std::optional<DistanceMap> eval_dist_;
    std::map<std::string, double> timings_;
};

}  // namespace mia
