// Command-line driver for the discrimination experiment pipeline.
//
// Subcommands: synth, split, train-target, attack, ensemble, eval,
// epoch-study, report. Every subcommand takes --config/--seed/--out-dir;
// flags override the corresponding config fields one-to-one.
//
// Exit codes: 0 success, 2 config/contract error, 3 data-format error.

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <string>

#include "mia/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& common) {
    cmd->add_option("--config", common.config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out-dir", common.out_dir, "artifact directory");
    cmd->add_option("--seed", common.seed, "override the config seed");
}

nlohmann::json load_raw_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw mia::ContractError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw mia::FormatError("bad JSON in config '" + path + "': " + std::string(e.what()));
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-set discrimination via membership inference"};
    app.require_subcommand(1);

    CommonFlags common;

    auto* synth = app.add_subcommand("synth", "generate the dataset file");
    add_common(synth, common);

    auto* split = app.add_subcommand("split", "write the splits manifest");
    add_common(split, common);

    auto* train = app.add_subcommand("train-target", "train the target classifier");
    add_common(train, common);
    std::string preset;
    std::optional<int> epochs;
    train->add_option("--preset", preset, "overfitting|no-overfitting|custom");
    train->add_option("--epochs", epochs, "override training epochs");

    auto* attack = app.add_subcommand("attack", "build and calibrate the attack");
    add_common(attack, common);
    std::string method;
    std::string attack_nonmembers;
    std::string attack_arch;
    attack->add_option("--method", method, "yeom|salem|label-only");
    attack->add_option("--attack-nonmembers", attack_nonmembers,
                       "dataset file supplying attack-side non-members (cross-distribution)");
    attack->add_option("--attack-arch", attack_arch,
                       "comma-separated hidden widths of a surrogate attack-side model");

    auto* ensemble = app.add_subcommand("ensemble", "train and score the ensemble attack");
    add_common(ensemble, common);
    std::optional<int> subsets;
    bool singleton = false;
    std::optional<int> vote_k;
    ensemble->add_option("--subsets", subsets, "number of disjoint identity subsets");
    ensemble->add_flag("--singleton", singleton, "one attack model per member identity");
    ensemble->add_option("--k", vote_k, "member votes required (1 = at-least-one rule)");
    std::string ens_method;
    ensemble->add_option("--method", ens_method, "yeom|salem|label-only");

    auto* eval = app.add_subcommand("eval", "score the calibrated attack on the evaluation set");
    add_common(eval, common);
    std::string eval_method;
    eval->add_option("--method", eval_method, "yeom|salem|label-only");

    auto* study = app.add_subcommand("epoch-study", "per-epoch overfitting/KL/attack trajectory");
    add_common(study, common);

    auto* report = app.add_subcommand("report", "assemble the run report");
    add_common(report, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        nlohmann::json raw = load_raw_config(common.config_path);
        if (common.seed) raw["seed"] = *common.seed;
        if (app.got_subcommand(train)) {
            if (!preset.empty()) raw["target"]["preset"] = preset;
            if (epochs) raw["target"]["epochs"] = *epochs;
        }
        if (app.got_subcommand(attack)) {
            if (!method.empty()) raw["attack"]["method"] = method;
            if (!attack_nonmembers.empty()) raw["attack"]["nonmembers_dataset"] = attack_nonmembers;
            if (!attack_arch.empty()) {
                std::vector<int> widths;
                std::stringstream ss(attack_arch);
                std::string tok;
                while (std::getline(ss, tok, ','))
                    widths.push_back(std::stoi(tok));
                raw["attack"]["surrogate_hidden_widths"] = widths;
            }
        }
        if (app.got_subcommand(eval) && !eval_method.empty()) raw["attack"]["method"] = eval_method;
        if (app.got_subcommand(ensemble)) {
            if (!ens_method.empty()) raw["attack"]["method"] = ens_method;
            if (!raw.contains("ensemble")) raw["ensemble"] = nlohmann::json::object();
            if (subsets) raw["ensemble"]["n_subsets"] = *subsets;
            if (singleton) raw["ensemble"]["singleton"] = true;
            if (vote_k) raw["ensemble"]["k"] = *vote_k;
        }

        mia::ExperimentConfig cfg = mia::parse_experiment_config(raw);
        mia::Pipeline pipeline(cfg, common.out_dir);

        if (app.got_subcommand(synth)) {
            pipeline.run_synth();
            std::cout << "wrote " << pipeline.path("dataset.csv") << "\n";
        } else if (app.got_subcommand(split)) {
            pipeline.run_split();
            std::cout << "wrote " << pipeline.path("splits.json") << "\n";
        } else if (app.got_subcommand(train)) {
            pipeline.run_train_target();
            std::cout << "wrote " << pipeline.path("target_model.json") << "\n";
        } else if (app.got_subcommand(attack)) {
            pipeline.run_attack();
            std::cout << "wrote "
                      << pipeline.path(std::string("attack_") + mia::strategy_name(cfg.method) +
                                       ".json")
                      << "\n";
        } else if (app.got_subcommand(ensemble)) {
            const mia::AttackMetrics m = pipeline.run_ensemble();
            std::cout << "ensemble accuracy=" << m.accuracy << " fpr=" << m.fpr << " ("
                      << pipeline.path("metrics_ensemble.json") << ")\n";
        } else if (app.got_subcommand(eval)) {
            const mia::AttackMetrics m = pipeline.run_eval();
            std::cout << "accuracy=" << m.accuracy << " fpr=" << m.fpr << " auc=" << m.auc << " ("
                      << pipeline.path(std::string("metrics_") + mia::strategy_name(cfg.method) +
                                       ".json")
                      << ")\n";
        } else if (app.got_subcommand(study)) {
            pipeline.run_epoch_study();
            std::cout << "wrote " << pipeline.path("epoch_study.csv") << "\n";
        } else if (app.got_subcommand(report)) {
            pipeline.run_report();
            std::cout << "wrote " << pipeline.path("run_report.json") << "\n";
        }
        return 0;
    } catch (const mia::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const mia::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
