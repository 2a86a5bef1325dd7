#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MIA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string write_config(const std::string& dir) {
    const nlohmann::json j = {
        {"seed", 6},
        {"dataset",
         {{"source", "synthetic"},
          {"n_individuals", 9},
          {"samples_per_id", 9},
          {"feature_dim", 8},
          {"intra_class_noise", 0.1}}},
        {"split", {{"samples_per_id_per_portion", 3}}},
        {"target", {{"hidden_widths", {16}}, {"preset", "overfitting"}, {"epochs", 15}}},
        {"attack", {{"method", "yeom"}}},
    };
    const std::string path = dir + "/config.json";
    std::ofstream f(path);
    f << j.dump(2);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli usage and contract errors exit with code 2") {
    REQUIRE(run_cli("") == 2);                      // missing subcommand
    REQUIRE(run_cli("--help") == 0);                // help is a successful exit
    REQUIRE(run_cli("synth --config /nonexistent.json") == 2);

    const std::string dir = fresh_dir("mia_cli_err");
    const std::string cfg = write_config(dir);
    REQUIRE(run_cli("attack --config " + cfg + " --out-dir " + dir + " --method bogus") == 2);
}

TEST_CASE("cli data-format errors exit with code 3") {
    const std::string dir = fresh_dir("mia_cli_fmt");
    const std::string bad = dir + "/bad.json";
    {
        std::ofstream f(bad);
        f << "{ not json";
    }
    REQUIRE(run_cli("synth --config " + bad + " --out-dir " + dir) == 3);

    // eval before any attack artifact exists: missing input file
    const std::string cfg = write_config(dir);
    REQUIRE(run_cli("eval --config " + cfg + " --out-dir " + dir) == 3);
}

TEST_CASE("cli pipeline runs stage by stage") {
    const std::string dir = fresh_dir("mia_cli_run");
    const std::string cfg = write_config(dir);
    const std::string common = " --config " + cfg + " --out-dir " + dir;
    REQUIRE(run_cli("synth" + common) == 0);
    REQUIRE(run_cli("split" + common) == 0);
    REQUIRE(run_cli("train-target" + common) == 0);
    REQUIRE(run_cli("attack" + common) == 0);
    REQUIRE(run_cli("eval" + common) == 0);
    REQUIRE(run_cli("report" + common) == 0);
    for (const char* f : {"/dataset.csv", "/splits.json", "/target_model.json",
                          "/attack_yeom.json", "/metrics_yeom.json", "/roc_yeom.csv",
                          "/decisions_yeom.csv", "/run_report.json", "/timings.json"})
        REQUIRE(fs::exists(dir + f));
}

TEST_CASE("cli synth is byte-reproducible for one seed") {
    const std::string d1 = fresh_dir("mia_cli_s1");
    const std::string d2 = fresh_dir("mia_cli_s2");
    const std::string cfg = write_config(d1);
    REQUIRE(run_cli("synth --config " + cfg + " --out-dir " + d1) == 0);
    REQUIRE(run_cli("synth --config " + cfg + " --out-dir " + d2) == 0);
    REQUIRE(slurp(d1 + "/dataset.csv") == slurp(d2 + "/dataset.csv"));

    const std::string d3 = fresh_dir("mia_cli_s3");
    REQUIRE(run_cli("synth --config " + cfg + " --out-dir " + d3 + " --seed 99") == 0);
    REQUIRE(slurp(d1 + "/dataset.csv") != slurp(d3 + "/dataset.csv"));
}

TEST_CASE("cli ensemble flags override the config") {
    const std::string dir = fresh_dir("mia_cli_ens");
    const std::string cfg = write_config(dir);
    const std::string common = " --config " + cfg + " --out-dir " + dir;
    REQUIRE(run_cli("synth" + common) == 0);
    REQUIRE(run_cli("split" + common) == 0);
    REQUIRE(run_cli("train-target" + common) == 0);
    REQUIRE(run_cli("ensemble" + common + " --subsets 3") == 0);
    const nlohmann::json manifest =
        nlohmann::json::parse(slurp(dir + "/ensemble_manifest.json"));
    REQUIRE(manifest.at("plan").at("n_subsets").get<int>() == 3);
}
