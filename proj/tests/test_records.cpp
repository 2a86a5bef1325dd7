#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mia/attacks.hpp"
#include "mia/records.hpp"

using namespace mia;

namespace {

struct Fixture {
    Dataset pop = generate_synthetic_population(9, 9, 8, 0.08, 40);
    ExperimentSplits sp = make_splits(pop, 3, 40);
    TrainedClassifier model;

    Fixture() {
        TrainConfig cfg = TrainConfig::overfitting(40);
        cfg.epochs = 40;
        model = train_classifier(sp.target_train, sp.target_val,
                                 make_spec(8, {16}, static_cast<int>(sp.id1.size())), cfg);
    }
};

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("attack training set is balanced and label-consistent") {
    Fixture fx;
    const auto records =
        build_attack_training_set(fx.model, fx.sp.attack_member, fx.sp.attack_nonmember);
    REQUIRE(records.size() == fx.sp.attack_member.size() + fx.sp.attack_nonmember.size());
    std::size_t members = 0;
    for (const PredictionRecord& r : records) {
        REQUIRE(r.membership != Membership::Unknown);
        if (r.membership == Membership::Member) {
            ++members;
            REQUIRE(r.true_label >= 0);  // member identities are target classes
        } else {
            REQUIRE(r.true_label == -1);  // unknown individuals have no class index
        }
        REQUIRE(r.predicted_label == argmax_index(r.prediction.confidences));
        REQUIRE_NOTHROW(validate_prediction_vector(r.prediction));
    }
    REQUIRE(members * 2 == records.size());
}

TEST_CASE("attack training set preconditions") {
    Fixture fx;
    REQUIRE_THROWS_AS(build_attack_training_set(fx.model, fx.sp.attack_member, Dataset{}),
                      ContractError);
    const Dataset small = generate_synthetic_population(2, 2, 8, 0.1, 3);
    REQUIRE_THROWS_AS(build_attack_training_set(fx.model, fx.sp.attack_member, small),
                      ContractError);
}

TEST_CASE("record files round trip and drive identical decisions") {
    Fixture fx;
    const auto records =
        build_attack_training_set(fx.model, fx.sp.attack_member, fx.sp.attack_nonmember);
    const std::string path = temp_path("mia_records.jsonl");
    export_prediction_records(records, path);
    const auto back = import_prediction_records(path);
    REQUIRE(back.size() == records.size());

    const MetricAttack a1 = train_yeom(records);
    const MetricAttack a2 = train_yeom(back);
    REQUIRE(a1.tau == a2.tau);
    for (std::size_t i = 0; i < records.size(); ++i)
        REQUIRE(a1.decide(records[i]) == a2.decide(back[i]));
    std::filesystem::remove(path);
}

TEST_CASE("record import validates rows strictly") {
    const std::string path = temp_path("mia_records_bad.jsonl");
    auto write = [&](const std::string& content) {
        std::ofstream f(path, std::ios::binary);
        f << content;
    };

    write(R"({"sample_id":"a","true_label":0,"predicted_label":0,"confidences":[0.7,0.3],"membership":1})"
          "\n"
          R"({"sample_id":"b","true_label":-1,"predicted_label":1,"confidences":[0.2,0.8],"membership":0})"
          "\n"
          R"({"sample_id":"c","true_label":1,"predicted_label":0,"confidences":[0.6,0.4],"membership":null})"
          "\n");
    const auto ok = import_prediction_records(path);
    REQUIRE(ok.size() == 3);
    REQUIRE(ok[2].membership == Membership::Unknown);

    // confidences summing to 0.8 are rejected, naming the row
    write(R"({"sample_id":"a","true_label":0,"predicted_label":0,"confidences":[0.5,0.3],"membership":1})"
          "\n");
    try {
        import_prediction_records(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
    }

    write("not json\n");
    REQUIRE_THROWS_AS(import_prediction_records(path), FormatError);

    // predicted label must be the argmax
    write(R"({"sample_id":"a","true_label":0,"predicted_label":1,"confidences":[0.7,0.3],"membership":1})"
          "\n");
    REQUIRE_THROWS_AS(import_prediction_records(path), FormatError);

    // negative confidence
    write(R"({"sample_id":"a","true_label":0,"predicted_label":0,"confidences":[1.2,-0.2],"membership":1})"
          "\n");
    REQUIRE_THROWS_AS(import_prediction_records(path), FormatError);
    std::filesystem::remove(path);
}
