#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mia/model.hpp"

using namespace mia;

namespace {

TrainedClassifier random_model(std::vector<int> widths, std::uint64_t seed) {
    std::vector<int> labels(widths.back());
    std::iota(labels.begin(), labels.end(), 0);
    return detail::init_classifier(ClassifierSpec{widths}, labels, seed);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
    // Random small instances of a one-hidden-layer net, cross-entropy plus
    // weight decay, step 1e-5, relative error within 1e-4.
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        TrainedClassifier m = random_model({4, 6, 3}, 100 + trial);
        Rng rng(trial);
        std::vector<std::vector<double>> xs;
        std::vector<int> ys;
        for (int i = 0; i < 7; ++i) {
            std::vector<double> x(4);
            for (double& v : x) v = rng.uniform01();
            xs.push_back(x);
            ys.push_back(static_cast<int>(rng.below(3)));
        }
        const double wd = 0.3;
        std::vector<Matrix> gW;
        std::vector<std::vector<double>> gb;
        training_gradient(m, xs, ys, wd, gW, gb);

        const double h = 1e-5;
        double max_rel = 0.0;
        auto check = [&](double& param, double analytic) {
            const double keep = param;
            param = keep + h;
            const double up = training_loss(m, xs, ys, wd);
            param = keep - h;
            const double dn = training_loss(m, xs, ys, wd);
            param = keep;
            const double numeric = (up - dn) / (2 * h);
            const double rel =
                std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            max_rel = std::max(max_rel, rel);
        };
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            for (std::size_t k = 0; k < m.weights[l].a.size(); k += 3)
                check(m.weights[l].a[k], gW[l].a[k]);
            for (std::size_t r = 0; r < m.biases[l].size(); ++r)
                check(m.biases[l][r], gb[l][r]);
        }
        REQUIRE(max_rel < 1e-4);
    }
}

TEST_CASE("softmax output satisfies the prediction-vector invariants") {
    TrainedClassifier m = random_model({6, 8, 4}, 3);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x(6);
        for (double& v : x) v = rng.uniform(0, 1);
        const PredictionVector p = predict_confidences(m, x);
        REQUIRE_NOTHROW(validate_prediction_vector(p));
    }
}

TEST_CASE("zero-weight model yields the uniform vector") {
    TrainedClassifier m = random_model({4, 5}, 1);
    for (auto& W : m.weights) std::fill(W.a.begin(), W.a.end(), 0.0);
    for (auto& b : m.biases) std::fill(b.begin(), b.end(), 0.0);
    const PredictionVector p = predict_confidences(m, std::vector<double>{0.2, 0.4, 0.6, 0.8});
    for (double c : p.confidences) REQUIRE(c == Catch::Approx(1.0 / 5).margin(1e-12));
}

TEST_CASE("softmax is invariant to a constant shift of the output biases") {
    TrainedClassifier m = random_model({5, 7, 3}, 9);
    const std::vector<double> x = {0.1, 0.9, 0.4, 0.3, 0.7};
    const PredictionVector before = predict_confidences(m, x);
    for (double& b : m.biases.back()) b += 13.5;
    const PredictionVector after = predict_confidences(m, x);
    for (std::size_t i = 0; i < before.confidences.size(); ++i)
        REQUIRE(after.confidences[i] == Catch::Approx(before.confidences[i]).margin(1e-12));
}

TEST_CASE("predict_label agrees with the argmax of predict_confidences") {
    TrainedClassifier m = random_model({8, 10, 6}, 21);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.uniform01();
        const PredictionVector p = predict_confidences(m, x);
        REQUIRE(predict_label(m, x) == m.class_labels[argmax_index(p.confidences)]);
    }
}

TEST_CASE("argmax ties break to the lowest index") {
    REQUIRE(argmax_index({0.1, 0.7, 0.2}) == 1);
    REQUIRE(argmax_index({0.5, 0.5}) == 0);
    TrainedClassifier m = random_model({3, 4}, 2);
    for (auto& W : m.weights) std::fill(W.a.begin(), W.a.end(), 0.0);
    for (auto& b : m.biases) std::fill(b.begin(), b.end(), 0.0);
    m.class_labels = {11, 22, 33, 44};
    REQUIRE(predict_label(m, std::vector<double>{0.3, 0.3, 0.3}) == 11);
}

TEST_CASE("cross-entropy reference values") {
    REQUIRE(cross_entropy({{1.0, 0.0}}, 0) == 0.0);
    REQUIRE(cross_entropy({{0.5, 0.5}}, 0) == Catch::Approx(0.693147).margin(1e-6));
    REQUIRE(cross_entropy({{0.9, 0.1}}, 1) == Catch::Approx(2.302585).margin(1e-6));
    REQUIRE_THROWS_AS(cross_entropy({{0.5, 0.5}}, 2), ContractError);
    REQUIRE_THROWS_AS(cross_entropy({{0.5, 0.5}}, -1), ContractError);
    // floored log keeps confident mistakes finite
    REQUIRE(cross_entropy({{1.0, 0.0}}, 1) == Catch::Approx(-std::log(1e-12)));
}

TEST_CASE("epochs=0 returns the initialization at chance accuracy") {
    const Dataset ds = generate_synthetic_population(10, 30, 16, 0.05, 4);
    TrainConfig cfg = TrainConfig::overfitting(4);
    cfg.epochs = 0;
    const ClassifierSpec spec = make_spec(16, {32}, 10);
    const TrainedClassifier m = train_classifier(ds, Dataset{}, spec, cfg);
    REQUIRE(m.history.empty());
    const double acc = accuracy(m, ds);
    REQUIRE(acc >= 0.0);
    REQUIRE(acc <= 0.35);  // about 1/10 for an untrained net
}

TEST_CASE("overfitting preset reaches perfect training accuracy") {
    const Dataset ds = generate_synthetic_population(10, 25, 64, 0.02, 12);
    const ClassifierSpec spec = make_spec(64, {128, 64}, 10);
    const TrainedClassifier m =
        train_classifier(ds, Dataset{}, spec, TrainConfig::overfitting(12));
    REQUIRE(m.history.size() == 200);
    REQUIRE(m.history.back().train_accuracy == 1.0);
    REQUIRE(accuracy(m, ds) == 1.0);
}

TEST_CASE("no-overfitting preset has the smaller train-test gap") {
    const Dataset pop = generate_synthetic_population(8, 20, 32, 0.45, 31);
    // deterministic halves per identity: even indices train, odd test
    std::vector<Sample> tr, te;
    for (int id : pop.identities()) {
        const auto& idx = pop.indices_of(id);
        for (std::size_t k = 0; k < idx.size(); ++k)
            (k % 2 == 0 ? tr : te).push_back(pop[idx[k]]);
    }
    const Dataset train(tr), test(te);
    const ClassifierSpec spec = make_spec(32, {64, 32}, 8);

    TrainConfig over = TrainConfig::overfitting(7);
    over.epochs = 120;
    TrainConfig no = TrainConfig::no_overfitting(7);
    no.epochs = 120;
    const TrainedClassifier m_over = train_classifier(train, Dataset{}, spec, over);
    const TrainedClassifier m_no = train_classifier(train, Dataset{}, spec, no);
    const double gap_over = overfitting_level(m_over, train, test);
    const double gap_no = overfitting_level(m_no, train, test);
    REQUIRE(gap_no < gap_over);
}

TEST_CASE("training loss is non-increasing on a separable two-class toy set") {
    // Full-batch descent (batch >= n) on a linearly separable pair of blobs.
    std::vector<Sample> samples;
    const double centers[2] = {0.2, 0.8};
    for (int id = 0; id < 2; ++id)
        for (int k = 0; k < 4; ++k) {
            Sample s;
            s.sample_id = "t" + std::to_string(id * 4 + k);
            s.individual_id = id;
            s.features = {centers[id] + 0.02 * k, centers[id] - 0.02 * k};
            samples.push_back(std::move(s));
        }
    const Dataset ds(samples);
    const TrainedClassifier m = train_classifier(ds, Dataset{}, make_spec(2, {8}, 2),
                                                 TrainConfig::overfitting(3));
    for (std::size_t e = 1; e < m.history.size(); ++e)
        REQUIRE(m.history[e].train_loss <= m.history[e - 1].train_loss + 1e-12);
}

TEST_CASE("training is bit-deterministic in the seed") {
    const Dataset ds = generate_synthetic_population(5, 10, 8, 0.1, 6);
    TrainConfig cfg = TrainConfig::no_overfitting(123);
    cfg.epochs = 12;
    const ClassifierSpec spec = make_spec(8, {16}, 5);
    const TrainedClassifier a = train_classifier(ds, ds, spec, cfg);
    const TrainedClassifier b = train_classifier(ds, ds, spec, cfg);
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
        REQUIRE(a.weights[l].a == b.weights[l].a);
        REQUIRE(a.biases[l] == b.biases[l]);
    }
}

TEST_CASE("overfitting level is the train-test accuracy difference") {
    const Dataset ds = generate_synthetic_population(6, 9, 8, 0.1, 6);
    TrainConfig cfg = TrainConfig::overfitting(1);
    cfg.epochs = 20;
    const TrainedClassifier m = train_classifier(ds, Dataset{}, make_spec(8, {16}, 6), cfg);
    REQUIRE(overfitting_level(m, ds, ds) == 0.0);
    const Dataset other = generate_synthetic_population(6, 5, 8, 0.4, 60);
    REQUIRE(overfitting_level(m, ds, other) ==
            Catch::Approx(accuracy(m, ds) - accuracy(m, other)).margin(1e-15));
    REQUIRE_THROWS_AS(accuracy(m, Dataset{}), ContractError);
}

TEST_CASE("overfitting levels differ across identity subsets") {
    // Split the trained identities into two halves and report the
    // train-test accuracy gap per half: the level varies by subset.
    const Dataset pop = generate_synthetic_population(12, 12, 16, 0.4, 44);
    std::vector<Sample> tr, te;
    for (int id : pop.identities()) {
        const auto& idx = pop.indices_of(id);
        for (std::size_t k = 0; k < idx.size(); ++k) (k % 2 ? te : tr).push_back(pop[idx[k]]);
    }
    const Dataset train(tr), test(te);
    TrainConfig cfg = TrainConfig::overfitting(44);
    cfg.epochs = 120;
    const TrainedClassifier m = train_classifier(train, Dataset{}, make_spec(16, {32, 16}, 12), cfg);

    auto subset = [&](const Dataset& ds, int lo, int hi) {
        std::vector<Sample> out;
        for (const Sample& s : ds)
            if (s.individual_id >= lo && s.individual_id < hi) out.push_back(s);
        return Dataset(out);
    };
    const double level_a =
        overfitting_level(m, subset(train, 0, 6), subset(test, 0, 6));
    const double level_b =
        overfitting_level(m, subset(train, 6, 12), subset(test, 6, 12));
    REQUIRE(std::isfinite(level_a));
    REQUIRE(std::isfinite(level_b));
    REQUIRE(level_a != level_b);
    const double whole = overfitting_level(m, train, test);
    REQUIRE(whole == Catch::Approx(0.5 * (level_a + level_b)).margin(1e-12));
}

TEST_CASE("training rejects contract violations") {
    const Dataset ds = generate_synthetic_population(4, 6, 8, 0.1, 6);
    const Dataset alien = generate_synthetic_population(6, 6, 8, 0.1, 7);
    const ClassifierSpec spec = make_spec(8, {8}, 4);
    TrainConfig cfg = TrainConfig::overfitting(0);
    cfg.epochs = 1;
    REQUIRE_THROWS_AS(train_classifier(Dataset{}, Dataset{}, spec, cfg), ContractError);
    REQUIRE_THROWS_AS(train_classifier(ds, alien, spec, cfg), ContractError);  // val class absent
    const ClassifierSpec bad_dim = make_spec(9, {8}, 4);
    REQUIRE_THROWS_AS(train_classifier(ds, Dataset{}, bad_dim, cfg), ContractError);
    TrainConfig bad = cfg;
    bad.learning_rate = 0.0;
    REQUIRE_THROWS_AS(train_classifier(ds, Dataset{}, spec, bad), ContractError);
}

TEST_CASE("checkpoint round trip preserves behavior exactly") {
    const Dataset ds = generate_synthetic_population(4, 8, 8, 0.1, 15);
    TrainConfig cfg = TrainConfig::overfitting(15);
    cfg.epochs = 10;
    const TrainedClassifier m = train_classifier(ds, ds, make_spec(8, {12}, 4), cfg);
    const std::string path =
        (std::filesystem::temp_directory_path() / "mia_model.json").string();
    save_classifier(m, path);
    const TrainedClassifier back = load_classifier(path);
    REQUIRE(back.spec.layer_widths == m.spec.layer_widths);
    REQUIRE(back.class_labels == m.class_labels);
    REQUIRE(back.history.size() == m.history.size());
    for (const Sample& s : ds) {
        const auto a = predict_confidences(m, s.features);
        const auto b = predict_confidences(back, s.features);
        REQUIRE(a.confidences == b.confidences);
    }
    std::filesystem::remove(path);
}
