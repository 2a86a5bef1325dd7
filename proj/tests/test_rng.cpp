#include <catch2/catch_amalgamated.hpp>

#include "mia/rng.hpp"

using namespace mia;

TEST_CASE("rng streams are deterministic and bounded") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform01();
        REQUIRE(u == b.uniform01());
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    Rng c(43);
    REQUIRE(Rng(42).uniform01() != c.uniform01());
}

TEST_CASE("below stays in range and shuffle is a permutation") {
    Rng r(7);
    for (int i = 0; i < 500; ++i) REQUIRE(r.below(13) < 13);
    REQUIRE_THROWS_AS(r.below(0), ContractError);

    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    Rng s1(5), s2(5);
    auto v1 = v, v2 = v;
    s1.shuffle(v1);
    s2.shuffle(v2);
    REQUIRE(v1 == v2);
    std::sort(v1.begin(), v1.end());
    REQUIRE(v1 == v);
}

TEST_CASE("derived sub-seeds differ by tag and index") {
    const auto a = derive_seed(1, "split");
    const auto b = derive_seed(1, "init");
    const auto c = derive_seed(2, "split");
    const auto d = derive_seed(1, "split", 1);
    REQUIRE(a != b);
    REQUIRE(a != c);
    REQUIRE(a != d);
    REQUIRE(a == derive_seed(1, "split"));
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng r(11);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    REQUIRE(std::abs(sum / n) < 0.03);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}
