#include <catch2/catch_amalgamated.hpp>

#include "isgib/rng.hpp"

using namespace isgib;

TEST_CASE("same seed gives identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("derived substreams differ from each other") {
    Rng a(mix_seed(42, hash_tag("noise"), 0));
    Rng b(mix_seed(42, hash_tag("noise"), 1));
    Rng c(mix_seed(42, hash_tag("env"), 0));
    int equal_ab = 0, equal_ac = 0;
    for (int i = 0; i < 64; ++i) {
        const auto va = a.next_u64();
        if (va == b.next_u64()) ++equal_ab;
        if (va == c.next_u64()) ++equal_ac;
    }
    REQUIRE(equal_ab == 0);
    REQUIRE(equal_ac == 0);
}

TEST_CASE("uniform stays in [0,1)") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal sample moments match the requested distribution") {
    const std::size_t n = 200000;
    const double mu = 1.5, sigma = 2.0;
    Rng rng(7);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal(mu, sigma);
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sumsq / static_cast<double>(n) - mean * mean);
    REQUIRE(std::abs(mean - mu) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    REQUIRE(std::abs(sd - sigma) < 0.05 * sigma);
}

TEST_CASE("degenerate normal returns the mean exactly") {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) REQUIRE(rng.normal(5.0, 0.0) == 5.0);
}

TEST_CASE("below is within range and covers small supports") {
    Rng rng(13);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const auto v = rng.below(5);
        REQUIRE(v < 5);
        ++seen[static_cast<std::size_t>(v)];
    }
    for (int c : seen) REQUIRE(c > 0);
}

TEST_CASE("sample_without_replacement is sorted, distinct, bounded") {
    Rng rng(17);
    const auto idx = rng.sample_without_replacement(100, 30);
    REQUIRE(idx.size() == 30);
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) REQUIRE(idx[i] < idx[i + 1]);
    REQUIRE(idx.back() < 100);

    const auto all = Rng(17).sample_without_replacement(10, 30);
    REQUIRE(all.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) REQUIRE(all[i] == i);
}
