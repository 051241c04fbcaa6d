#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "isgib/metrics.hpp"
#include "isgib/rng.hpp"
#include "support.hpp"

using namespace isgib;

TEST_CASE("accuracy trivial and counting cases") {
    const std::vector<int> p1{1, 0, 1}, y1{1, 0, 1}, y2{0, 1, 0};
    REQUIRE(accuracy(p1, y1) == 1.0);
    REQUIRE(accuracy(p1, y2) == 0.0);
    const std::vector<int> p3{1, 0, 1, 1}, y3{1, 0, 0, 1};
    REQUIRE(accuracy(p3, y3) == 0.75); // 3 of 4
    const std::vector<int> short_pred{1};
    REQUIRE_THROWS_AS(accuracy(short_pred, y1), error);
}

TEST_CASE("accuracy over logits breaks ties toward the lowest class") {
    Matrix logits(2, 3);
    logits.data = {0.5, 0.5, 0.5,   // tie across all: predict class 0
                   0.1, 0.9, 0.9};  // tie between 1 and 2: predict 1
    REQUIRE(accuracy(logits, {0, 1}) == 1.0);
    REQUIRE(accuracy(logits, {1, 2}) == 0.0);
}

TEST_CASE("accuracy is invariant under a constant logit shift") {
    Rng rng(3);
    Matrix logits(10, 4);
    for (double& v : logits.data) v = rng.normal(0.0, 1.0);
    std::vector<int> labels(10);
    for (int& y : labels) y = static_cast<int>(rng.below(4));
    const double base = accuracy(logits, labels);
    Matrix shifted = logits;
    for (double& v : shifted.data) v += 123.25;
    REQUIRE(accuracy(shifted, labels) == base);
}

TEST_CASE("roc_auc trivial, counting, and tie cases") {
    REQUIRE(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    REQUIRE(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    // pair-counting oracle: positives {0.35, 0.8}, negatives {0.1, 0.4}
    // wins: (0.35>0.1), (0.8>0.1), (0.8>0.4); loss: (0.35<0.4) -> 3/4
    REQUIRE(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
    REQUIRE_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), error);
    REQUIRE_THROWS_AS(roc_auc({0.1, 0.2}, {0, 2}), error);
}

TEST_CASE("roc_auc matches the brute-force pair count on random data") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5 + rng.below(20);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::round(rng.normal(0.0, 1.0) * 4.0) / 4.0; // force some ties
            labels[i] = rng.uniform() < 0.5 ? 0 : 1;
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        double wins = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (labels[i] == 1 && labels[j] == 0) {
                    ++pairs;
                    if (scores[i] > scores[j]) wins += 1.0;
                    else if (scores[i] == scores[j]) wins += 0.5;
                }
        REQUIRE(roc_auc(scores, labels) ==
                Catch::Approx(wins / static_cast<double>(pairs)).margin(1e-12));
    }
}

TEST_CASE("roc_auc is invariant under strictly monotone score transforms") {
    Rng rng(11);
    std::vector<double> scores(30);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
        scores[i] = rng.normal(0.0, 2.0);
        labels[i] = i % 3 == 0 ? 1 : 0;
    }
    const double base = roc_auc(scores, labels);
    std::vector<double> transformed(30);
    for (std::size_t i = 0; i < 30; ++i) transformed[i] = std::atan(scores[i] * 0.1) * 5.0 + 2.0;
    REQUIRE(roc_auc(transformed, labels) == base); // rank formulation is exact
}

TEST_CASE("metric reports aggregate mean and sample stddev") {
    const MetricReport r = make_report(EvalMetric::accuracy, {0.5, 0.7, 0.9});
    REQUIRE(r.mean == Catch::Approx(0.7));
    REQUIRE(r.stddev == Catch::Approx(0.2));
    const MetricReport single = make_report(EvalMetric::roc_auc, {0.8});
    REQUIRE(single.stddev == 0.0);
}
