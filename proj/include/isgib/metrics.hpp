#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "isgib/error.hpp"
#include "isgib/matrix.hpp"

namespace isgib {

enum class EvalMetric { accuracy, roc_auc };

inline std::string to_string(EvalMetric m) { return m == EvalMetric::accuracy ? "accuracy" : "roc_auc"; }
inline EvalMetric eval_metric_from_string(const std::string& s) {
    if (s == "accuracy") return EvalMetric::accuracy;
    if (s == "roc_auc") return EvalMetric::roc_auc;
    fail(errc::config, "unknown eval metric '" + s + "' (expected accuracy|roc_auc)");
}

// Argmax with ties broken toward the lowest class index.
inline int argmax_class(const double* row, std::size_t c) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
    return static_cast<int>(best);
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    require(predictions.size() == labels.size(), errc::shape, "accuracy: length mismatch");
    require(!labels.empty(), errc::shape, "accuracy: empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double accuracy(const Matrix& logits, const std::vector<int>& labels) {
    require(logits.rows == labels.size(), errc::shape, "accuracy: length mismatch");
    std::vector<int> pred(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) pred[i] = argmax_class(logits.row(i), logits.cols);
    return accuracy(pred, labels);
}

// Probability that a random positive outscores a random negative, ties
// counted one half (rank formulation with midranks).
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), errc::shape, "roc_auc: length mismatch");
    std::size_t pos = 0, neg = 0;
    for (int y : labels) {
        require(y == 0 || y == 1, errc::domain, "roc_auc: labels must be binary");
        y == 1 ? ++pos : ++neg;
    }
    require(pos > 0 && neg > 0, errc::domain, "roc_auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0; // ranks are 1-based
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

struct MetricReport {
    EvalMetric metric = EvalMetric::accuracy;
    std::vector<double> per_graph;
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
};

inline std::pair<double, double> mean_stddev(const std::vector<double>& values) {
    require(!values.empty(), errc::domain, "mean_stddev: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    if (values.size() > 1) {
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size() - 1);
    }
    return {mean, std::sqrt(var)};
}

inline MetricReport make_report(EvalMetric metric, std::vector<double> per_graph) {
    MetricReport r;
    r.metric = metric;
    r.per_graph = std::move(per_graph);
    auto [m, s] = mean_stddev(r.per_graph);
    r.mean = m;
    r.stddev = s;
    return r;
}

} // namespace isgib
