#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "isgib/matrix.hpp"
#include "isgib/tensor.hpp"

namespace isgib {

// Deterministic pairwise-relationship function R(.) over batch instances.
// dot is the default; cosine is its normalized variant; p_l1/p_l2 are norm
// distances of pooled vectors; cmd/mmd compare per-instance sample sets and
// degenerate gracefully when an instance is a single pooled vector.

enum class RelationMetric { dot, cosine, p_l1, p_l2, cmd, mmd };

inline std::string to_string(RelationMetric m) {
    switch (m) {
        case RelationMetric::dot: return "dot";
        case RelationMetric::cosine: return "cosine";
        case RelationMetric::p_l1: return "p_l1";
        case RelationMetric::p_l2: return "p_l2";
        case RelationMetric::cmd: return "cmd";
        case RelationMetric::mmd: return "mmd";
    }
    return "dot";
}

inline RelationMetric relation_metric_from_string(const std::string& s) {
    if (s == "dot") return RelationMetric::dot;
    if (s == "cosine") return RelationMetric::cosine;
    if (s == "p_l1") return RelationMetric::p_l1;
    if (s == "p_l2") return RelationMetric::p_l2;
    if (s == "cmd") return RelationMetric::cmd;
    if (s == "mmd") return RelationMetric::mmd;
    fail(errc::config, "unknown relation metric '" + s + "'");
}

inline bool metric_bounded_01_on_probability_rows(RelationMetric m) {
    return m == RelationMetric::dot || m == RelationMetric::cosine;
}

struct RelationParams {
    double cmd_lower = 0.0;                       // value-range bounds frozen at dataset load
    double cmd_upper = 1.0;
    int cmd_order = 2;                            // K
    std::array<double, 3> mmd_bandwidths{0.5, 1.0, 2.0};
};

// ---- distribution distances ----------------------------------------------------

// Central moment discrepancy between two sample sets (rows are samples):
//   (1/|b-a|) ||E(X)-E(Y)||_2 + sum_{k=2..K} (1/|b-a|^k) ||C_k(X)-C_k(Y)||_2
// with C_k(X) = E[(X - E(X))^k] taken elementwise.
inline double cmd(const Matrix& x, const Matrix& y, int order, double lower, double upper) {
    require(x.rows > 0 && y.rows > 0, errc::domain, "cmd: sample sets must be non-empty");
    require(x.cols == y.cols, errc::shape, "cmd: sample widths disagree");
    require(lower < upper, errc::domain, "cmd: bounds must satisfy a < b");
    require(order >= 1, errc::domain, "cmd: order must be >= 1");
    const std::size_t d = x.cols;
    const double range = std::abs(upper - lower);

    auto column_mean = [d](const Matrix& m) {
        std::vector<double> mu(d, 0.0);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) mu[j] += m.at(i, j);
        for (double& v : mu) v /= static_cast<double>(m.rows);
        return mu;
    };
    auto central_moment = [d](const Matrix& m, const std::vector<double>& mu, int k) {
        std::vector<double> c(d, 0.0);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) c[j] += std::pow(m.at(i, j) - mu[j], k);
        for (double& v : c) v /= static_cast<double>(m.rows);
        return c;
    };
    auto norm_of_diff = [d](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return std::sqrt(s);
    };

    const auto mean_x = column_mean(x);
    const auto mean_y = column_mean(y);
    double total = norm_of_diff(mean_x, mean_y) / range;
    double scale_k = range;
    for (int k = 2; k <= order; ++k) {
        scale_k *= range;
        total += norm_of_diff(central_moment(x, mean_x, k), central_moment(y, mean_y, k)) / scale_k;
    }
    return total;
}

inline double gaussian_kernel(const double* a, const double* b, std::size_t d, double h) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::exp(-s / (2.0 * h * h));
}

// Kernel maximum mean discrepancy, biased estimator, averaged over the given
// Gaussian bandwidths. The radicand is clamped at zero against round-off.
inline double mmd(const Matrix& x, const Matrix& y, const std::array<double, 3>& bandwidths) {
    require(x.rows > 0 && y.rows > 0, errc::domain, "mmd: sample sets must be non-empty");
    require(x.cols == y.cols, errc::shape, "mmd: sample widths disagree");
    for (double h : bandwidths) require(h > 0.0, errc::domain, "mmd: bandwidth must be positive");
    const std::size_t d = x.cols;
    double total = 0.0;
    for (double h : bandwidths) {
        double kxx = 0.0, kyy = 0.0, kxy = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < x.rows; ++j) kxx += gaussian_kernel(x.row(i), x.row(j), d, h);
        for (std::size_t i = 0; i < y.rows; ++i)
            for (std::size_t j = 0; j < y.rows; ++j) kyy += gaussian_kernel(y.row(i), y.row(j), d, h);
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < y.rows; ++j) kxy += gaussian_kernel(x.row(i), y.row(j), d, h);
        kxx /= static_cast<double>(x.rows * x.rows);
        kyy /= static_cast<double>(y.rows * y.rows);
        kxy /= static_cast<double>(x.rows * y.rows);
        total += std::sqrt(std::max(0.0, kxx + kyy - 2.0 * kxy));
    }
    return total / static_cast<double>(bandwidths.size());
}

// Median pairwise distance over rows, scaled by {0.5, 1, 2}. Falls back to 1
// when all rows coincide.
inline std::array<double, 3> median_heuristic_bandwidths(const Matrix& x) {
    std::vector<double> dists;
    dists.reserve(x.rows * (x.rows - 1) / 2);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = i + 1; j < x.rows; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < x.cols; ++t) {
                const double diff = x.at(i, t) - x.at(j, t);
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    double median = 1.0;
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                         dists.end());
        median = dists[dists.size() / 2];
        if (median <= 0.0) median = 1.0;
    }
    return {0.5 * median, median, 2.0 * median};
}

// Value-range bounds for the cmd scaling, frozen from the training features.
inline std::pair<double, double> cmd_bounds_from(const std::vector<const Matrix*>& feature_mats) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Matrix* m : feature_mats)
        for (double v : m->data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(lo < hi)) { lo = 0.0; hi = 1.0; }
    return {lo, hi};
}

// ---- relation matrices ---------------------------------------------------------

inline double vector_relation(const double* a, const double* b, std::size_t d, RelationMetric metric,
                              const RelationParams& params) {
    switch (metric) {
        case RelationMetric::dot: {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
            return s;
        }
        case RelationMetric::cosine: {
            double s = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                s += a[j] * b[j];
                na += a[j] * a[j];
                nb += b[j] * b[j];
            }
            if (na <= 0.0 || nb <= 0.0) return 0.0;
            return s / (std::sqrt(na) * std::sqrt(nb));
        }
        case RelationMetric::p_l1: {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += std::abs(a[j] - b[j]);
            return s;
        }
        case RelationMetric::p_l2: {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
            return std::sqrt(s);
        }
        case RelationMetric::cmd: {
            Matrix ma(1, d), mb(1, d);
            std::copy_n(a, d, ma.data.begin());
            std::copy_n(b, d, mb.data.begin());
            return cmd(ma, mb, params.cmd_order, params.cmd_lower, params.cmd_upper);
        }
        case RelationMetric::mmd: {
            Matrix ma(1, d), mb(1, d);
            std::copy_n(a, d, ma.data.begin());
            std::copy_n(b, d, mb.data.begin());
            return mmd(ma, mb, params.mmd_bandwidths);
        }
    }
    return 0.0;
}

// N x N relation matrix over the rows of X.
inline Matrix relation_matrix(const Matrix& x, RelationMetric metric,
                              const RelationParams& params = {}) {
    require(x.rows >= 2, errc::shape, "relation_matrix: needs at least 2 instances");
    Matrix r(x.rows, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = i; j < x.rows; ++j) {
            const double v = vector_relation(x.row(i), x.row(j), x.cols, metric, params);
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    return r;
}

// Relation matrix over per-instance sample sets. cmd/mmd compare the sets
// directly; the pooled-vector metrics first mean-pool each set.
inline Matrix relation_matrix(const std::vector<Matrix>& sample_sets, RelationMetric metric,
                              const RelationParams& params = {}) {
    require(sample_sets.size() >= 2, errc::shape, "relation_matrix: needs at least 2 instances");
    const std::size_t n = sample_sets.size();
    if (metric != RelationMetric::cmd && metric != RelationMetric::mmd) {
        require(!sample_sets.front().empty(), errc::shape, "relation_matrix: empty sample set");
        const std::size_t d = sample_sets.front().cols;
        Matrix pooled(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& s = sample_sets[i];
            require(s.cols == d && s.rows > 0, errc::shape, "relation_matrix: ragged sample sets");
            for (std::size_t r = 0; r < s.rows; ++r)
                for (std::size_t j = 0; j < d; ++j) pooled.at(i, j) += s.at(r, j);
            for (std::size_t j = 0; j < d; ++j) pooled.at(i, j) /= static_cast<double>(s.rows);
        }
        return relation_matrix(pooled, metric, params);
    }
    Matrix r(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = metric == RelationMetric::cmd
                                 ? cmd(sample_sets[i], sample_sets[j], params.cmd_order,
                                       params.cmd_lower, params.cmd_upper)
                                 : mmd(sample_sets[i], sample_sets[j], params.mmd_bandwidths);
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    return r;
}

// Differentiable relation matrix over embedding/probability rows; forward
// values match relation_matrix() on the same input (cmd/mmd in their
// single-sample degenerate form).
inline Tensor relation_tensor(const Tensor& x, RelationMetric metric,
                              const RelationParams& params = {}) {
    require(x.rank() == 2 && x.rows() >= 2, errc::shape, "relation_tensor: needs at least 2 instances");
    switch (metric) {
        case RelationMetric::dot: return matmul(x, transpose(x));
        case RelationMetric::cosine: {
            const Tensor xn = row_normalize(x);
            return matmul(xn, transpose(xn));
        }
        case RelationMetric::p_l1: return pairwise_l1(x);
        case RelationMetric::p_l2: return pairwise_l2(x);
        case RelationMetric::cmd:
            return scale(pairwise_l2(x), 1.0 / std::abs(params.cmd_upper - params.cmd_lower));
        case RelationMetric::mmd: return pairwise_mmd(x, params.mmd_bandwidths);
    }
    fail(errc::config, "relation_tensor: unhandled metric");
}

// One-hot label rows; with the dot metric these produce the 0/1 class
// co-membership matrix.
inline Matrix one_hot(const std::vector<int>& labels, int num_classes) {
    Matrix m(labels.size(), static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && labels[i] < num_classes, errc::domain,
                "one_hot: label " + std::to_string(labels[i]) + " out of range");
        m.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return m;
}

} // namespace isgib
