#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "isgib/error.hpp"
#include "isgib/graph.hpp"
#include "isgib/matrix.hpp"
#include "isgib/rng.hpp"

namespace isgib {

// Reverse-mode automatic differentiation over dense tensors, eager style:
// every operator computes its forward value immediately and, when gradients
// are enabled, records a closure that scatters the output gradient back onto
// its inputs. A computation graph is just the web of shared_ptr parents; it
// is confined to one thread and torn down when the root goes out of scope.

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII switch used by evaluation passes that do not need gradients.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // same length as value once touched
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorData>> parents; // grad-requiring inputs only
    std::function<void(TensorData&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(std::vector<double> data, Shape shape, bool requires_grad = false) {
        require(data.size() == shape_numel(shape), errc::shape,
                "tensor data length does not match shape " + shape_str(shape));
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value = std::move(data);
        d->requires_grad = requires_grad;
        Tensor t;
        t.d_ = std::move(d);
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> data(shape_numel(shape), 0.0);
        return from_data(std::move(data), std::move(shape), requires_grad);
    }

    static Tensor scalar(double v) { return from_data({v}, Shape{}); }

    static Tensor from_matrix(const Matrix& m, bool requires_grad = false) {
        return from_data(m.data, Shape{m.rows, m.cols}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t numel() const { return d_->value.size(); }
    std::size_t rows() const {
        require(rank() == 2, errc::shape, "rows(): tensor is not rank-2");
        return d_->shape[0];
    }
    std::size_t cols() const {
        require(rank() == 2, errc::shape, "cols(): tensor is not rank-2");
        return d_->shape[1];
    }

    const std::vector<double>& value() const { return d_->value; }
    std::vector<double>& mutable_value() { return d_->value; } // leaves only (optimizer, FD probes)
    const std::vector<double>& grad() const {
        d_->ensure_grad();
        return d_->grad;
    }
    bool requires_grad() const { return d_->requires_grad; }

    double item() const {
        require(numel() == 1, errc::shape, "item(): tensor is not scalar");
        return d_->value[0];
    }

    Matrix to_matrix() const {
        require(rank() == 2, errc::shape, "to_matrix(): tensor is not rank-2");
        Matrix m(d_->shape[0], d_->shape[1]);
        m.data = d_->value;
        return m;
    }

    void zero_grad() { d_->grad.assign(d_->value.size(), 0.0); }

    // Reverse sweep from this (scalar) root; gradients accumulate into every
    // reachable tensor with requires_grad set.
    void backward() const {
        require(defined() && numel() == 1, errc::shape, "backward(): root must be a scalar");
        require(d_->requires_grad, errc::domain, "backward(): root does not require grad");

        std::vector<TensorData*> order;
        std::unordered_set<TensorData*> visited;
        std::vector<std::pair<TensorData*, std::size_t>> stack;
        visited.insert(d_.get());
        stack.emplace_back(d_.get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                TensorData* p = node->parents[next++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        d_->ensure_grad();
        d_->grad[0] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

namespace detail {

// C[m x n] (+)= A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a[t];
            if (av == 0.0) continue;
            const double* b = B + t * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x n] (+)= A[m x k] * B^T, B stored [n x k]
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[t] * b[t];
            c[j] = accumulate ? c[j] + acc : acc;
        }
    }
}

// C[k x n] (+)= A^T * B, A stored [m x k], B stored [m x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, k * n * sizeof(double));
    for (std::size_t t = 0; t < m; ++t) {
        const double* a = A + t * k;
        const double* b = B + t * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = a[i];
            if (av == 0.0) continue;
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(TensorData&)> backward) {
    Tensor out = Tensor::from_data(std::move(value), std::move(shape));
    bool needs = false;
    if (grad_mode())
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) needs = true;
    if (needs) {
        auto d = out.data_ptr();
        d->requires_grad = true;
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) d->parents.push_back(t.data_ptr());
        d->backward_fn = std::move(backward);
    }
    return out;
}

inline void accumulate(const std::shared_ptr<TensorData>& t, std::size_t i, double g) {
    t->ensure_grad();
    t->grad[i] += g;
}

} // namespace detail

// ---- core operator set ------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, errc::shape, "matmul: inputs must be rank-2");
    require(a.cols() == b.rows(), errc::shape,
            "matmul: inner dimensions disagree " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    detail::gemm_nn(m, k, n, a.value().data(), b.value().data(), out.data(), false);

    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    return detail::make_result(
        {m, n}, std::move(out), {a, b}, [ad, bd, m, k, n](TensorData& self) {
            if (ad->requires_grad) {
                ad->ensure_grad();
                detail::gemm_nt(m, n, k, self.grad.data(), bd->value.data(), ad->grad.data(), true);
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                detail::gemm_tn(m, k, n, ad->value.data(), self.grad.data(), bd->grad.data(), true);
            }
        });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_numel(shape) == a.numel(), errc::shape,
            "reshape: element count mismatch for " + shape_str(shape));
    auto ad = a.data_ptr();
    return detail::make_result(std::move(shape), a.value(), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, errc::shape, "transpose: input must be rank-2");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
    auto ad = a.data_ptr();
    return detail::make_result({n, m}, std::move(out), {a}, [ad, m, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ad->grad[i * n + j] += self.grad[j * m + i];
    });
}

// add supports equal shapes, row-broadcast of a rank-1 [n] bias onto [m x n],
// and rank-0 scalars against anything.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();

    if (a.shape() == b.shape()) {
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
        return detail::make_result(a.shape(), std::move(out), {a, b}, [ad, bd](TensorData& self) {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bd->grad[i] += self.grad[i];
            }
        });
    }
    if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.shape()[0]) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
        return detail::make_result({m, n}, std::move(out), {a, b}, [ad, bd, m, n](TensorData& self) {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bd->grad[j] += self.grad[i * n + j];
            }
        });
    }
    fail(errc::shape, "add: incompatible shapes " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad, c](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += c * self.grad[i];
    });
}

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

inline Tensor multiply(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), errc::shape, "multiply: shapes disagree");
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [ad, bd](TensorData& self) {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i] * bd->value[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bd->grad[i] += self.grad[i] * ad->value[i];
        }
    });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(), errc::shape,
            "concat: row counts disagree");
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    std::vector<double> out(m * (p + q));
    for (std::size_t i = 0; i < m; ++i) {
        std::memcpy(out.data() + i * (p + q), a.value().data() + i * p, p * sizeof(double));
        std::memcpy(out.data() + i * (p + q) + p, b.value().data() + i * q, q * sizeof(double));
    }
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    return detail::make_result({m, p + q}, std::move(out), {a, b}, [ad, bd, m, p, q](TensorData& self) {
        for (std::size_t i = 0; i < m; ++i) {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (std::size_t j = 0; j < p; ++j) ad->grad[i * p + j] += self.grad[i * (p + q) + j];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::size_t j = 0; j < q; ++j) bd->grad[i * q + j] += self.grad[i * (p + q) + p + j];
            }
        }
    });
}

inline Tensor vstack(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), errc::shape,
            "vstack: column counts disagree");
    const std::size_t p = a.rows(), q = b.rows(), n = a.cols();
    std::vector<double> out;
    out.reserve((p + q) * n);
    out.insert(out.end(), a.value().begin(), a.value().end());
    out.insert(out.end(), b.value().begin(), b.value().end());
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    return detail::make_result({p + q, n}, std::move(out), {a, b}, [ad, bd, p, n](TensorData& self) {
        if (ad->requires_grad) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < p * n; ++i) ad->grad[i] += self.grad[i];
        }
        if (bd->requires_grad) {
            bd->ensure_grad();
            for (std::size_t i = 0; i < bd->value.size(); ++i) bd->grad[i] += self.grad[p * n + i];
        }
    });
}

inline Tensor sum_axis(const Tensor& a, int axis) {
    require(a.rank() == 2 && (axis == 0 || axis == 1), errc::shape, "sum_axis: rank-2, axis 0|1");
    const std::size_t m = a.rows(), n = a.cols();
    const std::size_t len = axis == 0 ? n : m;
    std::vector<double> out(len, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += a.value()[i * n + j];
    auto ad = a.data_ptr();
    return detail::make_result({len}, std::move(out), {a}, [ad, m, n, axis](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ad->grad[i * n + j] += self.grad[axis == 0 ? j : i];
    });
}

inline Tensor mean_axis(const Tensor& a, int axis) {
    const double denom = axis == 0 ? static_cast<double>(a.rows()) : static_cast<double>(a.cols());
    require(denom > 0, errc::shape, "mean_axis: empty axis");
    return scale(sum_axis(a, axis), 1.0 / denom);
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.value()) s += v;
    auto ad = a.data_ptr();
    return detail::make_result({}, {s}, {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (double& g : ad->grad) g += self.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    require(a.numel() > 0, errc::shape, "mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (ad->value[i] > 0.0) ad->grad[i] += self.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.value()[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            ad->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor log_op(const Tensor& a) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        require(a.value()[i] > 0.0, errc::domain, "log: non-positive input");
        out[i] = std::log(a.value()[i]);
    }
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i] / ad->value[i];
    });
}

inline Tensor exp_op(const Tensor& a) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(a.value()[i]);
        require(std::isfinite(out[i]), errc::numeric, "exp: overflow to non-finite value");
    }
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ad->grad[i] += self.grad[i] * self.value[i];
    });
}

inline Tensor sqrt_op(const Tensor& a) {
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        require(a.value()[i] >= 0.0, errc::domain, "sqrt: negative input");
        out[i] = std::sqrt(a.value()[i]);
    }
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (self.value[i] > 0.0) ad->grad[i] += self.grad[i] * 0.5 / self.value[i];
    });
}

// Gradient passes through strictly inside (lo, hi) and is cut at the rails.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    require(lo < hi, errc::domain, "clamp: lo must be < hi");
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.value()[i]));
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a}, [ad, lo, hi](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (ad->value[i] > lo && ad->value[i] < hi) ad->grad[i] += self.grad[i];
    });
}

inline Tensor logsumexp_rows(const Tensor& a) {
    require(a.rank() == 2 && a.cols() > 0, errc::shape, "logsumexp_rows: rank-2, non-empty rows");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a.value().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        out[i] = mx + std::log(s);
        require(std::isfinite(out[i]), errc::numeric, "logsumexp: non-finite result");
    }
    auto ad = a.data_ptr();
    return detail::make_result({m}, std::move(out), {a}, [ad, m, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                ad->grad[i * n + j] += self.grad[i] * std::exp(ad->value[i * n + j] - self.value[i]);
    });
}

inline Tensor softmax_rows(const Tensor& a) {
    require(a.rank() == 2 && a.cols() > 0, errc::shape, "softmax_rows: rank-2, non-empty rows");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a.value().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            s += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
    }
    auto ad = a.data_ptr();
    return detail::make_result({m, n}, std::move(out), {a}, [ad, m, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ad->grad[i * n + j] += (self.grad[i * n + j] - dot) * self.value[i * n + j];
        }
    });
}

// Inverted dropout; a no-op (the identity tensor) when disabled.
inline Tensor dropout(const Tensor& a, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, errc::domain, "dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return a;
    std::vector<double> mask(a.numel());
    const double keep = 1.0 - p;
    for (double& m : mask) m = rng.uniform() >= p ? 1.0 / keep : 0.0;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * mask[i];
    auto ad = a.data_ptr();
    return detail::make_result(a.shape(), std::move(out), {a},
                               [ad, mask = std::move(mask)](TensorData& self) {
                                   ad->ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       ad->grad[i] += self.grad[i] * mask[i];
                               });
}

inline Tensor l2_norm_rows(const Tensor& a) {
    require(a.rank() == 2, errc::shape, "l2_norm_rows: rank-2 input");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.value()[i * n + j] * a.value()[i * n + j];
        out[i] = std::sqrt(s);
    }
    auto ad = a.data_ptr();
    return detail::make_result({m}, std::move(out), {a}, [ad, m, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            if (self.value[i] <= 0.0) continue;
            const double g = self.grad[i] / self.value[i];
            for (std::size_t j = 0; j < n; ++j) ad->grad[i * n + j] += g * ad->value[i * n + j];
        }
    });
}

// Rows scaled to unit L2 norm; all-zero rows stay zero (and get zero grad).
inline Tensor row_normalize(const Tensor& a) {
    require(a.rank() == 2, errc::shape, "row_normalize: rank-2 input");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> norms(m, 0.0);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a.value()[i * n + j] * a.value()[i * n + j];
        norms[i] = std::sqrt(s);
        if (norms[i] > 0.0)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.value()[i * n + j] / norms[i];
    }
    auto ad = a.data_ptr();
    return detail::make_result({m, n}, std::move(out), {a},
                               [ad, m, n, norms = std::move(norms)](TensorData& self) {
                                   ad->ensure_grad();
                                   for (std::size_t i = 0; i < m; ++i) {
                                       if (norms[i] <= 0.0) continue;
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < n; ++j)
                                           dot += self.grad[i * n + j] * self.value[i * n + j];
                                       for (std::size_t j = 0; j < n; ++j)
                                           ad->grad[i * n + j] +=
                                               (self.grad[i * n + j] - dot * self.value[i * n + j]) / norms[i];
                                   }
                               });
}

inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    require(a.rank() == 2, errc::shape, "gather_rows: rank-2 input");
    const std::size_t n = a.cols();
    std::vector<double> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < a.rows(), errc::shape, "gather_rows: index out of range");
        std::memcpy(out.data() + i * n, a.value().data() + idx[i] * n, n * sizeof(double));
    }
    auto ad = a.data_ptr();
    return detail::make_result({idx.size(), n}, std::move(out), {a}, [ad, idx, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) ad->grad[idx[i] * n + j] += self.grad[i * n + j];
    });
}

// out[i] = a[i, labels[i]]
inline Tensor pick(const Tensor& a, const std::vector<int>& labels) {
    require(a.rank() == 2 && labels.size() == a.rows(), errc::shape, "pick: one label per row");
    const std::size_t n = a.cols();
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < n, errc::domain,
                "pick: label index " + std::to_string(labels[i]) + " out of range [0, " +
                    std::to_string(n) + ")");
        out[i] = a.value()[i * n + static_cast<std::size_t>(labels[i])];
    }
    auto ad = a.data_ptr();
    return detail::make_result({labels.size()}, std::move(out), {a}, [ad, labels, n](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < labels.size(); ++i)
            ad->grad[i * n + static_cast<std::size_t>(labels[i])] += self.grad[i];
    });
}

// ---- graph aggregation operators --------------------------------------------

// Row v of the result is the mean of x over v's neighbors; isolated nodes map
// to the zero vector.
inline Tensor sparse_neighbor_mean(const Tensor& x, const Adjacency& adj) {
    require(x.rank() == 2 && x.rows() == adj.num_nodes(), errc::shape,
            "sparse_neighbor_mean: feature rows must match node count");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t v = 0; v < m; ++v) {
        const int deg = adj.degree(v);
        if (deg == 0) continue;
        for (const int* u = adj.begin(v); u != adj.end(v); ++u)
            for (std::size_t j = 0; j < n; ++j)
                out[v * n + j] += x.value()[static_cast<std::size_t>(*u) * n + j];
        for (std::size_t j = 0; j < n; ++j) out[v * n + j] /= deg;
    }
    auto xd = x.data_ptr();
    const Adjacency* adjp = &adj;
    return detail::make_result({m, n}, std::move(out), {x}, [xd, adjp, m, n](TensorData& self) {
        xd->ensure_grad();
        for (std::size_t v = 0; v < m; ++v) {
            const int deg = adjp->degree(v);
            if (deg == 0) continue;
            for (const int* u = adjp->begin(v); u != adjp->end(v); ++u)
                for (std::size_t j = 0; j < n; ++j)
                    xd->grad[static_cast<std::size_t>(*u) * n + j] += self.grad[v * n + j] / deg;
        }
    });
}

inline Tensor sparse_neighbor_sum(const Tensor& x, const Adjacency& adj) {
    require(x.rank() == 2 && x.rows() == adj.num_nodes(), errc::shape,
            "sparse_neighbor_sum: feature rows must match node count");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t v = 0; v < m; ++v)
        for (const int* u = adj.begin(v); u != adj.end(v); ++u)
            for (std::size_t j = 0; j < n; ++j)
                out[v * n + j] += x.value()[static_cast<std::size_t>(*u) * n + j];
    auto xd = x.data_ptr();
    const Adjacency* adjp = &adj;
    return detail::make_result({m, n}, std::move(out), {x}, [xd, adjp, m, n](TensorData& self) {
        xd->ensure_grad();
        for (std::size_t v = 0; v < m; ++v)
            for (const int* u = adjp->begin(v); u != adjp->end(v); ++u)
                for (std::size_t j = 0; j < n; ++j)
                    xd->grad[static_cast<std::size_t>(*u) * n + j] += self.grad[v * n + j];
    });
}

// Symmetric-normalized propagation with self-loops:
//   y_v = sum_{u in N(v) + v} x_u / sqrt((deg_u+1)(deg_v+1)).
// The operator matrix is symmetric, so the backward pass reuses it.
inline Tensor gcn_propagate(const Tensor& x, const Adjacency& adj) {
    require(x.rank() == 2 && x.rows() == adj.num_nodes(), errc::shape,
            "gcn_propagate: feature rows must match node count");
    const std::size_t m = x.rows(), n = x.cols();
    auto apply = [&adj, m, n](const double* in, double* out) {
        for (std::size_t v = 0; v < m; ++v) {
            const double dv = std::sqrt(static_cast<double>(adj.degree(v) + 1));
            for (std::size_t j = 0; j < n; ++j) out[v * n + j] = in[v * n + j] / (dv * dv);
            for (const int* u = adj.begin(v); u != adj.end(v); ++u) {
                const double du = std::sqrt(static_cast<double>(adj.degree(static_cast<std::size_t>(*u)) + 1));
                const double coef = 1.0 / (dv * du);
                for (std::size_t j = 0; j < n; ++j)
                    out[v * n + j] += coef * in[static_cast<std::size_t>(*u) * n + j];
            }
        }
    };
    std::vector<double> out(m * n, 0.0);
    apply(x.value().data(), out.data());
    auto xd = x.data_ptr();
    const Adjacency* adjp = &adj;
    return detail::make_result({m, n}, std::move(out), {x}, [xd, adjp, m, n](TensorData& self) {
        xd->ensure_grad();
        std::vector<double> tmp(m * n, 0.0);
        for (std::size_t v = 0; v < m; ++v) {
            const double dv = std::sqrt(static_cast<double>(adjp->degree(v) + 1));
            for (std::size_t j = 0; j < n; ++j) tmp[v * n + j] += self.grad[v * n + j] / (dv * dv);
            for (const int* u = adjp->begin(v); u != adjp->end(v); ++u) {
                const double du =
                    std::sqrt(static_cast<double>(adjp->degree(static_cast<std::size_t>(*u)) + 1));
                const double coef = 1.0 / (dv * du);
                for (std::size_t j = 0; j < n; ++j)
                    tmp[static_cast<std::size_t>(*u) * n + j] += coef * self.grad[v * n + j];
            }
        }
        for (std::size_t i = 0; i < tmp.size(); ++i) xd->grad[i] += tmp[i];
    });
}

// ---- pairwise-distance operators --------------------------------------------

// D[i][j] = ||a_i - b_j||_2 between row sets. Zero distances contribute no
// gradient (the norm is not differentiable there).
inline Tensor cross_pairwise_l2(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), errc::shape,
            "cross_pairwise_l2: widths disagree");
    const std::size_t p = a.rows(), q = b.rows(), d = a.cols();
    std::vector<double> out(p * q);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = a.value()[i * d + t] - b.value()[j * d + t];
                s += diff * diff;
            }
            out[i * q + j] = std::sqrt(s);
        }
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    return detail::make_result({p, q}, std::move(out), {a, b}, [ad, bd, p, q, d](TensorData& self) {
        const bool wa = ad->requires_grad;
        const bool wb = bd->requires_grad;
        if (wa) ad->ensure_grad();
        if (wb) bd->ensure_grad();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) {
                const double dist = self.value[i * q + j];
                if (dist <= 1e-300) continue;
                const double g = self.grad[i * q + j] / dist;
                if (g == 0.0) continue;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = ad->value[i * d + t] - bd->value[j * d + t];
                    if (wa) ad->grad[i * d + t] += g * diff;
                    if (wb) bd->grad[j * d + t] -= g * diff;
                }
            }
    });
}

inline Tensor pairwise_l2(const Tensor& a) { return cross_pairwise_l2(a, a); }

inline Tensor pairwise_l1(const Tensor& a) {
    require(a.rank() == 2, errc::shape, "pairwise_l1: rank-2 input");
    const std::size_t m = a.rows(), d = a.cols();
    std::vector<double> out(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) s += std::abs(a.value()[i * d + t] - a.value()[j * d + t]);
            out[i * m + j] = s;
        }
    auto ad = a.data_ptr();
    return detail::make_result({m, m}, std::move(out), {a}, [ad, m, d](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double g = self.grad[i * m + j];
                if (g == 0.0 || i == j) continue;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = ad->value[i * d + t] - ad->value[j * d + t];
                    if (diff > 0.0) {
                        ad->grad[i * d + t] += g;
                        ad->grad[j * d + t] -= g;
                    } else if (diff < 0.0) {
                        ad->grad[i * d + t] -= g;
                        ad->grad[j * d + t] += g;
                    }
                }
            }
    });
}

// Kernel two-sample distance between rows treated as singleton samples:
//   M[i][j] = mean_h sqrt(2 - 2 exp(-||x_i - x_j||^2 / (2 h^2))).
// The diagonal is exactly zero and contributes no gradient.
inline Tensor pairwise_mmd(const Tensor& a, const std::array<double, 3>& bandwidths) {
    require(a.rank() == 2, errc::shape, "pairwise_mmd: rank-2 input");
    for (double h : bandwidths) require(h > 0.0, errc::domain, "pairwise_mmd: bandwidth must be positive");
    const std::size_t m = a.rows(), d = a.cols();
    std::vector<double> sqdist(m * m, 0.0);
    std::vector<double> out(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = a.value()[i * d + t] - a.value()[j * d + t];
                s += diff * diff;
            }
            sqdist[i * m + j] = sqdist[j * m + i] = s;
            double v = 0.0;
            for (double h : bandwidths) v += std::sqrt(std::max(0.0, 2.0 - 2.0 * std::exp(-s / (2.0 * h * h))));
            out[i * m + j] = out[j * m + i] = v / static_cast<double>(bandwidths.size());
        }
    auto ad = a.data_ptr();
    return detail::make_result(
        {m, m}, std::move(out), {a}, [ad, m, d, bandwidths, sqdist = std::move(sqdist)](TensorData& self) {
            ad->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = self.grad[i * m + j];
                    if (g == 0.0 || i == j) continue;
                    const double u = sqdist[i * m + j];
                    double dv_du = 0.0;
                    for (double h : bandwidths) {
                        const double e = std::exp(-u / (2.0 * h * h));
                        const double rad = 2.0 - 2.0 * e;
                        if (rad <= 1e-12) continue; // cusp at coincident rows
                        dv_du += (e / (2.0 * h * h)) / std::sqrt(rad);
                    }
                    dv_du /= static_cast<double>(bandwidths.size());
                    const double gu = g * dv_du;
                    for (std::size_t t = 0; t < d; ++t) {
                        const double diff = ad->value[i * d + t] - ad->value[j * d + t];
                        ad->grad[i * d + t] += gu * 2.0 * diff;
                        ad->grad[j * d + t] -= gu * 2.0 * diff;
                    }
                }
        });
}

// ---- masked reductions -------------------------------------------------------

inline std::size_t mask_count(const std::vector<unsigned char>& mask) {
    std::size_t c = 0;
    for (unsigned char m : mask) c += m ? 1 : 0;
    return c;
}

inline Tensor masked_mean(const Tensor& a, const std::vector<unsigned char>& mask) {
    require(mask.size() == a.numel(), errc::shape, "masked_mean: mask size mismatch");
    const std::size_t cnt = mask_count(mask);
    require(cnt > 0, errc::domain, "masked_mean: empty mask");
    double s = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) s += a.value()[i];
    auto ad = a.data_ptr();
    return detail::make_result({}, {s / static_cast<double>(cnt)}, {a}, [ad, mask, cnt](TensorData& self) {
        ad->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(cnt);
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) ad->grad[i] += g;
    });
}

// log of the mean of exp over the masked entries, max-shifted for stability.
inline Tensor masked_logmeanexp(const Tensor& a, const std::vector<unsigned char>& mask) {
    require(mask.size() == a.numel(), errc::shape, "masked_logmeanexp: mask size mismatch");
    const std::size_t cnt = mask_count(mask);
    require(cnt > 0, errc::domain, "masked_logmeanexp: empty mask");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) mx = std::max(mx, a.value()[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) s += std::exp(a.value()[i] - mx);
    const double lse = mx + std::log(s);
    const double result = lse - std::log(static_cast<double>(cnt));
    require(std::isfinite(result), errc::numeric, "masked_logmeanexp: non-finite result");
    auto ad = a.data_ptr();
    return detail::make_result({}, {result}, {a}, [ad, mask, lse](TensorData& self) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) ad->grad[i] += self.grad[0] * std::exp(ad->value[i] - lse);
    });
}

// ---- composite losses --------------------------------------------------------

// Mean softmax cross-entropy against integer class labels.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require(logits.rank() == 2 && logits.rows() == labels.size(), errc::shape,
            "cross_entropy: one label per logit row");
    return mean_all(sub(logsumexp_rows(logits), pick(logits, labels)));
}

// Mean elementwise binary cross-entropy of `pred` in [0,1] against constant
// targets; predictions are clamped away from {0,1} before the logs.
inline Tensor bce_matrix(const Tensor& pred, const Matrix& target, double eps = 1e-12) {
    require(pred.rank() == 2 && pred.rows() == target.rows && pred.cols() == target.cols, errc::shape,
            "bce_matrix: shapes disagree");
    constexpr double slop = 1e-9; // rounding headroom; the clamp below absorbs it
    for (double t : target.data)
        require(t >= -slop && t <= 1.0 + slop, errc::domain, "bce_matrix: target outside [0,1]");
    for (double p : pred.value())
        require(p >= -slop && p <= 1.0 + slop, errc::domain,
                "bce_matrix: prediction outside [0,1]; use the mse relation loss for unbounded metrics");
    const Tensor q = clamp(pred, eps, 1.0 - eps);
    Matrix ones_minus(target.rows, target.cols);
    for (std::size_t i = 0; i < target.data.size(); ++i) ones_minus.data[i] = 1.0 - target.data[i];
    const Tensor t = Tensor::from_matrix(target);
    const Tensor omt = Tensor::from_matrix(ones_minus);
    const Tensor term = add(multiply(t, log_op(q)), multiply(omt, log_op(add_const(neg(q), 1.0))));
    return neg(mean_all(term));
}

inline Tensor mse_matrix(const Tensor& pred, const Matrix& target) {
    require(pred.rank() == 2 && pred.rows() == target.rows && pred.cols() == target.cols, errc::shape,
            "mse_matrix: shapes disagree");
    const Tensor diff = sub(pred, Tensor::from_matrix(target));
    return mean_all(multiply(diff, diff));
}

// ---- gradient checking -------------------------------------------------------

// Max relative error between reverse-mode gradients and central finite
// differences, taken over every coordinate of every leaf:
//   |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
// `forward` must rebuild the computation from the leaves' current values.
inline double grad_check(const std::function<Tensor()>& forward, const std::vector<Tensor>& leaves,
                         double eps = 1e-5) {
    for (auto leaf : leaves) leaf.zero_grad();
    Tensor y = forward();
    require(std::isfinite(y.item()), errc::numeric, "grad_check: non-finite forward value");
    y.backward();

    std::vector<std::vector<double>> ad_grads;
    ad_grads.reserve(leaves.size());
    for (const auto& leaf : leaves) ad_grads.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        auto& xs = leaf.mutable_value();
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double x0 = xs[i];
            const double h = eps * std::max(1.0, std::abs(x0));
            xs[i] = x0 + h;
            const double fp = forward().item();
            xs[i] = x0 - h;
            const double fm = forward().item();
            xs[i] = x0;
            require(std::isfinite(fp) && std::isfinite(fm), errc::numeric,
                    "grad_check: non-finite perturbed value");
            const double g_fd = (fp - fm) / (2.0 * h);
            const double g_ad = ad_grads[li][i];
            const double rel = std::abs(g_ad - g_fd) / std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5) {
    return grad_check([&] { return f(x); }, {x}, eps);
}

} // namespace isgib
