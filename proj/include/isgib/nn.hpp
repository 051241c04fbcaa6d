#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isgib/graph.hpp"
#include "isgib/rng.hpp"
#include "isgib/tensor.hpp"

namespace isgib {

enum class Backbone { sage, gcn, gin };

inline std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::sage: return "sage";
        case Backbone::gcn: return "gcn";
        case Backbone::gin: return "gin";
    }
    return "sage";
}

inline Backbone backbone_from_string(const std::string& s) {
    if (s == "sage") return Backbone::sage;
    if (s == "gcn") return Backbone::gcn;
    if (s == "gin") return Backbone::gin;
    fail(errc::config, "unknown backbone '" + s + "' (expected sage|gcn|gin)");
}

struct EncoderConfig {
    Backbone backbone = Backbone::sage;
    int layers = 3;
    int hidden = 64;
    double dropout = 0.0;
    int d_in = 0;
    int num_classes = 0;

    void validate() const {
        require(layers >= 1, errc::config, "encoder: layers must be >= 1");
        require(hidden >= 1, errc::config, "encoder: hidden must be >= 1");
        require(dropout >= 0.0 && dropout < 1.0, errc::config, "encoder: dropout must be in [0, 1)");
        require(d_in >= 1, errc::config, "encoder: d_in must be >= 1");
        require(num_classes >= 2, errc::config, "encoder: num_classes must be >= 2");
    }
};

// Ordered registry of named parameter tensors. The order of creation is the
// declared checkpoint order.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

    // Glorot-uniform initialized matrix; the draw comes from a substream
    // derived from the parameter name, so adding or removing other parameters
    // never perturbs it.
    Tensor make(const std::string& name, std::size_t rows, std::size_t cols) {
        Rng rng(mix_seed(seed_, hash_tag(name)));
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::vector<double> data(rows * cols);
        for (double& x : data) x = rng.uniform(-bound, bound);
        Tensor t = Tensor::from_data(std::move(data), Shape{rows, cols}, true);
        names_.push_back(name);
        params_.push_back(t);
        return t;
    }

    Tensor make_zeros(const std::string& name, std::size_t len) {
        Tensor t = Tensor::zeros(Shape{len}, true);
        names_.push_back(name);
        params_.push_back(t);
        return t;
    }

    std::size_t size() const { return params_.size(); }
    const std::vector<Tensor>& tensors() const { return params_; }
    const std::vector<std::string>& names() const { return names_; }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(total_scalars());
        for (const auto& p : params_) flat.insert(flat.end(), p.value().begin(), p.value().end());
        return flat;
    }

    void load_flat(const std::vector<double>& flat) {
        require(flat.size() == total_scalars(), errc::shape,
                "parameter vector length mismatch: got " + std::to_string(flat.size()) + ", expected " +
                    std::to_string(total_scalars()));
        std::size_t off = 0;
        for (auto& p : params_) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.numel(),
                        p.mutable_value().begin());
            off += p.numel();
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::uint64_t seed_;
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
};

// ---- encoders ----------------------------------------------------------------

struct EncoderParams {
    EncoderConfig cfg;
    // sage/gcn: one weight+bias per layer; gin: two of each per layer (the
    // update perceptron).
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    std::vector<Tensor> weights2;
    std::vector<Tensor> biases2;

    static EncoderParams create(const EncoderConfig& cfg, ParamStore& store) {
        cfg.validate();
        EncoderParams p;
        p.cfg = cfg;
        const auto H = static_cast<std::size_t>(cfg.hidden);
        for (int l = 0; l < cfg.layers; ++l) {
            const std::size_t in = l == 0 ? static_cast<std::size_t>(cfg.d_in) : H;
            const std::string tag = "enc.l" + std::to_string(l);
            switch (cfg.backbone) {
                case Backbone::sage:
                    p.weights.push_back(store.make(tag + ".weight", 2 * in, H));
                    p.biases.push_back(store.make_zeros(tag + ".bias", H));
                    break;
                case Backbone::gcn:
                    p.weights.push_back(store.make(tag + ".weight", in, H));
                    p.biases.push_back(store.make_zeros(tag + ".bias", H));
                    break;
                case Backbone::gin:
                    p.weights.push_back(store.make(tag + ".mlp0.weight", in, H));
                    p.biases.push_back(store.make_zeros(tag + ".mlp0.bias", H));
                    p.weights2.push_back(store.make(tag + ".mlp1.weight", H, H));
                    p.biases2.push_back(store.make_zeros(tag + ".mlp1.bias", H));
                    break;
            }
        }
        return p;
    }
};

// L rounds of message passing over the full graph; returns one embedding row
// per node. Dropout draws its masks from `rng` only when `train` is set.
inline Tensor encode(const Graph& g, const Adjacency& adj, const EncoderParams& p, bool train,
                     Rng& rng) {
    require(g.features.cols == static_cast<std::size_t>(p.cfg.d_in), errc::shape,
            "encode: graph feature width " + std::to_string(g.features.cols) +
                " does not match encoder d_in " + std::to_string(p.cfg.d_in));
    Tensor h = Tensor::from_matrix(g.features);
    for (int l = 0; l < p.cfg.layers; ++l) {
        Tensor z;
        switch (p.cfg.backbone) {
            case Backbone::sage:
                z = add(matmul(concat_cols(h, sparse_neighbor_mean(h, adj)), p.weights[static_cast<std::size_t>(l)]),
                        p.biases[static_cast<std::size_t>(l)]);
                break;
            case Backbone::gcn:
                z = add(matmul(gcn_propagate(h, adj), p.weights[static_cast<std::size_t>(l)]),
                        p.biases[static_cast<std::size_t>(l)]);
                break;
            case Backbone::gin: {
                // (1 + eps) * self + neighbor sum, eps fixed at 0.
                const Tensor agg = add(h, sparse_neighbor_sum(h, adj));
                const Tensor hid = relu(add(matmul(agg, p.weights[static_cast<std::size_t>(l)]),
                                            p.biases[static_cast<std::size_t>(l)]));
                z = add(matmul(hid, p.weights2[static_cast<std::size_t>(l)]),
                        p.biases2[static_cast<std::size_t>(l)]);
                break;
            }
        }
        h = relu(z);
        if (p.cfg.dropout > 0.0) h = dropout(h, p.cfg.dropout, train, rng);
    }
    return h;
}

// Permutation-invariant readout: mean over node embeddings. Each column is
// summed in sorted-value order, so any node reordering gives a bitwise
// identical result; the gradient of a mean is uniform, so the backward pass
// needs no such care.
inline Tensor readout(const Tensor& node_embeddings) {
    require(node_embeddings.rank() == 2 && node_embeddings.rows() >= 1, errc::shape,
            "readout: needs at least one node");
    const std::size_t m = node_embeddings.rows(), n = node_embeddings.cols();
    std::vector<double> out(n, 0.0);
    std::vector<double> column(m);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) column[i] = node_embeddings.value()[i * n + j];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out[j] = s / static_cast<double>(m);
    }
    auto ed = node_embeddings.data_ptr();
    return detail::make_result(Shape{1, n}, std::move(out), {node_embeddings},
                               [ed, m, n](TensorData& self) {
                                   ed->ensure_grad();
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < n; ++j)
                                           ed->grad[i * n + j] += self.grad[j] / static_cast<double>(m);
                               });
}

struct ClassifierParams {
    Tensor weight; // [H x c]
    Tensor bias;   // [c]

    static ClassifierParams create(const EncoderConfig& cfg, ParamStore& store) {
        ClassifierParams p;
        p.weight = store.make("cls.weight", static_cast<std::size_t>(cfg.hidden),
                              static_cast<std::size_t>(cfg.num_classes));
        p.bias = store.make_zeros("cls.bias", static_cast<std::size_t>(cfg.num_classes));
        return p;
    }
};

// Affine map to class logits; losses apply the softmax themselves.
inline Tensor classify(const Tensor& h, const ClassifierParams& p) {
    require(h.rank() == 2 && h.cols() == p.weight.rows(), errc::shape,
            "classify: embedding width does not match classifier");
    return add(matmul(h, p.weight), p.bias);
}

// ---- critic ------------------------------------------------------------------

enum class CriticDistance { neg_l2, dot };

inline std::string to_string(CriticDistance d) { return d == CriticDistance::neg_l2 ? "neg_l2" : "dot"; }
inline CriticDistance critic_distance_from_string(const std::string& s) {
    if (s == "neg_l2") return CriticDistance::neg_l2;
    if (s == "dot") return CriticDistance::dot;
    fail(errc::config, "unknown critic distance '" + s + "' (expected neg_l2|dot)");
}

// Scorer inside the contrastive bounds: one two-layer projection head per
// side into a shared space, then a distance.
struct Critic {
    Tensor x_w1, x_b1, x_w2, x_b2;
    Tensor h_w1, h_b1, h_w2, h_b2;
    CriticDistance distance = CriticDistance::neg_l2;

    static Critic create(const std::string& tag, std::size_t in_x, std::size_t in_h,
                         std::size_t hidden, std::size_t proj, CriticDistance distance,
                         ParamStore& store) {
        require(in_x >= 1 && in_h >= 1 && hidden >= 1 && proj >= 1, errc::config,
                "critic: dimensions must be positive");
        Critic c;
        c.distance = distance;
        c.x_w1 = store.make(tag + ".x.w1", in_x, hidden);
        c.x_b1 = store.make_zeros(tag + ".x.b1", hidden);
        c.x_w2 = store.make(tag + ".x.w2", hidden, proj);
        c.x_b2 = store.make_zeros(tag + ".x.b2", proj);
        c.h_w1 = store.make(tag + ".h.w1", in_h, hidden);
        c.h_b1 = store.make_zeros(tag + ".h.b1", hidden);
        c.h_w2 = store.make(tag + ".h.w2", hidden, proj);
        c.h_b2 = store.make_zeros(tag + ".h.b2", proj);
        return c;
    }

    Tensor project_x(const Tensor& x) const {
        return add(matmul(relu(add(matmul(x, x_w1), x_b1)), x_w2), x_b2);
    }
    Tensor project_h(const Tensor& h) const {
        return add(matmul(relu(add(matmul(h, h_w1), h_b1)), h_w2), h_b2);
    }

    // S[i][k] = distance(project_x(x_k), project_h(h_i)): row i scores
    // embedding i against every input-side row.
    Tensor score_matrix(const Tensor& x_rows, const Tensor& h_rows) const {
        const Tensor px = project_x(x_rows);
        const Tensor ph = project_h(h_rows);
        if (distance == CriticDistance::dot) return matmul(ph, transpose(px));
        return neg(cross_pairwise_l2(ph, px));
    }
};

// Scalar critic score for a single (input, embedding) pair.
inline double critic_score(const std::vector<double>& x_side, const std::vector<double>& h_side,
                           const Critic& critic) {
    NoGradGuard ng;
    const Tensor x = Tensor::from_data(x_side, Shape{1, x_side.size()});
    const Tensor h = Tensor::from_data(h_side, Shape{1, h_side.size()});
    return critic.score_matrix(x, h).item();
}

// ---- checkpointing -----------------------------------------------------------

// JSON manifest plus the flat parameter vector in declared (creation) order.
inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const nlohmann::json& config, std::uint64_t seed, int epoch) {
    nlohmann::json j;
    j["schema"] = "isgib-checkpoint-v1";
    j["config"] = config;
    j["seed"] = seed;
    j["epoch"] = epoch;
    j["param_names"] = store.names();
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& p : store.tensors()) shapes.push_back(p.shape());
    j["param_shapes"] = shapes;
    j["values"] = store.flatten();
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    out << j.dump() << "\n";
    require(out.good(), errc::io, "write failed: " + path);
}

inline nlohmann::json load_checkpoint(const std::string& path, ParamStore& store) {
    std::ifstream in(path);
    require(in.good(), errc::io, "checkpoint not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::format, path + ": " + e.what());
    }
    require(j.value("schema", "") == "isgib-checkpoint-v1", errc::format,
            path + ": not an isgib checkpoint");
    const auto names = j.at("param_names").get<std::vector<std::string>>();
    require(names == store.names(), errc::format,
            path + ": checkpoint parameter layout does not match the configured model");
    store.load_flat(j.at("values").get<std::vector<double>>());
    return j;
}

} // namespace isgib
