#pragma once

// Test-only oracles and fixtures. Everything here is deliberately independent
// of the library implementation paths it is used to check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "isgib/dataset.hpp"
#include "isgib/synthetic.hpp"
#include "isgib/trainer.hpp"

namespace testsupport {

// Eigenvalues of a symmetric matrix by the cyclic Jacobi method. Used as the
// positive-semidefiniteness oracle for relation matrices.
inline std::vector<double> symmetric_eigenvalues(isgib::Matrix a) {
    const std::size_t n = a.rows;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a.at(p, q)) < 1e-18) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

// Breadth-first k-hop ball, adjacency-set based (independent of the CSR path).
inline std::vector<int> bfs_ball(const isgib::Graph& g, int center, int hops) {
    std::vector<std::set<int>> nbr(g.num_nodes);
    for (auto [u, v] : g.edges) {
        if (u == v) continue;
        nbr[static_cast<std::size_t>(u)].insert(v);
        nbr[static_cast<std::size_t>(v)].insert(u);
    }
    std::set<int> ball{center};
    std::set<int> frontier{center};
    for (int h = 0; h < hops; ++h) {
        std::set<int> next;
        for (int v : frontier)
            for (int u : nbr[static_cast<std::size_t>(v)])
                if (!ball.count(u)) {
                    ball.insert(u);
                    next.insert(u);
                }
        frontier = std::move(next);
        if (frontier.empty()) break;
    }
    return {ball.begin(), ball.end()};
}

// Chain graph 0-1-2-...-(n-1) with one feature column per node unless given.
inline isgib::Graph chain_graph(std::size_t n, std::vector<double> feats = {},
                                std::size_t cols = 1) {
    isgib::Graph g;
    g.num_nodes = n;
    for (std::size_t i = 0; i + 1 < n; ++i) g.edges.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
    if (feats.empty()) {
        feats.resize(n * cols);
        for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = static_cast<double>(i);
    }
    g.features = isgib::Matrix(n, cols);
    g.features.data = std::move(feats);
    g.labels.assign(n, 0);
    return g;
}

// Small linearly separable node-classification fixture: a two-block chain
// whose features carry the class directly with a wide margin.
inline isgib::Graph toy_separable_graph(std::size_t per_class = 12) {
    isgib::Graph g;
    const std::size_t n = 2 * per_class;
    g.num_nodes = n;
    g.features = isgib::Matrix(n, 4);
    g.labels.resize(n);
    isgib::Rng rng(99);
    for (std::size_t v = 0; v < n; ++v) {
        const int y = v < per_class ? 0 : 1;
        g.labels[v] = y;
        g.features.at(v, 0) = y == 0 ? 2.0 : -2.0;
        g.features.at(v, 1) = y == 0 ? -1.5 : 1.5;
        g.features.at(v, 2) = rng.normal(0.0, 0.2);
        g.features.at(v, 3) = rng.normal(0.0, 0.2);
        if (v + 1 < n && (v + 1) % per_class != 0)
            g.edges.emplace_back(static_cast<int>(v), static_cast<int>(v + 1));
    }
    return g;
}

inline isgib::DatasetSplit toy_split(std::size_t per_class = 12) {
    const isgib::Graph base = toy_separable_graph(per_class);
    return isgib::make_shift_benchmark(base, 2, 7);
}

// Unique temp directory under the system temp root.
inline std::string fresh_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("isgib_test_" + tag + "_" + std::to_string(counter.fetch_add(1)) + "_" +
                      std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// Plain risk-minimization training loop, written against the public pieces
// (encode/classify/cross_entropy/AdamW) but composed independently of
// isgib::train. Serves as the reference trajectory for the gamma = 0 identity.
inline isgib::RunResult reference_erm_loop(isgib::RunConfig cfg, const isgib::DatasetSplit& data) {
    using namespace isgib;
    cfg.encoder.d_in = static_cast<int>(data.feature_dim);
    cfg.encoder.num_classes = data.num_classes;

    BuiltModel model(cfg.seed);
    model.encoder = EncoderParams::create(cfg.encoder, model.store);
    model.classifier = ClassifierParams::create(cfg.encoder, model.store);

    std::vector<Adjacency> train_adj, val_adj, test_adj;
    for (const auto& g : data.train_graphs) train_adj.push_back(Adjacency::build(g));
    for (const auto& g : data.val_graphs) val_adj.push_back(Adjacency::build(g));
    for (const auto& g : data.test_graphs) test_adj.push_back(Adjacency::build(g));

    AdamW opt(cfg.lr, cfg.weight_decay);
    Rng dropout_rng(mix_seed(cfg.seed, hash_tag("dropout")));
    RunResult result;
    result.best_val_metric = -std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<Tensor> parts;
        std::vector<int> labels;
        for (std::size_t gi = 0; gi < data.train_graphs.size(); ++gi) {
            const Graph& g = data.train_graphs[gi];
            if (cfg.task == Task::node) {
                const auto idx = sample_pair_batch(
                    g, cfg.pair_batch,
                    mix_seed(cfg.seed, hash_tag("pairs"), static_cast<std::uint64_t>(epoch), gi));
                const Tensor h = encode(g, train_adj[gi], model.encoder, true, dropout_rng);
                parts.push_back(gather_rows(h, idx));
                for (std::size_t v : idx) labels.push_back(g.labels[v]);
            } else {
                const Tensor h = encode(g, train_adj[gi], model.encoder, true, dropout_rng);
                parts.push_back(readout(h));
                labels.push_back(g.graph_label());
            }
        }
        Tensor embeddings = parts.front();
        for (std::size_t i = 1; i < parts.size(); ++i) embeddings = vstack(embeddings, parts[i]);
        const Tensor loss = cross_entropy(classify(embeddings, model.classifier), labels);
        model.store.zero_grad();
        loss.backward();
        opt.step(model.store);
        LossBreakdown bd;
        bd.l_i1 = loss.item();
        bd.total = loss.item();
        result.loss_history.push_back(bd);

        if (!data.val_graphs.empty()) {
            const MetricReport val = evaluate_split(data.val_graphs, val_adj, model, cfg);
            result.val_history.push_back(val.mean);
            if (val.mean > result.best_val_metric) {
                result.best_val_metric = val.mean;
                result.epoch_of_best = epoch;
                result.best_params = model.store.flatten();
            }
        }
    }
    result.final_params = model.store.flatten();
    if (result.best_params.empty()) result.best_params = result.final_params;
    model.store.load_flat(result.best_params);
    if (!data.test_graphs.empty())
        result.test_metric = evaluate_split(data.test_graphs, test_adj, model, cfg).mean;
    return result;
}

} // namespace testsupport
