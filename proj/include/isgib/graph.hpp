#pragma once

#include <algorithm>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "isgib/error.hpp"
#include "isgib/matrix.hpp"
#include "isgib/rng.hpp"

namespace isgib {

enum class Task { node, graph };

inline std::string to_string(Task t) { return t == Task::node ? "node" : "graph"; }
inline Task task_from_string(const std::string& s) {
    if (s == "node") return Task::node;
    if (s == "graph") return Task::graph;
    fail(errc::format, "unknown task '" + s + "' (expected node|graph)");
}

// Sparse attributed graph. Edges are stored as given; neighborhood queries
// treat them as undirected (directed input is symmetrized at load).
struct Graph {
    std::size_t num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    Matrix features;              // [num_nodes x d_in]
    std::vector<int> labels;      // per node (node task) or a single entry (graph task)
    std::optional<int> domain_id; // shift-copy / domain tag

    std::size_t feature_dim() const { return features.cols; }

    int graph_label() const {
        require(labels.size() == 1, errc::dataset, "graph_label: not a graph-labeled graph");
        return labels[0];
    }
};

inline void validate_graph(const Graph& g, Task task, int num_classes, const std::string& name) {
    require(g.features.rows == g.num_nodes, errc::dataset,
            name + ": features row count " + std::to_string(g.features.rows) +
                " does not match num_nodes " + std::to_string(g.num_nodes));
    for (const auto& [u, v] : g.edges) {
        require(u >= 0 && v >= 0 && static_cast<std::size_t>(u) < g.num_nodes &&
                    static_cast<std::size_t>(v) < g.num_nodes,
                errc::dataset, name + ": edge endpoint out of range");
    }
    const std::size_t expected = task == Task::node ? g.num_nodes : 1;
    require(g.labels.size() == expected, errc::dataset,
            name + ": label count " + std::to_string(g.labels.size()) + " (expected " +
                std::to_string(expected) + ")");
    for (int y : g.labels)
        require(y >= 0 && y < num_classes, errc::dataset,
                name + ": label " + std::to_string(y) + " out of range [0, " +
                    std::to_string(num_classes) + ")");
}

// Undirected adjacency in CSR form, deduplicated, self-loops dropped.
struct Adjacency {
    std::vector<int> offsets; // size n+1
    std::vector<int> nbrs;

    static Adjacency build(const Graph& g) {
        const std::size_t n = g.num_nodes;
        std::vector<std::vector<int>> lists(n);
        for (const auto& [u, v] : g.edges) {
            if (u == v) continue;
            lists[static_cast<std::size_t>(u)].push_back(v);
            lists[static_cast<std::size_t>(v)].push_back(u);
        }
        Adjacency adj;
        adj.offsets.assign(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& l = lists[i];
            std::sort(l.begin(), l.end());
            l.erase(std::unique(l.begin(), l.end()), l.end());
            adj.offsets[i + 1] = adj.offsets[i] + static_cast<int>(l.size());
        }
        adj.nbrs.reserve(static_cast<std::size_t>(adj.offsets[n]));
        for (auto& l : lists) adj.nbrs.insert(adj.nbrs.end(), l.begin(), l.end());
        return adj;
    }

    std::size_t num_nodes() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    int degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }
    const int* begin(std::size_t v) const { return nbrs.data() + offsets[v]; }
    const int* end(std::size_t v) const { return nbrs.data() + offsets[v + 1]; }
};

// Nodes within `hops` undirected steps of `center`, ascending original index.
inline std::vector<int> khop_neighborhood(const Adjacency& adj, int center, int hops) {
    require(center >= 0 && static_cast<std::size_t>(center) < adj.num_nodes(), errc::domain,
            "khop_neighborhood: center out of range");
    std::vector<int> dist(adj.num_nodes(), -1);
    std::queue<int> frontier;
    dist[static_cast<std::size_t>(center)] = 0;
    frontier.push(center);
    std::vector<int> found{center};
    while (!frontier.empty()) {
        const int v = frontier.front();
        frontier.pop();
        if (dist[static_cast<std::size_t>(v)] >= hops) continue;
        for (const int* it = adj.begin(static_cast<std::size_t>(v)); it != adj.end(static_cast<std::size_t>(v)); ++it) {
            if (dist[static_cast<std::size_t>(*it)] < 0) {
                dist[static_cast<std::size_t>(*it)] = dist[static_cast<std::size_t>(v)] + 1;
                found.push_back(*it);
                frontier.push(*it);
            }
        }
    }
    std::sort(found.begin(), found.end());
    return found;
}

// Induced subgraph on the k-hop ball around `center`. The center's label
// becomes the (single) graph label; node order is ascending original index.
inline Graph ego_graph(const Graph& g, int center, int hops) {
    require(center >= 0 && static_cast<std::size_t>(center) < g.num_nodes, errc::domain,
            "ego_graph: center " + std::to_string(center) + " out of range");
    require(hops >= 0, errc::domain, "ego_graph: hops must be >= 0");
    const Adjacency adj = Adjacency::build(g);
    const std::vector<int> keep = khop_neighborhood(adj, center, hops);

    std::vector<int> remap(g.num_nodes, -1);
    for (std::size_t i = 0; i < keep.size(); ++i) remap[static_cast<std::size_t>(keep[i])] = static_cast<int>(i);

    Graph out;
    out.num_nodes = keep.size();
    out.features = Matrix(keep.size(), g.features.cols);
    for (std::size_t i = 0; i < keep.size(); ++i)
        std::copy_n(g.features.row(static_cast<std::size_t>(keep[i])), g.features.cols, out.features.row(i));
    for (const auto& [u, v] : g.edges) {
        const int ru = remap[static_cast<std::size_t>(u)];
        const int rv = remap[static_cast<std::size_t>(v)];
        if (ru >= 0 && rv >= 0) out.edges.emplace_back(ru, rv);
    }
    require(!g.labels.empty(), errc::dataset, "ego_graph: source graph carries no labels");
    const int center_label =
        g.labels.size() == g.num_nodes ? g.labels[static_cast<std::size_t>(center)] : g.labels[0];
    out.labels = {center_label};
    out.domain_id = g.domain_id;
    return out;
}

// Train/val/test partition of a dataset, plus its task flavor and the label /
// feature arities shared by every member graph.
struct DatasetSplit {
    Task task = Task::node;
    int num_classes = 0;
    std::size_t feature_dim = 0;
    std::vector<Graph> train_graphs;
    std::vector<Graph> val_graphs;
    std::vector<Graph> test_graphs;

    std::size_t total_graphs() const {
        return train_graphs.size() + val_graphs.size() + test_graphs.size();
    }
};

inline void validate_split(const DatasetSplit& split) {
    for (const auto* set : {&split.train_graphs, &split.val_graphs, &split.test_graphs})
        for (const auto& g : *set) {
            validate_graph(g, split.task, split.num_classes, "graph");
            require(g.features.cols == split.feature_dim, errc::dataset,
                    "graph feature width disagrees with dataset feature_dim");
        }
}

// --- synthetic distribution shift -------------------------------------------

struct ShiftSpec {
    double mu = 0.0;
    double sigma = 1.0;
    std::size_t num_copies = 1;
    std::uint64_t seed = 0;
};

// `num_copies` feature-noised copies of `g`. Copy k draws its noise from the
// substream mix_seed(seed, "noise", k), so copies are order-insensitive.
// Topology and labels are untouched.
inline std::vector<Graph> inject_noise(const Graph& g, const ShiftSpec& spec) {
    require(spec.sigma >= 0.0, errc::domain, "inject_noise: sigma must be >= 0");
    require(spec.num_copies >= 1, errc::domain, "inject_noise: num_copies must be >= 1");
    std::vector<Graph> out;
    out.reserve(spec.num_copies);
    for (std::size_t k = 0; k < spec.num_copies; ++k) {
        Rng rng(mix_seed(spec.seed, hash_tag("noise"), k));
        Graph copy = g;
        for (double& x : copy.features.data) x += rng.normal(spec.mu, spec.sigma);
        copy.domain_id = static_cast<int>(k);
        out.push_back(std::move(copy));
    }
    return out;
}

// The 10-copy shift benchmark: 4 train / 2 val / 4 test copies of one
// node-labeled graph. Train copies are clean unless `train_noise` is set
// (the noise-scale sweep trains on mu=0, sigma=1 copies); val/test copies
// carry `val_test` noise, mu=0 sigma=1 by default.
inline DatasetSplit make_shift_benchmark(const Graph& g, int num_classes, std::uint64_t seed,
                                         ShiftSpec val_test = {0.0, 1.0, 0, 0},
                                         std::optional<ShiftSpec> train_noise = std::nullopt) {
    require(g.labels.size() == g.num_nodes, errc::dataset,
            "make_shift_benchmark: expects a node-labeled graph");
    DatasetSplit split;
    split.task = Task::node;
    split.num_classes = num_classes;
    split.feature_dim = g.features.cols;

    constexpr std::size_t kTrain = 4, kVal = 2, kTest = 4;

    std::vector<Graph> train;
    if (train_noise.has_value()) {
        ShiftSpec ts = *train_noise;
        ts.num_copies = kTrain;
        ts.seed = mix_seed(seed, hash_tag("train"));
        train = inject_noise(g, ts);
    } else {
        for (std::size_t k = 0; k < kTrain; ++k) {
            Graph copy = g;
            copy.domain_id = static_cast<int>(k);
            train.push_back(std::move(copy));
        }
    }

    ShiftSpec vt = val_test;
    vt.num_copies = kVal + kTest;
    vt.seed = mix_seed(seed, hash_tag("valtest"));
    std::vector<Graph> noisy = inject_noise(g, vt);

    split.train_graphs = std::move(train);
    for (std::size_t k = 0; k < kVal; ++k) {
        noisy[k].domain_id = static_cast<int>(kTrain + k);
        split.val_graphs.push_back(std::move(noisy[k]));
    }
    for (std::size_t k = 0; k < kTest; ++k) {
        noisy[kVal + k].domain_id = static_cast<int>(kTrain + kVal + k);
        split.test_graphs.push_back(std::move(noisy[kVal + k]));
    }
    return split;
}

} // namespace isgib
