#pragma once

#include "isgib/graph.hpp"
#include "isgib/rng.hpp"

namespace isgib {

// Desk-scale node-classification generator. Classes live on a homophilous
// block-model graph; features mix two kinds of dimensions:
//   - "signal" dims: a per-class mean pattern shared within the class, so it
//     survives neighborhood averaging,
//   - "distractor" dims: node-private random values with no class content.
//     They separate the training nodes perfectly (bait for memorization via
//     the self path) but average out under neighborhood pooling and amplify
//     the injected test noise.
struct SyntheticSpec {
    std::size_t num_nodes = 300;
    int num_classes = 4;
    std::size_t signal_dims = 8;
    std::size_t distractor_dims = 40;
    double signal_scale = 1.0;
    double signal_noise = 0.3;
    double distractor_scale = 0.8;
    double p_intra = 0.03;
    double p_inter = 0.003;

    std::size_t feature_dim() const { return signal_dims + distractor_dims; }
};

inline Graph make_synthetic_graph(const SyntheticSpec& spec, std::uint64_t seed) {
    require(spec.num_classes >= 2, errc::config, "synthetic: num_classes must be >= 2");
    require(spec.num_nodes >= static_cast<std::size_t>(spec.num_classes), errc::config,
            "synthetic: need at least one node per class");
    require(spec.signal_dims >= 1, errc::config, "synthetic: signal_dims must be >= 1");

    const std::size_t n = spec.num_nodes;
    const std::size_t d = spec.feature_dim();
    const int c = spec.num_classes;

    Graph g;
    g.num_nodes = n;
    g.features = Matrix(n, d);
    g.labels.resize(n);

    // Balanced classes in contiguous blocks.
    for (std::size_t v = 0; v < n; ++v)
        g.labels[v] = static_cast<int>(v * static_cast<std::size_t>(c) / n);

    // Per-class sign pattern over the signal dims, fixed by the seed.
    Rng pattern_rng(mix_seed(seed, hash_tag("pattern")));
    Matrix class_pattern(static_cast<std::size_t>(c), spec.signal_dims);
    for (double& x : class_pattern.data)
        x = pattern_rng.next_u64() & 1 ? spec.signal_scale : -spec.signal_scale;

    Rng feat_rng(mix_seed(seed, hash_tag("features")));
    for (std::size_t v = 0; v < n; ++v) {
        const auto y = static_cast<std::size_t>(g.labels[v]);
        double* row = g.features.row(v);
        for (std::size_t j = 0; j < spec.signal_dims; ++j)
            row[j] = class_pattern.at(y, j) + feat_rng.normal(0.0, spec.signal_noise);
        for (std::size_t j = 0; j < spec.distractor_dims; ++j)
            row[spec.signal_dims + j] = feat_rng.normal(0.0, spec.distractor_scale);
    }

    Rng edge_rng(mix_seed(seed, hash_tag("edges")));
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v) {
            const double p = g.labels[u] == g.labels[v] ? spec.p_intra : spec.p_inter;
            if (edge_rng.uniform() < p) g.edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
        }

    return g;
}

// Small graph-classification set: class 0/1 from the sign of a planted mean
// shift, for exercising the readout path at desk scale.
inline DatasetSplit make_synthetic_graph_task(std::size_t num_graphs, std::size_t nodes_per_graph,
                                              std::size_t feature_dim, std::uint64_t seed) {
    require(num_graphs >= 4, errc::config, "synthetic graph task: need at least 4 graphs");
    DatasetSplit split;
    split.task = Task::graph;
    split.num_classes = 2;
    split.feature_dim = feature_dim;

    for (std::size_t gi = 0; gi < num_graphs; ++gi) {
        Rng rng(mix_seed(seed, hash_tag("graph-task"), gi));
        const int label = static_cast<int>(gi % 2);
        const double shift = label == 0 ? -0.75 : 0.75;

        Graph g;
        g.num_nodes = nodes_per_graph;
        g.features = Matrix(nodes_per_graph, feature_dim);
        for (double& x : g.features.data) x = shift + rng.normal(0.0, 1.0);
        g.labels = {label};
        for (std::size_t u = 0; u + 1 < nodes_per_graph; ++u)
            g.edges.emplace_back(static_cast<int>(u), static_cast<int>(u + 1)); // path backbone
        for (std::size_t u = 0; u < nodes_per_graph; ++u)
            for (std::size_t v = u + 2; v < nodes_per_graph; ++v)
                if (rng.uniform() < 0.1) g.edges.emplace_back(static_cast<int>(u), static_cast<int>(v));

        const std::size_t r = gi % 10;
        if (r < 6) split.train_graphs.push_back(std::move(g));
        else if (r < 8) split.val_graphs.push_back(std::move(g));
        else split.test_graphs.push_back(std::move(g));
    }
    return split;
}

} // namespace isgib
