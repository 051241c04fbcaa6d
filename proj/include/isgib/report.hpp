#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <zlib.h>

#include "isgib/config.hpp"
#include "isgib/synthetic.hpp"

namespace isgib {

// ---- results table ---------------------------------------------------------------

struct ResultRow {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string metric_name;
    double best_val = 0.0;
    double test = 0.0;
    int epoch_of_best = -1;
};

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    out << "config_hash,seed,metric,best_val,test,epoch_of_best\n";
    for (const auto& r : rows)
        out << r.config_hash << "," << r.seed << "," << r.metric_name << ","
            << format_double(r.best_val) << "," << format_double(r.test) << "," << r.epoch_of_best
            << "\n";
    require(out.good(), errc::io, "write failed: " + path);
}

// ---- noise-scale sweep -----------------------------------------------------------

struct SweepPoint {
    double mu = 0.0;
    double sigma = 1.0;
};

// Grid used throughout the robustness runs.
inline std::vector<SweepPoint> default_sweep_grid() {
    return {{0.0, 1.0}, {0.2, 1.5}, {0.5, 2.0}, {1.0, 1.0}, {1.0, 2.0}};
}

struct SweepRow {
    double mu = 0.0;
    double sigma = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t runs = 0;
};

// One aggregated row per (mu, sigma): rebuild the shift benchmark with that
// val/test noise (training copies carry mu=0, sigma=1 in sweep mode), run all
// seeds, and aggregate the test metric. The same shift seed is reused across
// grid points so rows differ only in the injected noise scale.
inline std::vector<SweepRow> noise_sweep(const RunConfig& base, const Graph& base_graph,
                                         int num_classes, const std::vector<SweepPoint>& grid,
                                         std::uint64_t shift_seed, int threads = 1) {
    require(!grid.empty(), errc::config, "noise_sweep: empty sweep grid");
    require(base_graph.labels.size() == base_graph.num_nodes, errc::dataset,
            "noise_sweep: needs a node-labeled base graph");
    std::vector<SweepRow> rows;
    for (const auto& point : grid) {
        const DatasetSplit split =
            make_shift_benchmark(base_graph, num_classes, shift_seed,
                                 ShiftSpec{point.mu, point.sigma, 0, 0}, ShiftSpec{0.0, 1.0, 0, 0});
        std::vector<RunConfig> configs;
        for (std::uint64_t s : base.seeds) {
            RunConfig c = base;
            c.seed = s;
            configs.push_back(c);
        }
        std::vector<RunResult> results(configs.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= configs.size()) return;
                try {
                    results[i] = train(configs[i], split);
                } catch (const std::exception& e) {
                    results[i].failed = true;
                    results[i].error = e.what();
                }
            }
        };
        const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(configs.size())));
        if (n_threads == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        const AggregateRow agg = aggregate_results("sweep", results);
        rows.push_back({point.mu, point.sigma, agg.mean, agg.stddev, agg.runs});
    }
    return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    out << "mu,sigma,mean,stddev,runs\n";
    for (const auto& r : rows)
        out << format_double(r.mu) << "," << format_double(r.sigma) << "," << format_double(r.mean)
            << "," << format_double(r.stddev) << "," << r.runs << "\n";
    require(out.good(), errc::io, "write failed: " + path);
}

// ---- heat maps --------------------------------------------------------------------

inline Matrix minmax_normalize(const Matrix& m) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : m.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Matrix out(m.rows, m.cols);
    if (hi > lo)
        for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = (m.data[i] - lo) / (hi - lo);
    return out;
}

// || minmax(R_H) - minmax(R_Y) ||_F : how far the representation relations sit
// from the label relations after scale is removed.
inline double alignment_score(const Matrix& relation_reps, const Matrix& relation_labels) {
    require(relation_reps.rows == relation_labels.rows && relation_reps.cols == relation_labels.cols,
            errc::shape, "alignment_score: matrix shapes disagree");
    const Matrix a = minmax_normalize(relation_reps);
    const Matrix b = minmax_normalize(relation_labels);
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return std::sqrt(s);
}

// Fixed evaluation batch for the heat maps: instances of the first test graph
// (val, then train, as fallbacks), sorted by class so block structure is
// visible, capped for readability.
struct HeatmapBatch {
    Matrix inputs;      // pooled input rows
    Matrix embeddings;  // encoder output rows
    Matrix labels_onehot;
    std::vector<int> labels;
};

inline HeatmapBatch heatmap_batch(const RunConfig& cfg, const DatasetSplit& data,
                                  const BuiltModel& model, std::size_t max_instances = 256) {
    HeatmapBatch out;
    NoGradGuard ng;
    Rng unused(0);
    if (cfg.task == Task::node) {
        const std::vector<Graph>* source = &data.test_graphs;
        if (source->empty()) source = &data.val_graphs;
        if (source->empty()) source = &data.train_graphs;
        require(!source->empty(), errc::dataset, "heatmap: dataset has no graphs");
        const Graph& g = source->front();
        const Adjacency adj = Adjacency::build(g);

        std::vector<std::size_t> order(g.num_nodes);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&g](std::size_t a, std::size_t b) { return g.labels[a] < g.labels[b]; });
        if (order.size() > max_instances) {
            // even stride over the class-sorted order keeps all classes present
            std::vector<std::size_t> kept;
            for (std::size_t i = 0; i < max_instances; ++i)
                kept.push_back(order[i * order.size() / max_instances]);
            order = kept;
        }

        InputPooler pooler(g, adj, cfg.encoder.layers);
        const Matrix emb = encode(g, adj, model.encoder, false, unused).to_matrix();
        out.inputs = Matrix(order.size(), g.features.cols);
        out.embeddings = Matrix(order.size(), emb.cols);
        for (std::size_t i = 0; i < order.size(); ++i) {
            std::copy_n(pooler.pooled_row(static_cast<int>(order[i])), g.features.cols, out.inputs.row(i));
            std::copy_n(emb.row(order[i]), emb.cols, out.embeddings.row(i));
            out.labels.push_back(g.labels[order[i]]);
        }
    } else {
        std::vector<const Graph*> graphs;
        for (const auto& g : data.test_graphs) graphs.push_back(&g);
        if (graphs.empty())
            for (const auto& g : data.train_graphs) graphs.push_back(&g);
        require(graphs.size() >= 2, errc::dataset, "heatmap: needs at least 2 graphs");
        std::stable_sort(graphs.begin(), graphs.end(),
                         [](const Graph* a, const Graph* b) { return a->graph_label() < b->graph_label(); });
        if (graphs.size() > max_instances) graphs.resize(max_instances);
        out.inputs = Matrix(graphs.size(), data.feature_dim);
        out.embeddings = Matrix(graphs.size(), static_cast<std::size_t>(cfg.encoder.hidden));
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            const Graph& g = *graphs[i];
            const Adjacency adj = Adjacency::build(g);
            for (std::size_t r = 0; r < g.num_nodes; ++r)
                for (std::size_t j = 0; j < data.feature_dim; ++j)
                    out.inputs.at(i, j) += g.features.at(r, j) / static_cast<double>(g.num_nodes);
            const Matrix row = readout(encode(g, adj, model.encoder, false, unused)).to_matrix();
            std::copy_n(row.row(0), row.cols, out.embeddings.row(i));
            out.labels.push_back(g.graph_label());
        }
    }
    out.labels_onehot = one_hot(out.labels, cfg.encoder.num_classes);
    return out;
}

// Grayscale PNG of the min-max normalized matrix, one pixel per cell.
inline void write_matrix_png(const std::string& path, const Matrix& m) {
    const Matrix norm = minmax_normalize(m);
    const auto w = static_cast<std::uint32_t>(m.cols);
    const auto h = static_cast<std::uint32_t>(m.rows);
    std::vector<unsigned char> raw;
    raw.reserve(h * (w + 1));
    for (std::size_t i = 0; i < h; ++i) {
        raw.push_back(0); // filter: none
        for (std::size_t j = 0; j < w; ++j)
            raw.push_back(static_cast<unsigned char>(std::lround(norm.at(i, j) * 255.0)));
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    require(compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) == Z_OK,
            errc::io, "png: deflate failed");
    comp.resize(comp_len);

    std::ofstream out(path, std::ios::binary);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    auto be32 = [](std::uint32_t v) {
        return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                            static_cast<unsigned char>(v >> 16),
                                            static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v)};
    };
    auto chunk = [&](const char type[5], const std::vector<unsigned char>& payload) {
        const auto len = be32(static_cast<std::uint32_t>(payload.size()));
        out.write(reinterpret_cast<const char*>(len.data()), 4);
        std::vector<unsigned char> body(type, type + 4);
        body.insert(body.end(), payload.begin(), payload.end());
        out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
        const auto crc = be32(static_cast<std::uint32_t>(
            crc32(0L, body.data(), static_cast<uInt>(body.size()))));
        out.write(reinterpret_cast<const char*>(crc.data()), 4);
    };
    const unsigned char signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(signature), 8);
    std::vector<unsigned char> ihdr;
    for (unsigned char c : be32(w)) ihdr.push_back(c);
    for (unsigned char c : be32(h)) ihdr.push_back(c);
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", comp);
    chunk("IEND", {});
    require(out.good(), errc::io, "write failed: " + path);
}

// CSV matrices (and optional PNGs) for the input / representation / label
// relations over the fixed evaluation batch, plus the scalar alignment score.
inline double export_heatmaps(const RunConfig& cfg, const DatasetSplit& data, const BuiltModel& model,
                              const RelationParams& relation_params, const std::string& out_dir,
                              bool render_png = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const HeatmapBatch batch = heatmap_batch(cfg, data, model);

    const Matrix r_inputs = relation_matrix(batch.inputs, cfg.metric, relation_params);
    const Matrix r_reps = relation_matrix(batch.embeddings, cfg.metric, relation_params);
    const Matrix r_labels = relation_matrix(batch.labels_onehot, cfg.metric, relation_params);

    const std::vector<std::string> header = {
        "metric: " + to_string(cfg.metric),
        "rows/cols sorted by class; normalization for the alignment score: minmax",
    };
    write_matrix_csv((fs::path(out_dir) / "heatmap_inputs.csv").string(), r_inputs, header);
    write_matrix_csv((fs::path(out_dir) / "heatmap_reps.csv").string(), r_reps, header);
    write_matrix_csv((fs::path(out_dir) / "heatmap_labels.csv").string(), r_labels, header);

    const double score = alignment_score(r_reps, r_labels);
    {
        std::ofstream out(fs::path(out_dir) / "alignment.csv");
        require(out.good(), errc::io, "cannot write alignment.csv in " + out_dir);
        out << "alignment_score\n" << format_double(score) << "\n";
    }
    if (render_png) {
        write_matrix_png((fs::path(out_dir) / "heatmap_inputs.png").string(), r_inputs);
        write_matrix_png((fs::path(out_dir) / "heatmap_reps.png").string(), r_reps);
        write_matrix_png((fs::path(out_dir) / "heatmap_labels.png").string(), r_labels);
    }
    return score;
}

} // namespace isgib
