#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "isgib/dataset.hpp"
#include "isgib/metrics.hpp"
#include "isgib/objective.hpp"

namespace isgib {

struct RunConfig {
    Task task = Task::node;
    std::string dataset;
    EncoderConfig encoder; // d_in / num_classes are resolved from the dataset
    Gammas gammas{0.5, 0.1, 0.5};
    RelationMetric metric = RelationMetric::dot;
    RelationLoss relation_loss = RelationLoss::auto_select;
    IbSign ib_sign = IbSign::paper;
    EvalMetric eval_metric = EvalMetric::accuracy;
    CriticDistance critic_distance = CriticDistance::neg_l2;
    int critic_hidden = 64;
    int critic_proj = 64;
    double lr = 1e-3;
    double weight_decay = 1e-6;
    int epochs = 200;
    std::size_t pair_batch = 128; // per-graph node sample for the pairwise relationships
    int num_envs = 2;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4}; // for aggregate runs

    void validate() const {
        require(lr > 0.0, errc::config, "config: lr must be > 0");
        require(weight_decay >= 0.0, errc::config, "config: weight_decay must be >= 0");
        require(epochs >= 1, errc::config, "config: epochs must be >= 1");
        require(pair_batch >= 2, errc::config, "config: pair_batch must be >= 2");
        require(num_envs >= 2, errc::config, "config: num_envs must be >= 2");
        require(critic_hidden >= 1 && critic_proj >= 1, errc::config, "config: critic dims must be >= 1");
    }

    bool uses_individual_critic() const { return gammas.g1 != 0.0; }
    bool uses_structural_critic() const { return gammas.g3 != 0.0; }
    bool uses_environments() const { return uses_individual_critic() || uses_structural_critic(); }
};

struct RunResult {
    bool failed = false;
    std::string error;
    double best_val_metric = 0.0;
    double test_metric = 0.0;
    int epoch_of_best = -1;
    std::vector<LossBreakdown> loss_history;
    std::vector<double> val_history;
    std::string checkpoint_path;
    std::vector<double> best_params;  // flat, declared order
    std::vector<double> final_params; // parameters after the last epoch
};

// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& store) {
        const auto& params = store.tensors();
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].numel(), 0.0);
                v_[i].assign(params[i].numel(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i];
            const auto& g = p.grad();
            auto& x = p.mutable_value();
            for (std::size_t j = 0; j < x.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                x[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * x[j]);
            }
        }
    }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---- model assembly ------------------------------------------------------------

struct BuiltModel {
    ParamStore store;
    EncoderParams encoder;
    ClassifierParams classifier;
    std::optional<Critic> critic_individual;
    std::optional<Critic> critic_structural;

    BuiltModel(std::uint64_t seed) : store(seed) {}
};

// Width of the structural batch: the structural critic consumes rows of N x N
// relation matrices, so its input width is pinned by the training batch size.
inline std::size_t structural_batch_width(const RunConfig& cfg, const DatasetSplit& data) {
    if (cfg.task == Task::graph) return data.train_graphs.size();
    std::size_t n = 0;
    for (const auto& g : data.train_graphs) n += std::min(g.num_nodes, cfg.pair_batch);
    return n;
}

inline BuiltModel build_model(const RunConfig& cfg, std::size_t structural_width,
                              std::uint64_t seed) {
    BuiltModel m(seed);
    m.encoder = EncoderParams::create(cfg.encoder, m.store);
    m.classifier = ClassifierParams::create(cfg.encoder, m.store);
    const auto hidden = static_cast<std::size_t>(cfg.critic_hidden);
    const auto proj = static_cast<std::size_t>(cfg.critic_proj);
    if (cfg.uses_individual_critic())
        m.critic_individual =
            Critic::create("critic_i", static_cast<std::size_t>(cfg.encoder.d_in),
                           static_cast<std::size_t>(cfg.encoder.hidden), hidden, proj,
                           cfg.critic_distance, m.store);
    if (cfg.uses_structural_critic()) {
        require(structural_width >= 2, errc::config, "structural critic needs a batch of >= 2");
        m.critic_structural = Critic::create("critic_s", structural_width, structural_width, hidden,
                                             proj, cfg.critic_distance, m.store);
    }
    return m;
}

inline nlohmann::json model_manifest(const RunConfig& cfg, std::size_t structural_width) {
    nlohmann::json j;
    j["task"] = to_string(cfg.task);
    j["backbone"] = to_string(cfg.encoder.backbone);
    j["layers"] = cfg.encoder.layers;
    j["hidden"] = cfg.encoder.hidden;
    j["dropout"] = cfg.encoder.dropout;
    j["d_in"] = cfg.encoder.d_in;
    j["num_classes"] = cfg.encoder.num_classes;
    j["gammas"] = {cfg.gammas.g1, cfg.gammas.g2, cfg.gammas.g3};
    j["metric"] = to_string(cfg.metric);
    j["ib_sign"] = to_string(cfg.ib_sign);
    j["critic_distance"] = to_string(cfg.critic_distance);
    j["critic_hidden"] = cfg.critic_hidden;
    j["critic_proj"] = cfg.critic_proj;
    j["structural_width"] = structural_width;
    j["pair_batch"] = cfg.pair_batch;
    return j;
}

// ---- input pooling -------------------------------------------------------------

// Mean of the raw feature rows over each node's L-hop neighborhood (the input
// side the compression terms see). Rows are computed on demand and memoized.
class InputPooler {
public:
    InputPooler(const Graph& g, const Adjacency& adj, int hops)
        : g_(&g), adj_(&adj), hops_(hops), pooled_(g.num_nodes, g.features.cols),
          ready_(g.num_nodes, 0) {}

    const double* pooled_row(int v) {
        if (!ready_[static_cast<std::size_t>(v)]) {
            const auto ball = khop_neighborhood(*adj_, v, hops_);
            double* out = pooled_.row(static_cast<std::size_t>(v));
            for (int u : ball)
                for (std::size_t j = 0; j < g_->features.cols; ++j)
                    out[j] += g_->features.at(static_cast<std::size_t>(u), j);
            for (std::size_t j = 0; j < g_->features.cols; ++j)
                out[j] /= static_cast<double>(ball.size());
            ready_[static_cast<std::size_t>(v)] = 1;
        }
        return pooled_.row(static_cast<std::size_t>(v));
    }

    // Raw feature rows of the node's ego neighborhood, for the set-valued
    // relation metrics.
    Matrix sample_set(int v) const {
        const auto ball = khop_neighborhood(*adj_, v, hops_);
        Matrix s(ball.size(), g_->features.cols);
        for (std::size_t i = 0; i < ball.size(); ++i)
            std::copy_n(g_->features.row(static_cast<std::size_t>(ball[i])), g_->features.cols, s.row(i));
        return s;
    }

private:
    const Graph* g_;
    const Adjacency* adj_;
    int hops_;
    Matrix pooled_;
    std::vector<char> ready_;
};

// ---- evaluation ----------------------------------------------------------------

namespace detail {

inline double metric_for_graph(const Matrix& logits, const std::vector<int>& labels,
                               EvalMetric metric) {
    if (metric == EvalMetric::accuracy) return accuracy(logits, labels);
    require(logits.cols == 2, errc::config, "roc_auc evaluation expects 2 classes");
    std::vector<double> scores(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double a = logits.at(i, 0), b = logits.at(i, 1);
        const double mx = std::max(a, b);
        const double ea = std::exp(a - mx), eb = std::exp(b - mx);
        scores[i] = eb / (ea + eb);
    }
    return roc_auc(scores, labels);
}

} // namespace detail

// Metric over a list of graphs at the current parameters. Node task: one value
// per graph; graph task: one value for the whole set.
inline MetricReport evaluate_split(const std::vector<Graph>& graphs,
                                   const std::vector<Adjacency>& adjs, const BuiltModel& model,
                                   const RunConfig& cfg) {
    require(!graphs.empty(), errc::dataset, "evaluate_split: empty graph set");
    NoGradGuard ng;
    Rng unused(0);
    std::vector<double> values;
    if (cfg.task == Task::node) {
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            const Tensor h = encode(graphs[i], adjs[i], model.encoder, false, unused);
            const Matrix logits = classify(h, model.classifier).to_matrix();
            values.push_back(detail::metric_for_graph(logits, graphs[i].labels, cfg.eval_metric));
        }
    } else {
        Matrix logits(graphs.size(), static_cast<std::size_t>(cfg.encoder.num_classes));
        std::vector<int> labels(graphs.size());
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            const Tensor h = encode(graphs[i], adjs[i], model.encoder, false, unused);
            const Matrix row = classify(readout(h), model.classifier).to_matrix();
            std::copy_n(row.row(0), row.cols, logits.row(i));
            labels[i] = graphs[i].graph_label();
        }
        values.push_back(detail::metric_for_graph(logits, labels, cfg.eval_metric));
    }
    return make_report(cfg.eval_metric, std::move(values));
}

// ---- training ------------------------------------------------------------------

namespace detail {

struct SplitRuntime {
    std::vector<Adjacency> train_adj, val_adj, test_adj;
    std::vector<InputPooler> train_pool;

    SplitRuntime(const DatasetSplit& data, int hops) {
        for (const auto& g : data.train_graphs) train_adj.push_back(Adjacency::build(g));
        for (const auto& g : data.val_graphs) val_adj.push_back(Adjacency::build(g));
        for (const auto& g : data.test_graphs) test_adj.push_back(Adjacency::build(g));
        train_pool.reserve(data.train_graphs.size());
        for (std::size_t i = 0; i < data.train_graphs.size(); ++i)
            train_pool.emplace_back(data.train_graphs[i], train_adj[i], hops);
    }
};

inline EnvironmentBatch assemble_batch(const RunConfig& cfg, const DatasetSplit& data,
                                       SplitRuntime& rt, const BuiltModel& model, int epoch,
                                       Rng& dropout_rng) {
    EnvironmentBatch batch;
    const bool want_sets = cfg.metric == RelationMetric::cmd || cfg.metric == RelationMetric::mmd;
    std::vector<Tensor> embedding_parts;

    if (cfg.task == Task::node) {
        for (std::size_t gi = 0; gi < data.train_graphs.size(); ++gi) {
            const Graph& g = data.train_graphs[gi];
            const auto idx = sample_pair_batch(
                g, cfg.pair_batch, mix_seed(cfg.seed, hash_tag("pairs"), static_cast<std::uint64_t>(epoch), gi));
            const Tensor h = encode(g, rt.train_adj[gi], model.encoder, true, dropout_rng);
            embedding_parts.push_back(gather_rows(h, idx));
            for (std::size_t v : idx) {
                batch.instances.emplace_back(static_cast<int>(gi), static_cast<int>(v));
                batch.labels.push_back(g.labels[v]);
                batch.copy_ids.push_back(g.domain_id.value_or(static_cast<int>(gi)));
            }
        }
    } else {
        for (std::size_t gi = 0; gi < data.train_graphs.size(); ++gi) {
            const Graph& g = data.train_graphs[gi];
            const Tensor h = encode(g, rt.train_adj[gi], model.encoder, true, dropout_rng);
            embedding_parts.push_back(readout(h));
            batch.instances.emplace_back(static_cast<int>(gi), -1);
            batch.labels.push_back(g.graph_label());
            batch.copy_ids.push_back(g.domain_id.value_or(static_cast<int>(gi)));
        }
    }

    require(!embedding_parts.empty(), errc::dataset, "training set is empty");
    Tensor embeddings = embedding_parts.front();
    for (std::size_t i = 1; i < embedding_parts.size(); ++i)
        embeddings = vstack(embeddings, embedding_parts[i]);
    batch.embeddings = embeddings;
    batch.logits = classify(embeddings, model.classifier);

    const std::size_t n = batch.labels.size();
    batch.inputs_pooled = Matrix(n, data.feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [gi, v] = batch.instances[i];
        if (cfg.task == Task::node) {
            std::copy_n(rt.train_pool[static_cast<std::size_t>(gi)].pooled_row(v), data.feature_dim,
                        batch.inputs_pooled.row(i));
            if (want_sets)
                batch.input_sample_sets.push_back(
                    rt.train_pool[static_cast<std::size_t>(gi)].sample_set(v));
        } else {
            const Graph& g = data.train_graphs[static_cast<std::size_t>(gi)];
            double* out = batch.inputs_pooled.row(i);
            for (std::size_t r = 0; r < g.num_nodes; ++r)
                for (std::size_t j = 0; j < data.feature_dim; ++j) out[j] += g.features.at(r, j);
            for (std::size_t j = 0; j < data.feature_dim; ++j) out[j] /= static_cast<double>(g.num_nodes);
            if (want_sets) batch.input_sample_sets.push_back(g.features);
        }
    }
    batch.labels_onehot = one_hot(batch.labels, cfg.encoder.num_classes);

    if (cfg.uses_environments())
        batch.env_ids = assign_environments(
            n, cfg.num_envs, mix_seed(cfg.seed, hash_tag("env"), static_cast<std::uint64_t>(epoch)));
    else
        batch.env_ids.assign(n, 0);
    return batch;
}

} // namespace detail

// Relation parameters (cmd bounds, mmd bandwidths) frozen from the training
// features at dataset load.
inline RelationParams freeze_relation_params(const DatasetSplit& data) {
    RelationParams params;
    std::vector<const Matrix*> mats;
    for (const auto& g : data.train_graphs) mats.push_back(&g.features);
    require(!mats.empty(), errc::dataset, "freeze_relation_params: empty training set");
    auto [lo, hi] = cmd_bounds_from(mats);
    params.cmd_lower = lo;
    params.cmd_upper = hi;
    params.mmd_bandwidths = median_heuristic_bandwidths(data.train_graphs.front().features);
    return params;
}

// One reproducible run: per epoch sample the pair batches, assign virtual
// environments, take one optimizer step on the total objective, and track the
// validation metric; the reported test metric comes from the checkpoint with
// the best validation score.
inline RunResult train(const RunConfig& cfg_in, const DatasetSplit& data,
                       const std::string& out_dir = "", const std::string& run_tag = "") {
    RunConfig cfg = cfg_in;
    cfg.encoder.d_in = static_cast<int>(data.feature_dim);
    cfg.encoder.num_classes = data.num_classes;
    cfg.validate();
    cfg.encoder.validate();
    require(!data.train_graphs.empty(), errc::dataset, "train: dataset has no training graphs");

    const std::size_t structural_width = structural_batch_width(cfg, data);
    BuiltModel model = build_model(cfg, structural_width, cfg.seed);
    detail::SplitRuntime rt(data, cfg.encoder.layers);
    const RelationParams relation_params = freeze_relation_params(data);
    AdamW optimizer(cfg.lr, cfg.weight_decay);
    Rng dropout_rng(mix_seed(cfg.seed, hash_tag("dropout")));

    RunResult result;
    result.best_val_metric = -std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EnvironmentBatch batch = detail::assemble_batch(cfg, data, rt, model, epoch, dropout_rng);
        TotalLoss tl = total_loss(batch, model.critic_individual ? &*model.critic_individual : nullptr,
                                  model.critic_structural ? &*model.critic_structural : nullptr,
                                  cfg.gammas, cfg.metric, relation_params, cfg.ib_sign, cfg.relation_loss);
        model.store.zero_grad();
        tl.total.backward();
        optimizer.step(model.store);
        result.loss_history.push_back(tl.breakdown);

        if (!data.val_graphs.empty()) {
            const MetricReport val = evaluate_split(data.val_graphs, rt.val_adj, model, cfg);
            result.val_history.push_back(val.mean);
            if (val.mean > result.best_val_metric) {
                result.best_val_metric = val.mean;
                result.epoch_of_best = epoch;
                result.best_params = model.store.flatten();
            }
        }
    }

    result.final_params = model.store.flatten();
    if (result.best_params.empty()) { // no validation set: final model stands in
        result.best_params = result.final_params;
        result.epoch_of_best = cfg.epochs - 1;
        result.best_val_metric = 0.0;
    }

    model.store.load_flat(result.best_params);
    if (!data.test_graphs.empty())
        result.test_metric = evaluate_split(data.test_graphs, rt.test_adj, model, cfg).mean;

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        const std::string tag = run_tag.empty() ? "seed" + std::to_string(cfg.seed) : run_tag;
        result.checkpoint_path = (fs::path(out_dir) / ("checkpoint_" + tag + ".json")).string();
        save_checkpoint(result.checkpoint_path, model.store, model_manifest(cfg, structural_width),
                        cfg.seed, result.epoch_of_best);
        std::ofstream log(fs::path(out_dir) / ("train_log_" + tag + ".csv"));
        require(log.good(), errc::io, "cannot write training log in " + out_dir);
        log << "step,l_i1,l_i2,l_s1,l_s2,total\n";
        for (std::size_t s = 0; s < result.loss_history.size(); ++s) {
            const auto& b = result.loss_history[s];
            log << s << "," << format_double(b.l_i1) << "," << format_double(b.l_i2) << ","
                << format_double(b.l_s1) << "," << format_double(b.l_s2) << ","
                << format_double(b.total) << "\n";
        }
    }
    // leave the store holding the best parameters
    return result;
}

// ---- run matrix ----------------------------------------------------------------

class DatasetCache {
public:
    const DatasetSplit& get(const std::string& path, Task task) {
        std::lock_guard<std::mutex> lock(mu_);
        const auto key = std::make_pair(path, task);
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, load_dataset(path, task)).first;
        return it->second;
    }

private:
    std::mutex mu_;
    std::map<std::pair<std::string, Task>, DatasetSplit> cache_;
};

inline int worker_threads_from_env() {
    if (const char* env = std::getenv("ISGIB_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Executes independent runs (optionally across worker threads); a failed run
// is reported in its slot without aborting the siblings.
inline std::vector<RunResult> run_matrix(const std::vector<RunConfig>& configs,
                                         DatasetCache& datasets, int threads = 1,
                                         const std::string& out_dir = "") {
    require(!configs.empty(), errc::config, "run_matrix: needs at least one configuration");
    std::vector<RunResult> results(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            try {
                const DatasetSplit& data = datasets.get(configs[i].dataset, configs[i].task);
                results[i] = train(configs[i], data, out_dir,
                                   "run" + std::to_string(i) + "_seed" + std::to_string(configs[i].seed));
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
    return results;
}

// Mean and sample standard deviation of the test metric over the given runs.
struct AggregateRow {
    std::string label;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t runs = 0;
};

inline AggregateRow aggregate_results(const std::string& label, const std::vector<RunResult>& runs) {
    std::vector<double> values;
    for (const auto& r : runs)
        if (!r.failed) values.push_back(r.test_metric);
    require(!values.empty(), errc::numeric, "aggregate_results: no successful runs for " + label);
    auto [mean, sd] = mean_stddev(values);
    return {label, mean, sd, values.size()};
}

// Seed-expanded configs for the gamma ladder: classification only, then each
// objective term enabled in turn.
inline std::vector<std::pair<std::string, std::vector<RunConfig>>> ablation_ladder(
    const RunConfig& base) {
    const Gammas g = base.gammas;
    const std::vector<std::pair<std::string, Gammas>> rungs = {
        {"l_i1", Gammas{0.0, 0.0, 0.0}},
        {"l_i1+l_i2", Gammas{g.g1, 0.0, 0.0}},
        {"l_i1+l_i2+l_s1", Gammas{g.g1, g.g2, 0.0}},
        {"l_i1+l_i2+l_s1+l_s2", Gammas{g.g1, g.g2, g.g3}},
    };
    std::vector<std::pair<std::string, std::vector<RunConfig>>> out;
    for (const auto& [label, gammas] : rungs) {
        std::vector<RunConfig> configs;
        for (std::uint64_t s : base.seeds) {
            RunConfig c = base;
            c.gammas = gammas;
            c.seed = s;
            configs.push_back(c);
        }
        out.emplace_back(label, std::move(configs));
    }
    return out;
}

} // namespace isgib
