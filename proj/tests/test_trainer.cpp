#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "isgib/trainer.hpp"
#include "support.hpp"

using namespace isgib;

namespace {

RunConfig toy_config(Gammas gammas = {0.5, 0.1, 0.5}) {
    RunConfig cfg;
    cfg.task = Task::node;
    cfg.encoder.backbone = Backbone::sage;
    cfg.encoder.layers = 2;
    cfg.encoder.hidden = 8;
    cfg.gammas = gammas;
    cfg.lr = 5e-3;
    cfg.weight_decay = 1e-6;
    cfg.epochs = 6;
    cfg.pair_batch = 16;
    cfg.critic_hidden = 8;
    cfg.critic_proj = 8;
    cfg.seed = 0;
    cfg.seeds = {0, 1};
    return cfg;
}

bool histories_equal(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].l_i1 != b[i].l_i1 || a[i].l_i2 != b[i].l_i2 || a[i].l_s1 != b[i].l_s1 ||
            a[i].l_s2 != b[i].l_s2 || a[i].total != b[i].total)
            return false;
    return true;
}

} // namespace

TEST_CASE("adamw with zero learning rate leaves parameters bit-identical") {
    ParamStore store(5);
    EncoderConfig cfg;
    cfg.d_in = 3;
    cfg.hidden = 4;
    cfg.layers = 1;
    cfg.num_classes = 2;
    EncoderParams::create(cfg, store);
    const auto before = store.flatten();

    // put nonzero grads on every parameter
    for (auto t : store.tensors()) {
        t.zero_grad();
        Tensor loss = sum_all(multiply(t, t));
        loss.backward();
    }
    AdamW opt(0.0, 0.1);
    opt.step(store);
    REQUIRE(store.flatten() == before);
}

TEST_CASE("training smoke: two epochs on the toy fixture") {
    const DatasetSplit data = testsupport::toy_split();
    RunConfig cfg = toy_config();
    cfg.epochs = 2;
    const RunResult r = train(cfg, data);
    REQUIRE_FALSE(r.failed);
    REQUIRE(r.loss_history.size() == 2); // one step per epoch
    REQUIRE(std::isfinite(r.best_val_metric));
    REQUIRE(std::isfinite(r.test_metric));
    REQUIRE(r.epoch_of_best >= 0);
    for (const auto& b : r.loss_history) {
        REQUIRE(std::isfinite(b.total));
        REQUIRE(b.l_i1 >= 0.0);
        REQUIRE(b.l_s1 >= 0.0);
    }
}

TEST_CASE("training is deterministic given config and seed") {
    const DatasetSplit data = testsupport::toy_split();
    const RunConfig cfg = toy_config();
    const RunResult a = train(cfg, data);
    const RunResult b = train(cfg, data);
    REQUIRE(histories_equal(a.loss_history, b.loss_history));
    REQUIRE(a.final_params == b.final_params);
    REQUIRE(a.best_params == b.best_params);
    REQUIRE(a.test_metric == b.test_metric);
    REQUIRE(a.val_history == b.val_history);
}

TEST_CASE("gamma zero training is bit-identical to the reference risk-minimization loop") {
    const DatasetSplit data = testsupport::toy_split();
    RunConfig cfg = toy_config({0.0, 0.0, 0.0});
    cfg.epochs = 5;
    const RunResult generic = train(cfg, data);
    const RunResult reference = testsupport::reference_erm_loop(cfg, data);

    REQUIRE(generic.loss_history.size() == reference.loss_history.size());
    for (std::size_t i = 0; i < generic.loss_history.size(); ++i) {
        REQUIRE(generic.loss_history[i].l_i1 == reference.loss_history[i].l_i1);
        REQUIRE(generic.loss_history[i].total == reference.loss_history[i].total);
    }
    REQUIRE(generic.final_params == reference.final_params);
    REQUIRE(generic.best_params == reference.best_params);
    REQUIRE(generic.val_history == reference.val_history);
    REQUIRE(generic.test_metric == reference.test_metric);
}

TEST_CASE("classification loss is non-increasing early on the separable fixture") {
    const DatasetSplit data = testsupport::toy_split();
    RunConfig cfg = toy_config({0.0, 0.0, 0.0});
    cfg.epochs = 5;
    cfg.lr = 1e-2;
    const RunResult r = train(cfg, data);
    for (std::size_t i = 0; i + 1 < r.loss_history.size(); ++i)
        REQUIRE(r.loss_history[i + 1].l_i1 <= r.loss_history[i].l_i1 + 1e-12);
}

TEST_CASE("best_val_metric equals the maximum of the validation history") {
    const DatasetSplit data = testsupport::toy_split();
    RunConfig cfg = toy_config();
    cfg.epochs = 8;
    const RunResult r = train(cfg, data);
    REQUIRE(r.val_history.size() == 8);
    const double best = *std::max_element(r.val_history.begin(), r.val_history.end());
    REQUIRE(r.best_val_metric == best);
    REQUIRE(r.val_history[static_cast<std::size_t>(r.epoch_of_best)] == best);
}

TEST_CASE("non-finite losses abort with the offending term identified") {
    DatasetSplit data = testsupport::toy_split();
    // saturate the inputs: neighbor sums overflow to inf, which survives relu
    // and reaches the logits as non-finite values
    for (auto& g : data.train_graphs)
        for (double& v : g.features.data) v = 1e308;
    RunConfig cfg = toy_config({0.0, 0.0, 0.0});
    cfg.epochs = 1;
    try {
        train(cfg, data);
        FAIL("expected error");
    } catch (const error& e) {
        REQUIRE(e.code() == errc::numeric);
        REQUIRE(std::string(e.what()).find("l_i1") != std::string::npos);
    }
}

TEST_CASE("structural batch width counts sampled nodes per training graph") {
    const DatasetSplit data = testsupport::toy_split(); // 24-node graphs
    RunConfig cfg = toy_config();
    cfg.pair_batch = 16;
    REQUIRE(structural_batch_width(cfg, data) == 4 * 16);
    cfg.pair_batch = 100;
    REQUIRE(structural_batch_width(cfg, data) == 4 * 24);
}

TEST_CASE("checkpoint and training log are written and reload") {
    const DatasetSplit data = testsupport::toy_split();
    RunConfig cfg = toy_config();
    cfg.epochs = 3;
    const std::string dir = testsupport::fresh_dir("trainout");
    const RunResult r = train(cfg, data, dir);
    REQUIRE(std::filesystem::exists(r.checkpoint_path));
    REQUIRE(std::filesystem::exists(std::filesystem::path(dir) / "train_log_seed0.csv"));

    // the checkpoint holds the best-epoch parameters
    BuiltModel model = build_model(
        [&] {
            RunConfig c = cfg;
            c.encoder.d_in = static_cast<int>(data.feature_dim);
            c.encoder.num_classes = data.num_classes;
            return c;
        }(),
        structural_batch_width(cfg, data), cfg.seed);
    load_checkpoint(r.checkpoint_path, model.store);
    REQUIRE(model.store.flatten() == r.best_params);
    std::filesystem::remove_all(dir);
}

TEST_CASE("graph-level task trains end to end") {
    const DatasetSplit data = make_synthetic_graph_task(20, 8, 5, 3);
    RunConfig cfg = toy_config();
    cfg.task = Task::graph;
    cfg.epochs = 4;
    cfg.num_envs = 2;
    const RunResult r = train(cfg, data);
    REQUIRE_FALSE(r.failed);
    REQUIRE(std::isfinite(r.test_metric));
    REQUIRE(r.loss_history.size() == 4);
}

TEST_CASE("run_matrix aggregates seeds and isolates failures") {
    const std::string dir = testsupport::fresh_dir("matrix_ds");
    save_dataset(dir, testsupport::toy_split());

    RunConfig base = toy_config();
    base.dataset = dir;
    base.epochs = 2;
    std::vector<RunConfig> configs;
    for (std::uint64_t s : {0, 1, 2}) {
        RunConfig c = base;
        c.seed = s;
        configs.push_back(c);
    }
    RunConfig broken = base;
    broken.dataset = dir + "_missing";
    configs.push_back(broken);

    DatasetCache cache;
    const auto results = run_matrix(configs, cache, 1);
    REQUIRE(results.size() == 4);
    for (int i = 0; i < 3; ++i) REQUIRE_FALSE(results[static_cast<std::size_t>(i)].failed);
    REQUIRE(results[3].failed);
    REQUIRE_FALSE(results[3].error.empty());

    const AggregateRow agg = aggregate_results("toy", results);
    REQUIRE(agg.runs == 3);
    std::vector<double> vals;
    for (int i = 0; i < 3; ++i) vals.push_back(results[static_cast<std::size_t>(i)].test_metric);
    auto [m, s] = mean_stddev(vals);
    REQUIRE(agg.mean == Catch::Approx(m));
    REQUIRE(agg.stddev == Catch::Approx(s));

    REQUIRE_THROWS_AS(run_matrix({}, cache, 1), error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablation ladder enables the terms progressively") {
    RunConfig base = toy_config({0.5, 0.1, 0.75});
    base.seeds = {0, 1, 2};
    const auto ladder = ablation_ladder(base);
    REQUIRE(ladder.size() == 4);
    REQUIRE(ladder[0].second.size() == 3);
    REQUIRE(ladder[0].second[0].gammas.g1 == 0.0);
    REQUIRE(ladder[1].second[0].gammas.g1 == 0.5);
    REQUIRE(ladder[1].second[0].gammas.g2 == 0.0);
    REQUIRE(ladder[2].second[0].gammas.g2 == 0.1);
    REQUIRE(ladder[2].second[0].gammas.g3 == 0.0);
    REQUIRE(ladder[3].second[0].gammas.g3 == 0.75);
    REQUIRE(ladder[3].second[2].seed == 2);
}

TEST_CASE("validation-free datasets fall back to the final model") {
    DatasetSplit data = testsupport::toy_split();
    data.val_graphs.clear();
    RunConfig cfg = toy_config();
    cfg.epochs = 2;
    const RunResult r = train(cfg, data);
    REQUIRE(r.best_params == r.final_params);
    REQUIRE(r.epoch_of_best == 1);
}
