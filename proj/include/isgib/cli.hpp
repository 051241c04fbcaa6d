#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isgib/report.hpp"

namespace isgib {
namespace cli {

namespace fs = std::filesystem;

// Exit codes: 0 success, 1 runtime failure, 2 usage, 3 malformed config,
// 4 missing/invalid dataset or file.
inline int exit_code_for(const error& e) {
    switch (e.code()) {
        case errc::usage: return 2;
        case errc::config: return 3;
        case errc::io:
        case errc::format:
        case errc::dataset: return 4;
        default: return 1;
    }
}

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::string dataset_override;
    long long seed_override = -1;
    std::string gammas_override;
    std::string metric_override;
    std::string backbone_override;
    std::string ib_sign_override;
};

inline void attach_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "run configuration (TOML)");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--dataset", opt.dataset_override, "dataset directory (overrides config)");
    cmd->add_option("--seed", opt.seed_override, "seed override");
    cmd->add_option("--gammas", opt.gammas_override, "gamma weights, e.g. 0.5,0.1,0.5");
    cmd->add_option("--metric", opt.metric_override, "relation metric (dot|cosine|p_l1|p_l2|cmd|mmd)");
    cmd->add_option("--backbone", opt.backbone_override, "encoder backbone (sage|gcn|gin)");
    cmd->add_option("--ib-sign", opt.ib_sign_override, "compression-term sign (paper|flipped)");
}

inline RunConfig resolve_config(const CommonOptions& opt) {
    RunConfig cfg;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    if (!opt.dataset_override.empty()) cfg.dataset = opt.dataset_override;
    if (opt.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed_override);
    if (!opt.gammas_override.empty()) {
        const auto parts = split(opt.gammas_override, ',');
        require(parts.size() == 3, errc::usage, "--gammas expects three comma-separated values");
        cfg.gammas = {parse_double(trim(parts[0]), "--gammas"), parse_double(trim(parts[1]), "--gammas"),
                      parse_double(trim(parts[2]), "--gammas")};
    }
    if (!opt.metric_override.empty()) cfg.metric = relation_metric_from_string(opt.metric_override);
    if (!opt.backbone_override.empty())
        cfg.encoder.backbone = backbone_from_string(opt.backbone_override);
    if (!opt.ib_sign_override.empty()) cfg.ib_sign = ib_sign_from_string(opt.ib_sign_override);
    require(!cfg.dataset.empty(), errc::config, "no dataset given (config `dataset` key or --dataset)");
    return cfg;
}

inline void write_effective_config(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config((fs::path(out_dir) / "effective_config.toml").string(), cfg);
}

// Rebuild a model from a checkpoint manifest and load its parameters.
// The returned config carries the architecture the checkpoint was trained
// with; dataset/eval fields still come from the caller's config.
inline BuiltModel model_from_checkpoint(const std::string& path, RunConfig& cfg) {
    // peek at the manifest first to size the model
    std::ifstream probe(path);
    require(probe.good(), errc::io, "checkpoint not found: " + path);
    nlohmann::json j;
    try {
        probe >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::format, path + ": " + e.what());
    }
    const nlohmann::json& m = j.at("config");
    cfg.task = task_from_string(m.at("task").get<std::string>());
    cfg.encoder.backbone = backbone_from_string(m.at("backbone").get<std::string>());
    cfg.encoder.layers = m.at("layers").get<int>();
    cfg.encoder.hidden = m.at("hidden").get<int>();
    cfg.encoder.dropout = m.at("dropout").get<double>();
    cfg.encoder.d_in = m.at("d_in").get<int>();
    cfg.encoder.num_classes = m.at("num_classes").get<int>();
    const auto g = m.at("gammas").get<std::vector<double>>();
    cfg.gammas = {g[0], g[1], g[2]};
    cfg.metric = relation_metric_from_string(m.at("metric").get<std::string>());
    cfg.ib_sign = ib_sign_from_string(m.at("ib_sign").get<std::string>());
    cfg.critic_distance = critic_distance_from_string(m.at("critic_distance").get<std::string>());
    cfg.critic_hidden = m.at("critic_hidden").get<int>();
    cfg.critic_proj = m.at("critic_proj").get<int>();
    const auto structural_width = m.at("structural_width").get<std::size_t>();
    cfg.pair_batch = m.at("pair_batch").get<std::size_t>();

    BuiltModel model = build_model(cfg, structural_width, j.at("seed").get<std::uint64_t>());
    load_checkpoint(path, model.store);
    return model;
}

// ---- commands ---------------------------------------------------------------------

inline int cmd_prepare(const CommonOptions& opt, bool synthetic, const std::string& from_dir,
                       const std::string& from_cora, double mu, double sigma, bool train_noise,
                       const std::string& export_base) {
    Graph base;
    int num_classes = 0;
    const std::uint64_t seed = opt.seed_override >= 0 ? static_cast<std::uint64_t>(opt.seed_override) : 0;

    if (synthetic) {
        SyntheticSpec spec;
        base = make_synthetic_graph(spec, seed);
        num_classes = spec.num_classes;
    } else if (!from_cora.empty()) {
        base = import_citation_content(from_cora, &num_classes);
    } else if (!from_dir.empty()) {
        const DatasetSplit src = load_dataset(from_dir, Task::node);
        require(!src.train_graphs.empty(), errc::dataset, "prepare: source dataset is empty");
        base = src.train_graphs.front();
        num_classes = src.num_classes;
    } else {
        fail(errc::usage, "prepare: one of --synthetic, --from, --from-cora is required");
    }

    const DatasetSplit bench = make_shift_benchmark(
        base, num_classes, mix_seed(seed, hash_tag("benchmark")), ShiftSpec{mu, sigma, 0, 0},
        train_noise ? std::optional<ShiftSpec>(ShiftSpec{0.0, 1.0, 0, 0}) : std::nullopt);
    save_dataset(opt.out_dir, bench);
    std::cout << "benchmark written to " << opt.out_dir << " (" << bench.train_graphs.size() << "/"
              << bench.val_graphs.size() << "/" << bench.test_graphs.size() << " graphs)\n";

    if (!export_base.empty()) {
        DatasetSplit single;
        single.task = Task::node;
        single.num_classes = num_classes;
        single.feature_dim = base.features.cols;
        single.train_graphs.push_back(base);
        save_dataset(export_base, single, "base");
        std::cout << "base graph written to " << export_base << "\n";
    }
    return 0;
}

inline int cmd_train(const CommonOptions& opt) {
    RunConfig cfg = resolve_config(opt);
    const DatasetSplit data = load_dataset(cfg.dataset, cfg.task);
    write_effective_config(cfg, opt.out_dir);
    const RunResult result = train(cfg, data, opt.out_dir);
    // d_in / num_classes were resolved inside train(); recompute the hash on
    // the serialized (dataset-independent) config fields only.
    write_results_csv((fs::path(opt.out_dir) / "results.csv").string(),
                      {{config_hash(cfg), cfg.seed, to_string(cfg.eval_metric),
                        result.best_val_metric, result.test_metric, result.epoch_of_best}});
    std::cout << "best_val " << to_string(cfg.eval_metric) << " = " << result.best_val_metric
              << " (epoch " << result.epoch_of_best << "), test = " << result.test_metric << "\n";
    return 0;
}

inline int cmd_eval(const CommonOptions& opt, const std::string& checkpoint) {
    require(!checkpoint.empty(), errc::usage, "eval: --checkpoint is required");
    RunConfig cfg = resolve_config(opt);
    BuiltModel model = model_from_checkpoint(checkpoint, cfg);
    const DatasetSplit data = load_dataset(cfg.dataset, cfg.task);
    require(data.num_classes == cfg.encoder.num_classes &&
                data.feature_dim == static_cast<std::size_t>(cfg.encoder.d_in),
            errc::dataset, "eval: dataset arities do not match the checkpointed model");

    fs::create_directories(opt.out_dir);
    std::ofstream out(fs::path(opt.out_dir) / "eval.csv");
    require(out.good(), errc::io, "cannot write eval.csv in " + opt.out_dir);
    out << "split,metric,mean,stddev\n";
    auto emit = [&](const char* name, const std::vector<Graph>& graphs) {
        if (graphs.empty()) return;
        std::vector<Adjacency> adjs;
        for (const auto& g : graphs) adjs.push_back(Adjacency::build(g));
        const MetricReport r = evaluate_split(graphs, adjs, model, cfg);
        out << name << "," << to_string(r.metric) << "," << format_double(r.mean) << ","
            << format_double(r.stddev) << "\n";
        std::cout << name << " " << to_string(r.metric) << " = " << r.mean << "\n";
    };
    emit("train", data.train_graphs);
    emit("val", data.val_graphs);
    emit("test", data.test_graphs);
    return 0;
}

inline int cmd_ablate(const CommonOptions& opt) {
    RunConfig cfg = resolve_config(opt);
    write_effective_config(cfg, opt.out_dir);
    DatasetCache cache;
    const int threads = worker_threads_from_env();

    std::vector<ResultRow> all_rows;
    std::ofstream out;
    fs::create_directories(opt.out_dir);
    out.open(fs::path(opt.out_dir) / "ablation.csv");
    require(out.good(), errc::io, "cannot write ablation.csv in " + opt.out_dir);
    out << "variant,mean,stddev,runs\n";
    for (const auto& [label, configs] : ablation_ladder(cfg)) {
        const auto results = run_matrix(configs, cache, threads);
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (results[i].failed) {
                std::cerr << "run failed (" << label << ", seed " << configs[i].seed
                          << "): " << results[i].error << "\n";
                continue;
            }
            all_rows.push_back({config_hash(configs[i]), configs[i].seed, to_string(cfg.eval_metric),
                                results[i].best_val_metric, results[i].test_metric,
                                results[i].epoch_of_best});
        }
        const AggregateRow agg = aggregate_results(label, results);
        out << agg.label << "," << format_double(agg.mean) << "," << format_double(agg.stddev) << ","
            << agg.runs << "\n";
        std::cout << agg.label << ": " << agg.mean << " +/- " << agg.stddev << " (" << agg.runs
                  << " seeds)\n";
    }
    write_results_csv((fs::path(opt.out_dir) / "results.csv").string(), all_rows);
    return 0;
}

inline int cmd_sweep(const CommonOptions& opt, const std::string& base_dataset,
                     const std::string& grid_arg) {
    RunConfig cfg = resolve_config(opt);
    require(!base_dataset.empty(), errc::usage,
            "sweep: --base is required (single-graph dataset holding the unshifted graph)");
    const DatasetSplit base_split = load_dataset(base_dataset, Task::node);
    require(!base_split.train_graphs.empty(), errc::dataset, "sweep: base dataset is empty");
    write_effective_config(cfg, opt.out_dir);

    std::vector<SweepPoint> grid = default_sweep_grid();
    if (!grid_arg.empty()) {
        grid.clear();
        for (const auto& entry : split(grid_arg, ',')) {
            const auto parts = split(trim(entry), '/');
            require(parts.size() == 2, errc::usage, "sweep: --grid expects mu/sigma pairs");
            grid.push_back({parse_double(trim(parts[0]), "--grid"), parse_double(trim(parts[1]), "--grid")});
        }
    }
    const auto rows =
        noise_sweep(cfg, base_split.train_graphs.front(), base_split.num_classes, grid,
                    mix_seed(cfg.seed, hash_tag("benchmark")), worker_threads_from_env());
    write_sweep_csv((fs::path(opt.out_dir) / "sweep.csv").string(), rows);
    for (const auto& r : rows)
        std::cout << "mu=" << r.mu << " sigma=" << r.sigma << ": " << r.mean << " +/- " << r.stddev
                  << "\n";
    return 0;
}

inline int cmd_heatmap(const CommonOptions& opt, const std::string& checkpoint, bool render) {
    require(!checkpoint.empty(), errc::usage, "heatmap: --checkpoint is required");
    RunConfig cfg = resolve_config(opt);
    BuiltModel model = model_from_checkpoint(checkpoint, cfg);
    const DatasetSplit data = load_dataset(cfg.dataset, cfg.task);
    const double score =
        export_heatmaps(cfg, data, model, freeze_relation_params(data), opt.out_dir, render);
    std::cout << "alignment score = " << score << " (files in " << opt.out_dir << ")\n";
    return 0;
}

// ---- dispatch -----------------------------------------------------------------------

inline int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"IS-GIB: individual and structural information-bottleneck training for graphs"};
    app.require_subcommand(1);

    CommonOptions opt;
    bool prep_synthetic = false, prep_train_noise = false, render = false;
    std::string prep_from, prep_from_cora, prep_export_base, checkpoint, sweep_base, sweep_grid;
    double prep_mu = 0.0, prep_sigma = 1.0;

    CLI::App* prepare = app.add_subcommand("prepare", "build a shift benchmark dataset on disk");
    attach_common(prepare, opt);
    prepare->add_flag("--synthetic", prep_synthetic, "generate the synthetic 300-node benchmark");
    prepare->add_option("--from", prep_from, "single-graph dataset directory to shift");
    prepare->add_option("--from-cora", prep_from_cora, "directory holding .content/.cites files");
    prepare->add_option("--mu", prep_mu, "val/test noise mean");
    prepare->add_option("--sigma", prep_sigma, "val/test noise std");
    prepare->add_flag("--train-noise", prep_train_noise, "noise the training copies too (sweep protocol)");
    prepare->add_option("--export-base", prep_export_base, "also save the unshifted base graph here");

    CLI::App* train_cmd = app.add_subcommand("train", "train one run and report metrics");
    attach_common(train_cmd, opt);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    attach_common(eval_cmd, opt);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the objective-term ladder");
    attach_common(ablate_cmd, opt);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "noise-scale sweep over (mu, sigma)");
    attach_common(sweep_cmd, opt);
    sweep_cmd->add_option("--base", sweep_base, "single-graph dataset holding the unshifted graph");
    sweep_cmd->add_option("--grid", sweep_grid, "mu/sigma list, e.g. 0/1,0.5/2");

    CLI::App* heatmap_cmd = app.add_subcommand("heatmap", "export pairwise-relation heat maps");
    attach_common(heatmap_cmd, opt);
    heatmap_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
    heatmap_cmd->add_flag("--render", render, "also write PNG renderings");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (prepare->parsed())
            return cmd_prepare(opt, prep_synthetic, prep_from, prep_from_cora, prep_mu, prep_sigma,
                               prep_train_noise, prep_export_base);
        if (train_cmd->parsed()) return cmd_train(opt);
        if (eval_cmd->parsed()) return cmd_eval(opt, checkpoint);
        if (ablate_cmd->parsed()) return cmd_ablate(opt);
        if (sweep_cmd->parsed()) return cmd_sweep(opt, sweep_base, sweep_grid);
        if (heatmap_cmd->parsed()) return cmd_heatmap(opt, checkpoint, render);
        std::cerr << app.help();
        return 2;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace cli
} // namespace isgib
