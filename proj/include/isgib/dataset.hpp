#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "isgib/graph.hpp"

namespace isgib {

namespace fs = std::filesystem;

// On-disk dataset layout (all plain text, 0-based indices):
//
//   <dir>/meta.json       {"task", "num_classes", "feature_dim", "graphs": [names]}
//   <dir>/<name>/edges.tsv     src<TAB>dst per line
//   <dir>/<name>/features.csv  n rows x feature_dim
//   <dir>/<name>/labels.csv    one class index per line (n lines node task, 1 line graph task)
//   <dir>/<name>/domain.txt    optional integer domain tag
//   <dir>/splits.json     optional {"train": [...], "val": [...], "test": [...]}
//
// Without splits.json every graph lands in the training set.

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), errc::io, "cannot open: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::format, path.string() + ": " + e.what());
    }
    return j;
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
    require(out.good(), errc::io, "write failed: " + path.string());
}

namespace detail {

inline Graph load_graph_dir(const fs::path& dir, Task task, int num_classes,
                            std::size_t feature_dim) {
    const std::string name = dir.filename().string();
    require(fs::exists(dir / "features.csv"), errc::io, name + ": features file absent");
    require(fs::exists(dir / "labels.csv"), errc::io, name + ": labels file absent");

    Graph g;
    g.features = read_matrix_csv((dir / "features.csv").string());
    require(g.features.cols == feature_dim, errc::dataset,
            name + ": features have width " + std::to_string(g.features.cols) +
                ", meta.json declares " + std::to_string(feature_dim));

    {
        std::ifstream in(dir / "labels.csv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            g.labels.push_back(static_cast<int>(parse_long(trim(line), name + "/labels.csv")));
        }
    }
    // node count is pinned by the labels for node tasks, by the feature rows
    // for graph tasks
    g.num_nodes = task == Task::node ? g.labels.size() : g.features.rows;
    require(g.features.rows == g.num_nodes, errc::dataset,
            name + ": dimension mismatch, features.csv has " + std::to_string(g.features.rows) +
                " rows for a " + std::to_string(g.num_nodes) + "-node graph");

    if (fs::exists(dir / "edges.tsv")) {
        std::ifstream in(dir / "edges.tsv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto cells = split(line, '\t');
            require(cells.size() == 2, errc::format, name + ": edges.tsv expects two columns");
            g.edges.emplace_back(static_cast<int>(parse_long(trim(cells[0]), name + "/edges.tsv")),
                                 static_cast<int>(parse_long(trim(cells[1]), name + "/edges.tsv")));
        }
    }

    if (fs::exists(dir / "domain.txt")) {
        std::ifstream in(dir / "domain.txt");
        std::string line;
        std::getline(in, line);
        g.domain_id = static_cast<int>(parse_long(trim(line), name + "/domain.txt"));
    }

    validate_graph(g, task, num_classes, name);
    return g;
}

inline void save_graph_dir(const fs::path& dir, const Graph& g) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "edges.tsv");
        for (const auto& [u, v] : g.edges) out << u << "\t" << v << "\n";
        require(out.good(), errc::io, "write failed: " + (dir / "edges.tsv").string());
    }
    write_matrix_csv((dir / "features.csv").string(), g.features);
    {
        std::ofstream out(dir / "labels.csv");
        for (int y : g.labels) out << y << "\n";
        require(out.good(), errc::io, "write failed: " + (dir / "labels.csv").string());
    }
    if (g.domain_id.has_value()) {
        std::ofstream out(dir / "domain.txt");
        out << *g.domain_id << "\n";
    }
}

} // namespace detail

inline DatasetSplit load_dataset(const std::string& path, Task task) {
    const fs::path root(path);
    require(fs::exists(root), errc::io, "dataset directory not found: " + path);
    require(fs::exists(root / "meta.json"), errc::io, "meta file absent: " + (root / "meta.json").string());

    const nlohmann::json meta = read_json_file(root / "meta.json");
    require(meta.contains("task") && meta.contains("num_classes") && meta.contains("feature_dim") &&
                meta.contains("graphs"),
            errc::format, "meta.json: missing one of task/num_classes/feature_dim/graphs");

    const Task declared = task_from_string(meta.at("task").get<std::string>());
    require(declared == task, errc::dataset,
            "dataset task '" + to_string(declared) + "' does not match requested '" + to_string(task) + "'");

    DatasetSplit split;
    split.task = task;
    split.num_classes = meta.at("num_classes").get<int>();
    split.feature_dim = meta.at("feature_dim").get<std::size_t>();
    require(split.num_classes >= 2, errc::dataset, "meta.json: num_classes must be >= 2");

    std::map<std::string, Graph> graphs;
    for (const auto& name : meta.at("graphs")) {
        const std::string n = name.get<std::string>();
        graphs.emplace(n, detail::load_graph_dir(root / n, task, split.num_classes, split.feature_dim));
    }

    if (fs::exists(root / "splits.json")) {
        const nlohmann::json sp = read_json_file(root / "splits.json");
        std::set<std::string> seen;
        auto gather = [&](const char* key, std::vector<Graph>& into) {
            if (!sp.contains(key)) return;
            for (const auto& name : sp.at(key)) {
                const std::string n = name.get<std::string>();
                require(graphs.count(n) > 0, errc::format, "splits.json names unknown graph '" + n + "'");
                require(seen.insert(n).second, errc::format,
                        "splits.json lists graph '" + n + "' in more than one split");
                into.push_back(graphs.at(n));
            }
        };
        gather("train", split.train_graphs);
        gather("val", split.val_graphs);
        gather("test", split.test_graphs);
    } else {
        for (auto& [name, g] : graphs) split.train_graphs.push_back(std::move(g));
    }

    validate_split(split);
    return split;
}

inline void save_dataset(const std::string& path, const DatasetSplit& split,
                         const std::string& name_prefix = "g") {
    const fs::path root(path);
    fs::create_directories(root);

    nlohmann::json names_json = nlohmann::json::array();
    nlohmann::json splits_json;
    splits_json["train"] = nlohmann::json::array();
    splits_json["val"] = nlohmann::json::array();
    splits_json["test"] = nlohmann::json::array();

    std::size_t counter = 0;
    auto dump_set = [&](const std::vector<Graph>& set, const char* key) {
        for (const auto& g : set) {
            const std::string name = name_prefix + std::to_string(counter++);
            detail::save_graph_dir(root / name, g);
            names_json.push_back(name);
            splits_json[key].push_back(name);
        }
    };
    dump_set(split.train_graphs, "train");
    dump_set(split.val_graphs, "val");
    dump_set(split.test_graphs, "test");

    nlohmann::json meta;
    meta["task"] = to_string(split.task);
    meta["num_classes"] = split.num_classes;
    meta["feature_dim"] = split.feature_dim;
    meta["graphs"] = names_json;
    write_json_file(root / "meta.json", meta);
    write_json_file(root / "splits.json", splits_json);
}

// Importer for the classic citation-network distribution (cora.content /
// cora.cites): tab-separated node lines of id, binary word features, class
// name; citation pairs referencing node ids. Class names are mapped to
// indices in first-seen order.
inline Graph import_citation_content(const std::string& dir, int* num_classes_out) {
    const fs::path root(dir);
    fs::path content, cites;
    for (const auto& entry : fs::directory_iterator(root)) {
        const std::string n = entry.path().filename().string();
        if (n.size() > 8 && n.substr(n.size() - 8) == ".content") content = entry.path();
        if (n.size() > 6 && n.substr(n.size() - 6) == ".cites") cites = entry.path();
    }
    require(!content.empty(), errc::io, "no .content file under " + dir);
    require(!cites.empty(), errc::io, "no .cites file under " + dir);

    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    std::map<std::string, int> node_index;
    std::map<std::string, int> class_index;

    {
        std::ifstream in(content);
        require(in.good(), errc::io, "cannot open: " + content.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split(line, '\t');
            require(cells.size() >= 3, errc::format, content.string() + ": short line");
            node_index.emplace(cells.front(), static_cast<int>(feats.size()));
            std::vector<double> row;
            row.reserve(cells.size() - 2);
            for (std::size_t i = 1; i + 1 < cells.size(); ++i)
                row.push_back(parse_double(trim(cells[i]), content.string()));
            if (!feats.empty())
                require(row.size() == feats.front().size(), errc::format,
                        content.string() + ": ragged feature row");
            feats.push_back(std::move(row));
            const auto [it, inserted] =
                class_index.emplace(trim(cells.back()), static_cast<int>(class_index.size()));
            labels.push_back(it->second);
        }
    }

    Graph g;
    g.num_nodes = feats.size();
    g.features = Matrix(feats.size(), feats.empty() ? 0 : feats.front().size());
    for (std::size_t i = 0; i < feats.size(); ++i)
        std::copy(feats[i].begin(), feats[i].end(), g.features.row(i));
    g.labels = std::move(labels);

    {
        std::ifstream in(cites);
        require(in.good(), errc::io, "cannot open: " + cites.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split(line, '\t');
            require(cells.size() == 2, errc::format, cites.string() + ": expects two columns");
            const auto a = node_index.find(trim(cells[0]));
            const auto b = node_index.find(trim(cells[1]));
            if (a == node_index.end() || b == node_index.end()) continue; // dangling citation
            g.edges.emplace_back(a->second, b->second);
        }
    }

    if (num_classes_out) *num_classes_out = static_cast<int>(class_index.size());
    return g;
}

} // namespace isgib
