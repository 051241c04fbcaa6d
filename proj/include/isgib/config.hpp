#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "isgib/trainer.hpp"

namespace isgib {

// Flat TOML subset: comments, [section] headers (flattened to dotted keys),
// strings, integers, floats, booleans, and one-dimensional arrays. That is
// the whole grammar the run configs use; toml_dump emits the same subset so
// effective configs round-trip.

struct TomlValue {
    enum class Kind { boolean, integer, real, string, array };
    Kind kind = Kind::string;
    bool b = false;
    long long i = 0;
    double d = 0.0;
    std::string s;
    std::vector<TomlValue> arr;

    static TomlValue of(bool v) { TomlValue t; t.kind = Kind::boolean; t.b = v; return t; }
    static TomlValue of(long long v) { TomlValue t; t.kind = Kind::integer; t.i = v; return t; }
    static TomlValue of(double v) { TomlValue t; t.kind = Kind::real; t.d = v; return t; }
    static TomlValue of(std::string v) { TomlValue t; t.kind = Kind::string; t.s = std::move(v); return t; }

    double as_real(const std::string& key) const {
        if (kind == Kind::real) return d;
        if (kind == Kind::integer) return static_cast<double>(i);
        fail(errc::config, "config key '" + key + "' expects a number");
    }
    long long as_int(const std::string& key) const {
        if (kind == Kind::integer) return i;
        fail(errc::config, "config key '" + key + "' expects an integer");
    }
    const std::string& as_string(const std::string& key) const {
        if (kind == Kind::string) return s;
        fail(errc::config, "config key '" + key + "' expects a string");
    }
    std::vector<double> as_real_array(const std::string& key) const {
        if (kind != Kind::array) fail(errc::config, "config key '" + key + "' expects an array");
        std::vector<double> out;
        for (const auto& v : arr) out.push_back(v.as_real(key));
        return out;
    }
};

using TomlTable = std::map<std::string, TomlValue>;

namespace detail {

inline TomlValue parse_toml_scalar(const std::string& raw, const std::string& context) {
    const std::string v = trim(raw);
    require(!v.empty(), errc::config, context + ": empty value");
    if (v.front() == '"') {
        require(v.size() >= 2 && v.back() == '"', errc::config, context + ": unterminated string");
        return TomlValue::of(v.substr(1, v.size() - 2));
    }
    if (v == "true") return TomlValue::of(true);
    if (v == "false") return TomlValue::of(false);
    if (v.find_first_of(".eE") == std::string::npos) {
        try {
            return TomlValue::of(static_cast<long long>(std::stoll(v)));
        } catch (...) {
            fail(errc::config, context + ": cannot parse '" + v + "'");
        }
    }
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        require(used == v.size(), errc::config, context + ": cannot parse '" + v + "'");
        return TomlValue::of(d);
    } catch (const error&) {
        throw;
    } catch (...) {
        fail(errc::config, context + ": cannot parse '" + v + "'");
    }
}

inline std::string strip_toml_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

} // namespace detail

inline TomlTable toml_parse(const std::string& text, const std::string& context = "config") {
    TomlTable table;
    std::istringstream in(text);
    std::string line;
    std::string prefix;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(detail::strip_toml_comment(line));
        if (stripped.empty()) continue;
        const std::string where = context + ":" + std::to_string(lineno);
        if (stripped.front() == '[') {
            require(stripped.back() == ']', errc::config, where + ": malformed section header");
            prefix = trim(stripped.substr(1, stripped.size() - 2));
            require(!prefix.empty(), errc::config, where + ": empty section name");
            prefix += ".";
            continue;
        }
        const std::size_t eq = stripped.find('=');
        require(eq != std::string::npos, errc::config, where + ": expected key = value");
        const std::string key = prefix + trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        require(!key.empty(), errc::config, where + ": empty key");
        if (!value.empty() && value.front() == '[') {
            require(value.back() == ']', errc::config, where + ": unterminated array");
            TomlValue arr;
            arr.kind = TomlValue::Kind::array;
            const std::string body = trim(value.substr(1, value.size() - 2));
            if (!body.empty())
                for (const auto& item : split(body, ','))
                    arr.arr.push_back(detail::parse_toml_scalar(item, where));
            table[key] = arr;
        } else {
            table[key] = detail::parse_toml_scalar(value, where);
        }
    }
    return table;
}

inline TomlTable toml_load(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), errc::config, "cannot open config: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return toml_parse(buffer.str(), path);
}

inline std::string toml_dump_value(const TomlValue& v) {
    switch (v.kind) {
        case TomlValue::Kind::boolean: return v.b ? "true" : "false";
        case TomlValue::Kind::integer: return std::to_string(v.i);
        case TomlValue::Kind::real: {
            std::string s = format_double(v.d);
            if (s.find_first_of(".eEn") == std::string::npos) s += ".0"; // keep it a float on re-parse
            return s;
        }
        case TomlValue::Kind::string: return "\"" + v.s + "\"";
        case TomlValue::Kind::array: {
            std::string out = "[";
            for (std::size_t i = 0; i < v.arr.size(); ++i)
                out += (i ? ", " : "") + toml_dump_value(v.arr[i]);
            return out + "]";
        }
    }
    return "";
}

inline std::string toml_dump(const TomlTable& table) {
    std::string out;
    for (const auto& [key, value] : table) out += key + " = " + toml_dump_value(value) + "\n";
    return out;
}

// ---- RunConfig binding -----------------------------------------------------------

inline TomlTable to_toml(const RunConfig& cfg) {
    TomlTable t;
    t["task"] = TomlValue::of(to_string(cfg.task));
    t["dataset"] = TomlValue::of(cfg.dataset);
    t["backbone"] = TomlValue::of(to_string(cfg.encoder.backbone));
    t["layers"] = TomlValue::of(static_cast<long long>(cfg.encoder.layers));
    t["hidden"] = TomlValue::of(static_cast<long long>(cfg.encoder.hidden));
    t["dropout"] = TomlValue::of(cfg.encoder.dropout);
    TomlValue gammas;
    gammas.kind = TomlValue::Kind::array;
    gammas.arr = {TomlValue::of(cfg.gammas.g1), TomlValue::of(cfg.gammas.g2), TomlValue::of(cfg.gammas.g3)};
    t["gammas"] = gammas;
    t["metric"] = TomlValue::of(to_string(cfg.metric));
    t["relation_loss"] = TomlValue::of(to_string(cfg.relation_loss));
    t["ib_sign"] = TomlValue::of(to_string(cfg.ib_sign));
    t["eval_metric"] = TomlValue::of(to_string(cfg.eval_metric));
    t["critic_distance"] = TomlValue::of(to_string(cfg.critic_distance));
    t["critic_hidden"] = TomlValue::of(static_cast<long long>(cfg.critic_hidden));
    t["critic_proj"] = TomlValue::of(static_cast<long long>(cfg.critic_proj));
    t["lr"] = TomlValue::of(cfg.lr);
    t["weight_decay"] = TomlValue::of(cfg.weight_decay);
    t["epochs"] = TomlValue::of(static_cast<long long>(cfg.epochs));
    t["pair_batch"] = TomlValue::of(static_cast<long long>(cfg.pair_batch));
    t["num_envs"] = TomlValue::of(static_cast<long long>(cfg.num_envs));
    t["seed"] = TomlValue::of(static_cast<long long>(cfg.seed));
    TomlValue seeds;
    seeds.kind = TomlValue::Kind::array;
    for (std::uint64_t s : cfg.seeds) seeds.arr.push_back(TomlValue::of(static_cast<long long>(s)));
    t["seeds"] = seeds;
    return t;
}

// Overlay `table` on top of `base`; unknown keys are rejected so typos
// surface instead of silently running defaults.
inline RunConfig config_from_toml(const TomlTable& table, RunConfig base = {}) {
    RunConfig cfg = base;
    for (const auto& [key, v] : table) {
        if (key == "task") cfg.task = task_from_string(v.as_string(key));
        else if (key == "dataset") cfg.dataset = v.as_string(key);
        else if (key == "backbone") cfg.encoder.backbone = backbone_from_string(v.as_string(key));
        else if (key == "layers") cfg.encoder.layers = static_cast<int>(v.as_int(key));
        else if (key == "hidden") cfg.encoder.hidden = static_cast<int>(v.as_int(key));
        else if (key == "dropout") cfg.encoder.dropout = v.as_real(key);
        else if (key == "gammas") {
            const auto g = v.as_real_array(key);
            require(g.size() == 3, errc::config, "gammas expects 3 entries");
            cfg.gammas = {g[0], g[1], g[2]};
        } else if (key == "metric") cfg.metric = relation_metric_from_string(v.as_string(key));
        else if (key == "relation_loss") cfg.relation_loss = relation_loss_from_string(v.as_string(key));
        else if (key == "ib_sign") cfg.ib_sign = ib_sign_from_string(v.as_string(key));
        else if (key == "eval_metric") cfg.eval_metric = eval_metric_from_string(v.as_string(key));
        else if (key == "critic_distance") cfg.critic_distance = critic_distance_from_string(v.as_string(key));
        else if (key == "critic_hidden") cfg.critic_hidden = static_cast<int>(v.as_int(key));
        else if (key == "critic_proj") cfg.critic_proj = static_cast<int>(v.as_int(key));
        else if (key == "lr") cfg.lr = v.as_real(key);
        else if (key == "weight_decay") cfg.weight_decay = v.as_real(key);
        else if (key == "epochs") cfg.epochs = static_cast<int>(v.as_int(key));
        else if (key == "pair_batch") cfg.pair_batch = static_cast<std::size_t>(v.as_int(key));
        else if (key == "num_envs") cfg.num_envs = static_cast<int>(v.as_int(key));
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(v.as_int(key));
        else if (key == "seeds") {
            cfg.seeds.clear();
            if (v.kind != TomlValue::Kind::array) fail(errc::config, "seeds expects an array");
            for (const auto& s : v.arr) cfg.seeds.push_back(static_cast<std::uint64_t>(s.as_int(key)));
        } else fail(errc::config, "unknown config key '" + key + "'");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    return config_from_toml(toml_load(path), base);
}

inline void write_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    require(out.good(), errc::io, "cannot open for writing: " + path);
    out << toml_dump(to_toml(cfg));
    require(out.good(), errc::io, "write failed: " + path);
}

// Hash over the canonical serialization with the seed fields dropped: runs of
// the same experiment group share it in results tables.
inline std::string config_hash(const RunConfig& cfg) {
    TomlTable t = to_toml(cfg);
    t.erase("seed");
    t.erase("seeds");
    const std::uint64_t h = hash_tag(toml_dump(t));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace isgib
