#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lrcn/data.hpp"
#include "lrcn/model.hpp"
#include "lrcn/training.hpp"

namespace lrcn {

/**
 * Flat key=value configuration. Blank lines and lines starting with '#' are
 * ignored; whitespace around keys and values is trimmed; a repeated key is
 * an error.
 */
class Config {
  public:
    static Config parse(std::istream& is, const std::string& source = "<config>") {
        Config c;
        std::size_t n = 0;
        for (std::string line; std::getline(is, line);) {
            ++n;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw ParseError(source, n, "expected key=value");
            const std::string key = trim(t.substr(0, eq));
            if (key.empty()) throw ParseError(source, n, "empty key");
            if (!c.values_.emplace(key, trim(t.substr(eq + 1))).second)
                throw ParseError(source, n, "duplicate key '" + key + "'");
            c.lines_[key] = n;
        }
        c.source_ = source;
        return c;
    }

    static Config parse(const std::string& text) {
        std::istringstream is(text);
        return parse(is);
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream is = open_input(path);
        return parse(is, path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ParseError(source_, 0, "missing key '" + key + "'");
        return it->second;
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        return has(key) ? parse_index(values_.at(key), source_, line(key)) : fallback;
    }

    double get_double(const std::string& key, double fallback) const {
        return has(key) ? parse_double(values_.at(key), source_, line(key)) : fallback;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string& v = values_.at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ParseError(source_, line(key), "not a boolean: '" + v + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Throws on the first key not in `known`, citing its line.
    void reject_unknown(const std::vector<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (std::find(known.begin(), known.end(), k) == known.end())
                throw ParseError(source_, line(k), "unknown key '" + k + "'");
    }

    std::string str() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::size_t line(const std::string& key) const {
        auto it = lines_.find(key);
        return it == lines_.end() ? 0 : it->second;
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::size_t> lines_;
    std::string source_ = "<config>";
};

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s, const std::string& source, std::size_t line) {
    std::vector<std::size_t> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = s.find(',', start);
        out.push_back(parse_index(s.substr(start, comma - start), source, line));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

/// Model architecture as key=value pairs (the vocabulary is stored separately).
inline Config spec_to_config(const ModelSpec& s) {
    Config c;
    c.set("task", std::string(to_string(s.task)));
    c.set("cell", s.cell == CellType::lstm ? "lstm" : "rnn");
    c.set("rnn_nonlinearity", s.rnn_nonlinearity == Nonlinearity::tanh ? "tanh" : "sigmoid");
    c.set("layers", std::to_string(s.layers));
    c.set("factored", s.factored ? "true" : "false");
    c.set("injection_layer", std::to_string(s.injection_layer));
    c.set("hidden", std::to_string(s.hidden));
    c.set("embed_dim", std::to_string(s.embed_dim));
    c.set("num_classes", std::to_string(s.num_classes));
    c.set("extractor", std::string(to_string(s.extractor.kind)));
    c.set("extractor.input_shape", join_sizes(s.extractor.input_shape));
    c.set("extractor.output_dim", std::to_string(s.extractor.output_dim));
    c.set("extractor.hidden", std::to_string(s.extractor.hidden));
    c.set("extractor.filters", std::to_string(s.extractor.filters));
    c.set("extractor.kernel", std::to_string(s.extractor.kernel));
    c.set("stateless", s.stateless ? "true" : "false");
    c.set("crf", s.crf == CrfEncoding::max ? "max" : "prob");
    c.set("crf_blocks", join_sizes(s.crf_blocks));
    return c;
}

/// Inverse of spec_to_config; missing keys keep ModelSpec defaults. Not validated.
inline ModelSpec spec_from_config(const Config& c) {
    ModelSpec s;
    const std::string src = "<spec>";
    auto enum_value = [&](const std::string& key, const std::string& fallback,
                          std::initializer_list<std::string> allowed) {
        const std::string v = c.get(key, fallback);
        for (const auto& a : allowed)
            if (v == a) return v;
        throw ParseError(src, 0, "bad value '" + v + "' for " + key);
    };
    try {
        s.task = task_from(c.get("task", "caption"));
        s.extractor.kind = extractor_kind_from(c.get("extractor", "identity"));
    } catch (const std::invalid_argument& e) {
        throw ParseError(src, 0, e.what());
    }
    s.cell = enum_value("cell", "lstm", {"lstm", "rnn"}) == "lstm" ? CellType::lstm : CellType::rnn;
    s.rnn_nonlinearity = enum_value("rnn_nonlinearity", "tanh", {"tanh", "sigmoid"}) == "tanh"
                             ? Nonlinearity::tanh
                             : Nonlinearity::sigmoid;
    s.layers = c.get_size("layers", s.layers);
    s.factored = c.get_bool("factored", s.factored);
    s.injection_layer = c.get_size("injection_layer", s.factored ? 2 : 1);
    s.hidden = c.get_size("hidden", s.hidden);
    s.embed_dim = c.get_size("embed_dim", s.embed_dim);
    s.num_classes = c.get_size("num_classes", s.num_classes);
    s.extractor.input_shape = split_sizes(c.get("extractor.input_shape", ""), src, 0);
    s.extractor.output_dim = c.get_size("extractor.output_dim", s.extractor.output_dim);
    s.extractor.hidden = c.get_size("extractor.hidden", s.extractor.hidden);
    s.extractor.filters = c.get_size("extractor.filters", s.extractor.filters);
    s.extractor.kernel = c.get_size("extractor.kernel", s.extractor.kernel);
    s.stateless = c.get_bool("stateless", s.stateless);
    s.crf = enum_value("crf", "max", {"max", "prob"}) == "max" ? CrfEncoding::max : CrfEncoding::prob;
    s.crf_blocks = split_sizes(c.get("crf_blocks", ""), src, 0);
    return s;
}

/// Every key read by spec_from_config and train_config_from.
inline std::vector<std::string> known_config_keys() {
    std::vector<std::string> keys;
    const Config spec_keys = spec_to_config(ModelSpec{});
    for (const auto& [k, v] : spec_keys.values()) keys.push_back(k);
    for (const char* k : {"learning_rate", "batch_size", "epochs", "dropout", "clip_length", "seed", "grad_clip",
                          "freeze_extractor"})
        keys.push_back(k);
    return keys;
}

inline TrainConfig train_config_from(const Config& c) {
    TrainConfig t;
    t.learning_rate = c.get_double("learning_rate", t.learning_rate);
    t.batch_size = c.get_size("batch_size", t.batch_size);
    t.epochs = c.get_size("epochs", t.epochs);
    t.dropout = c.get_double("dropout", t.dropout);
    t.clip_length = c.get_size("clip_length", t.clip_length);
    t.seed = c.get_size("seed", t.seed);
    if (c.has("grad_clip")) t.grad_clip = c.get_double("grad_clip", 0.0);
    t.freeze_extractor = c.get_bool("freeze_extractor", t.freeze_extractor);
    return t;
}

}  // namespace lrcn
