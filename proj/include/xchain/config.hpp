#pragma once

// Run configuration: UTF-8 key=value files with [bracketed] sections.
// Unknown keys fail fast; command-line flags override file values.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xchain/data.hpp"
#include "xchain/errors.hpp"
#include "xchain/model.hpp"
#include "xchain/training.hpp"

namespace xchain {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::size_t pretrain_steps = 200;
    std::size_t vocab_target_size = 1000;

    std::vector<std::pair<std::string, std::string>> chain; // (language, path) in order
    std::vector<std::string> pretrain_paths;
    std::string vocab_path;
    std::string checkpoint_in;
    std::string checkpoint_out;
    std::string report_path;
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            parts.push_back(s.substr(start));
            break;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a non-negative integer, got '" + value +
                          "'");
    }
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a number, got '" + value + "'");
    }
}

inline std::vector<std::pair<std::string, std::string>> parse_lang_paths(const std::string& key,
                                                                         const std::string& value) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& item : split_on(value, ',')) {
        if (item.empty()) continue;
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: key '" + key + "' expects lang=path entries, got '" + item +
                              "'");
        out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
    return out;
}

} // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw FormatError("config: '" + source + "': line " + std::to_string(lineno) +
                                  ": unterminated section header '" + t + "'");
            section = t.substr(1, t.size() - 2);
            if (section != "model" && section != "train" && section != "data")
                throw ConfigError("config: '" + source + "': line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw FormatError("config: '" + source + "': line " + std::to_string(lineno) +
                              ": expected key=value, got '" + t + "'");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError("config: '" + source + "': line " + std::to_string(lineno) +
                              ": key '" + key + "' appears before any [section]");

        if (section == "model") {
            if (key == "d_model")
                cfg.model.d_model = detail::parse_size(key, value);
            else if (key == "n_heads")
                cfg.model.n_heads = detail::parse_size(key, value);
            else if (key == "n_layers")
                cfg.model.n_layers = detail::parse_size(key, value);
            else if (key == "d_ff")
                cfg.model.d_ff = detail::parse_size(key, value);
            else if (key == "max_positions")
                cfg.model.max_positions = detail::parse_size(key, value);
            else if (key == "dropout_rate")
                cfg.model.dropout_rate = detail::parse_double(key, value);
            else
                throw ConfigError("config: '" + source + "': unknown key '" + key +
                                  "' in [model]");
        } else if (section == "train") {
            if (key == "learning_rate")
                cfg.train.learning_rate = detail::parse_double(key, value);
            else if (key == "epochs_per_language")
                cfg.train.epochs_per_language = detail::parse_size(key, value);
            else if (key == "batch_size")
                cfg.train.batch_size = detail::parse_size(key, value);
            else if (key == "max_len")
                cfg.train.max_len = detail::parse_size(key, value);
            else if (key == "val_fraction")
                cfg.train.val_fraction = detail::parse_double(key, value);
            else if (key == "mask_ratio")
                cfg.train.mask_ratio = detail::parse_double(key, value);
            else if (key == "seed")
                cfg.train.seed = detail::parse_size(key, value);
            else if (key == "pretrain_steps")
                cfg.pretrain_steps = detail::parse_size(key, value);
            else
                throw ConfigError("config: '" + source + "': unknown key '" + key +
                                  "' in [train]");
        } else { // data
            if (key == "vocab")
                cfg.vocab_path = value;
            else if (key == "vocab_size")
                cfg.vocab_target_size = detail::parse_size(key, value);
            else if (key == "chain")
                cfg.chain = detail::parse_lang_paths(key, value);
            else if (key == "pretrain")
                cfg.pretrain_paths = detail::split_on(value, ',');
            else if (key == "checkpoint_in")
                cfg.checkpoint_in = value;
            else if (key == "checkpoint_out")
                cfg.checkpoint_out = value;
            else if (key == "report")
                cfg.report_path = value;
            else
                throw ConfigError("config: '" + source + "': unknown key '" + key + "' in [data]");
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path);
}

} // namespace xchain
