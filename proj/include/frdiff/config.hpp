#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "error.hpp"
#include "freqdehaze.hpp"
#include "io.hpp"
#include "objectives.hpp"

namespace frdiff {

struct TrainConfig {
    int stage = 1;
    int epochs = 200;
    int batch = 8;
    int patch = 256;
    double lr = 1e-4;
    double d_lr = 1e-4;
    double lambda_gan = 1.0;
    double lambda_nce = 1.0;
    double lambda_diff = 1.0;
    int steps = 8;
    double beta_start = 0.1;
    double beta_end = 0.8;
    int base_channels = 64;
    std::vector<int> blocks{4, 4, 6, 10};
    bool fcl = true;
    std::string stats_mode = "global";
    int denoiser_width = 64;
    int denoiser_blocks = 5;
    int embed_dim = 16;
    int disc_width = 64;
    double nce_tau = 0.07;
    int nce_patches = 256;
    int nce_dim = 256;
    std::string data_root;
    std::uint64_t seed = 0;
    bool toy = false;
    std::string out = "frdiff.ckpt";
    std::string log = "loss.csv";

    NetworkConfig network() const {
        NetworkConfig n;
        n.base_channels = base_channels;
        n.blocks_per_scale = blocks;
        n.fcl_enabled = fcl;
        return n;
    }
    DenoiserConfig denoiser() const { return {denoiser_width, denoiser_blocks, embed_dim}; }
    NceConfig nce() const { return {nce_tau, nce_patches, nce_dim}; }
    LossWeights weights() const { return {lambda_gan, lambda_nce, lambda_diff}; }
    NoiseSchedule schedule() const { return NoiseSchedule(steps, beta_start, beta_end); }
    StatsMode stats() const { return stats_mode == "per_channel" ? StatsMode::per_channel : StatsMode::global; }
};

/// Desk-scale preset: every size-bearing field shrinks together.
inline void apply_toy_preset(TrainConfig& c) {
    c.toy = true;
    c.epochs = 20;
    c.batch = 4;
    c.patch = 32;
    c.lr = 2e-3;
    c.d_lr = 2e-3;
    c.base_channels = 8;
    c.blocks = {1, 1};
    c.denoiser_width = 8;
    c.denoiser_blocks = 5;
    c.embed_dim = 8;
    c.disc_width = 8;
    c.nce_patches = 64;
    c.nce_dim = 16;
}

struct ToyLimits {
    int patch = 64, channels = 16, blocks = 2, epochs = 50, nce_patches = 256, nce_dim = 64;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    V out{};
    is >> out;
    if (is.fail() || !is.eof()) throw UsageError(concat("config: '", key, "' expects a number, got '", v, "'"));
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw UsageError(concat("config: '", key, "' expects true/false, got '", v, "'"));
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
    if (out.empty()) throw UsageError(concat("config: '", key, "' expects a comma-separated list"));
    return out;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> f = [] {
        std::vector<std::pair<std::string, Field>> v;
        auto add_int = [&](const char* k, int TrainConfig::*m) {
            v.push_back({k, {[m](TrainConfig& c, const std::string& key, const std::string& s) { c.*m = parse_number<int>(key, s); },
                             [m](const TrainConfig& c) { return std::to_string(c.*m); }}});
        };
        auto add_dbl = [&](const char* k, double TrainConfig::*m) {
            v.push_back({k, {[m](TrainConfig& c, const std::string& key, const std::string& s) { c.*m = parse_number<double>(key, s); },
                             [m](const TrainConfig& c) { return fmt_double(c.*m); }}});
        };
        auto add_str = [&](const char* k, std::string TrainConfig::*m) {
            v.push_back({k, {[m](TrainConfig& c, const std::string&, const std::string& s) { c.*m = s; },
                             [m](const TrainConfig& c) { return c.*m; }}});
        };
        auto add_bool = [&](const char* k, bool TrainConfig::*m) {
            v.push_back({k, {[m](TrainConfig& c, const std::string& key, const std::string& s) { c.*m = parse_bool(key, s); },
                             [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); }}});
        };
        add_bool("toy", &TrainConfig::toy);
        add_int("stage", &TrainConfig::stage);
        add_int("epochs", &TrainConfig::epochs);
        add_int("batch", &TrainConfig::batch);
        add_int("patch", &TrainConfig::patch);
        add_dbl("lr", &TrainConfig::lr);
        add_dbl("d_lr", &TrainConfig::d_lr);
        add_dbl("lambda_gan", &TrainConfig::lambda_gan);
        add_dbl("lambda_nce", &TrainConfig::lambda_nce);
        add_dbl("lambda_diff", &TrainConfig::lambda_diff);
        add_int("steps", &TrainConfig::steps);
        add_dbl("beta_start", &TrainConfig::beta_start);
        add_dbl("beta_end", &TrainConfig::beta_end);
        add_int("base_channels", &TrainConfig::base_channels);
        v.push_back({"blocks", {[](TrainConfig& c, const std::string& key, const std::string& s) { c.blocks = parse_int_list(key, s); },
                                [](const TrainConfig& c) {
                                    std::string s;
                                    for (std::size_t i = 0; i < c.blocks.size(); ++i) s += (i ? "," : "") + std::to_string(c.blocks[i]);
                                    return s;
                                }}});
        add_bool("fcl", &TrainConfig::fcl);
        add_str("stats_mode", &TrainConfig::stats_mode);
        add_int("denoiser_width", &TrainConfig::denoiser_width);
        add_int("denoiser_blocks", &TrainConfig::denoiser_blocks);
        add_int("embed_dim", &TrainConfig::embed_dim);
        add_int("disc_width", &TrainConfig::disc_width);
        add_dbl("nce_tau", &TrainConfig::nce_tau);
        add_int("nce_patches", &TrainConfig::nce_patches);
        add_int("nce_dim", &TrainConfig::nce_dim);
        add_str("data_root", &TrainConfig::data_root);
        v.push_back({"seed", {[](TrainConfig& c, const std::string& key, const std::string& s) { c.seed = parse_number<std::uint64_t>(key, s); },
                              [](const TrainConfig& c) { return std::to_string(c.seed); }}});
        add_str("out", &TrainConfig::out);
        add_str("log", &TrainConfig::log);
        return v;
    }();
    return f;
}

} // namespace detail

inline void validate(const TrainConfig& c) {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw UsageError("config: " + msg);
    };
    need(c.stage == 1 || c.stage == 2, concat("stage must be 1 or 2, got ", c.stage));
    need(c.epochs >= 1, "epochs must be >= 1");
    need(c.batch >= 1, "batch must be >= 1");
    need(c.patch >= 8, "patch must be >= 8 (discriminator downsamples by 8)");
    need(c.lr > 0 && c.d_lr > 0, "learning rates must be > 0");
    need(c.lambda_gan >= 0 && c.lambda_nce >= 0 && c.lambda_diff >= 0, "loss weights must be >= 0");
    need(c.steps >= 1, "steps must be >= 1");
    need(c.beta_start > 0 && c.beta_start <= c.beta_end && c.beta_end < 1, "need 0 < beta_start <= beta_end < 1");
    need(c.base_channels >= 1, "base_channels must be >= 1");
    need(!c.blocks.empty(), "blocks must list at least one scale");
    for (int b : c.blocks) need(b >= 0, "blocks entries must be >= 0");
    need(c.stats_mode == "global" || c.stats_mode == "per_channel", "stats_mode must be global or per_channel");
    need(c.denoiser_width >= 1 && c.denoiser_blocks >= 0 && c.embed_dim >= 2, "invalid denoiser size");
    need(c.disc_width >= 1, "disc_width must be >= 1");
    need(c.nce_tau > 0, "nce_tau must be > 0");
    need(c.nce_patches >= 2 && c.nce_patches <= c.patch * c.patch, "nce_patches must be in [2, patch*patch]");
    need(c.nce_dim >= 1, "nce_dim must be >= 1");
    if (c.toy) {
        const ToyLimits lim;
        need(c.patch <= lim.patch, concat("toy mode: patch ", c.patch, " exceeds ", lim.patch));
        need(c.base_channels <= lim.channels, concat("toy mode: base_channels exceeds ", lim.channels));
        need(c.denoiser_width <= lim.channels, concat("toy mode: denoiser_width exceeds ", lim.channels));
        need(c.disc_width <= lim.channels, concat("toy mode: disc_width exceeds ", lim.channels));
        for (int b : c.blocks) need(b <= lim.blocks, concat("toy mode: blocks per scale exceed ", lim.blocks));
        need(c.epochs <= lim.epochs, concat("toy mode: epochs exceed ", lim.epochs));
        need(c.nce_patches <= lim.nce_patches && c.nce_dim <= lim.nce_dim, "toy mode: NCE sizes exceed toy limits");
    }
}

/// Parses `key = value` lines. `toy = true` applies the toy preset first; explicit keys
/// then override it. Unknown keys are errors.
inline TrainConfig parse_config(const std::string& text, const std::string& where = "config") {
    std::vector<std::pair<std::string, std::string>> entries;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(concat(where, ":", lineno, ": expected 'key = value'"));
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        bool known = false;
        for (const auto& [k, f] : detail::fields()) known |= k == key;
        if (!known) throw UsageError(concat(where, ":", lineno, ": unknown key '", key, "'"));
        if (!seen.insert(key).second) throw UsageError(concat(where, ":", lineno, ": duplicate key '", key, "'"));
        entries.emplace_back(key, value);
    }
    TrainConfig cfg;
    for (const auto& [k, v] : entries)
        if (k == "toy" && detail::parse_bool(k, v)) apply_toy_preset(cfg);
    for (const auto& [key, value] : entries)
        for (const auto& [k, f] : detail::fields())
            if (k == key) f.set(cfg, key, value);
    validate(cfg);
    return cfg;
}

/// Reads a config file; a relative data_root is resolved against the file's directory.
inline TrainConfig load_config(const std::filesystem::path& path) {
    const Bytes raw = read_file(path);
    TrainConfig cfg = parse_config(std::string(raw.begin(), raw.end()), path.string());
    // relative paths are relative to the config file, not the working directory
    for (std::string* p : {&cfg.data_root, &cfg.out, &cfg.log})
        if (!p->empty() && std::filesystem::path(*p).is_relative())
            *p = (path.parent_path() / *p).lexically_normal().string();
    return cfg;
}

/// Canonical serialization (fixed key order); round-trips through parse_config.
inline std::string serialize_config(const TrainConfig& c) {
    std::string s;
    for (const auto& [k, f] : detail::fields()) s += k + " = " + f.get(c) + "\n";
    return s;
}

} // namespace frdiff
