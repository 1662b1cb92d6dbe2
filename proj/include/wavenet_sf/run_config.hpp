#pragma once

// Flat `key = value` run configuration shared by every CLI command.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "data_io.hpp"
#include "evalkit.hpp"
#include "model.hpp"
#include "training.hpp"

namespace wnsf {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string manifest = "data/manifest.tsv";
    std::size_t per_class = 16;
    std::uint64_t data_seed = 1;
    double val_ratio = 0.15;
    double test_ratio = 0.15;
    std::vector<double> psnr_ladder = default_psnr_ladder();
    std::uint64_t noise_seed = 7;
    double noise_tol_db = 0.05;

    SynthConfig synth() const {
        SynthConfig s;
        s.size = model.input_size;
        s.per_class = per_class;
        s.seed = data_seed;
        s.val_ratio = val_ratio;
        s.test_ratio = test_ratio;
        return s;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
    N out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
    return out;
}

template <class N>
std::vector<N> parse_list(const std::string& key, const std::string& v) {
    std::vector<N> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<N>(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline bool parse_switch(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

}  // namespace detail

/// Applies one key. Unknown keys and unparsable values throw ConfigError.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
    using detail::parse_list;
    using detail::parse_number;
    using detail::parse_switch;
    using sz = std::size_t;
    ModelConfig& m = c.model;
    TrainConfig& t = c.train;

    if (key == "model.input_size") m.input_size = parse_number<sz>(key, v);
    else if (key == "model.num_classes") m.num_classes = parse_number<sz>(key, v);
    else if (key == "model.stage_channels") {
        const auto ch = parse_list<sz>(key, v);
        const sz blocks = m.stages.empty() ? 2 : m.stages.front().blocks;
        m.stages.clear();
        for (sz i = 0; i < ch.size(); ++i) m.stages.push_back({blocks, ch[i], i > 0});
    } else if (key == "model.stage_blocks") {
        const auto b = parse_number<sz>(key, v);
        for (auto& s : m.stages) s.blocks = b;
    } else if (key == "model.hffc_channels") m.hffc_channels = parse_list<sz>(key, v);
    else if (key == "model.d_lf") m.d_lf = parse_number<sz>(key, v);
    else if (key == "model.d_hf") m.d_hf = parse_number<sz>(key, v);
    else if (key == "model.msw_sa_cap") m.msw_sa_cap = parse_number<sz>(key, v);
    else if (key == "model.msw_sa_compress") {
        if (v == "sum") m.msw_sa_compress = Compress::sum;
        else if (v == "concat") m.msw_sa_compress = Compress::concat;
        else throw ConfigError(key + ": expected sum or concat, got '" + v + "'");
    } else if (key == "model.hffc_filter_size") m.hffc.filter_size = parse_number<sz>(key, v);
    else if (key == "model.hffc_groups") m.hffc.groups = parse_number<sz>(key, v);
    else if (key == "model.hffc_se_reduction") m.hffc.se_reduction = parse_number<sz>(key, v);
    else if (key == "train.lr_base") t.schedule.base_lr = parse_number<double>(key, v);
    else if (key == "train.lr_min") t.schedule.min_lr = parse_number<double>(key, v);
    else if (key == "train.weight_decay") t.adam.weight_decay = parse_number<double>(key, v);
    else if (key == "train.beta1") t.adam.beta1 = parse_number<double>(key, v);
    else if (key == "train.beta2") t.adam.beta2 = parse_number<double>(key, v);
    else if (key == "train.batch_size") t.batch_size = parse_number<sz>(key, v);
    else if (key == "train.epochs") t.schedule.total_epochs = parse_number<sz>(key, v);
    else if (key == "train.warmup_epochs") t.schedule.warmup_epochs = parse_number<sz>(key, v);
    else if (key == "train.seed") t.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "train.augment") t.augment = parse_switch(key, v);
    else if (key == "train.recalibrate_bn") t.recalibrate_bn = parse_switch(key, v);
    else if (key == "aug.rotation_deg") t.aug.rotation_deg = parse_number<double>(key, v);
    else if (key == "aug.crop_scale_lo") t.aug.crop_scale_lo = parse_number<double>(key, v);
    else if (key == "aug.crop_scale_hi") t.aug.crop_scale_hi = parse_number<double>(key, v);
    else if (key == "aug.jitter") t.aug.jitter = parse_number<double>(key, v);
    else if (key == "aug.hflip_prob") t.aug.hflip_prob = parse_number<double>(key, v);
    else if (key == "data.manifest") c.manifest = v;
    else if (key == "data.per_class") c.per_class = parse_number<sz>(key, v);
    else if (key == "data.seed") c.data_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "data.val_ratio") c.val_ratio = parse_number<double>(key, v);
    else if (key == "data.test_ratio") c.test_ratio = parse_number<double>(key, v);
    else if (key == "noise.psnr_ladder") c.psnr_ladder = parse_list<double>(key, v);
    else if (key == "noise.seed") c.noise_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "noise.tol_db") c.noise_tol_db = parse_number<double>(key, v);
    else if (key == "ablation.wavelet_front_end") m.ablation.wavelet_front_end = parse_switch(key, v);
    else if (key == "ablation.msw_sa") m.ablation.msw_sa = parse_switch(key, v);
    else if (key == "ablation.hffc") m.ablation.hffc = parse_switch(key, v);
    else if (key == "ablation.ffe") {
        if (v == "full" || v == "on") m.ablation.ffe = FfeVariant::full;
        else if (v == "off") m.ablation.ffe = FfeVariant::off;
        else if (v == "no_selection") m.ablation.ffe = FfeVariant::no_selection;
        else if (v == "no_decomposition") m.ablation.ffe = FfeVariant::no_decomposition;
        else throw ConfigError(key + ": expected full, off, no_selection or no_decomposition, got '" + v + "'");
    } else throw ConfigError("unknown config key '" + key + "'");
}

/// Parses `key = value` lines; `#` starts a comment. Errors carry the line number.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    base.model.validate();
    base.train.schedule.validate();
    return base;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace wnsf
