// SPDX-License-Identifier: Apache-2.0
#include "qmimo/config.hpp"

#include "qmimo/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace qmimo {

namespace {

constexpr std::pair<Mode, const char*> kModeNames[] = {
    {Mode::Full, "full"},
    {Mode::OneBit, "one_bit"},
    {Mode::FixedAlloc, "fixed_alloc"},
    {Mode::ZcPilots, "zc_pilots"},
    {Mode::CnnAblation, "cnn_ablation"},
};

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

nlohmann::json parse_value(const std::string& key, const std::string& raw, const nlohmann::json& like) {
    try {
        std::size_t used = 0;
        if (like.is_boolean()) {
            if (raw == "true" || raw == "1") return true;
            if (raw == "false" || raw == "0") return false;
            throw ConfigError("");
        }
        if (like.is_number_unsigned()) {
            const auto v = std::stoull(raw, &used);
            if (used != raw.size()) throw ConfigError("");
            return v;
        }
        if (like.is_number_integer()) {
            const auto v = std::stoll(raw, &used);
            if (used != raw.size()) throw ConfigError("");
            return v;
        }
        if (like.is_number_float()) {
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw ConfigError("");
            return v;
        }
        if (like.is_array()) {
            nlohmann::json arr = nlohmann::json::array();
            std::stringstream ss(raw);
            for (std::string item; std::getline(ss, item, ',');) {
                item = trim(item);
                if (item.empty()) continue;
                const auto v = std::stoll(item, &used);
                if (used != item.size()) throw ConfigError("");
                arr.push_back(v);
            }
            return arr;
        }
        return raw;
    } catch (const std::exception&) {
        throw ConfigError("config: cannot parse value '" + raw + "' for key '" + key + "'");
    }
}

std::string format_value(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].dump();
        return s;
    }
    return v.dump();
}

}  // namespace

const char* to_string(Mode mode) {
    for (const auto& [m, name] : kModeNames)
        if (m == mode) return name;
    return "?";
}

Mode mode_from_string(const std::string& s) {
    for (const auto& [m, name] : kModeNames)
        if (s == name) return m;
    throw ConfigError("unknown mode '" + s + "' (full, one_bit, fixed_alloc, zc_pilots, cnn_ablation)");
}

double ExperimentConfig::noise_variance(double rho, double snr_db) { return rho / std::pow(10.0, snr_db / 10.0); }

double ExperimentConfig::gamma3_at(Index epoch) const {
    return std::min(gamma3_init + gamma3_step * double(epoch), gamma3_max);
}

double ExperimentConfig::lr_at(Index epoch) const { return lr * std::pow(lr_decay, double(epoch / decay_every)); }

double ExperimentConfig::kappa_at(Index epoch) const {
    if (kappa_growth == 1.0) return kappa;
    return std::min(kappa * std::pow(kappa_growth, double(epoch)), std::max(kappa, kappa_max));
}

Index ExperimentConfig::full_resolution_count() const {
    switch (mode) {
        case Mode::OneBit: return 0;
        case Mode::FixedAlloc:
        case Mode::ZcPilots: return fixed_A.empty() ? M_A : static_cast<Index>(fixed_A.size());
        default: return M_A;
    }
}

SelectionMasks ExperimentConfig::fixed_masks() const {
    if (uses_selnet()) throw std::logic_error("fixed_masks: mode " + std::string(to_string(mode)) + " learns its masks");
    if (mode == Mode::OneBit) return SelectionMasks::all_one_bit(channel.M);
    if (!fixed_A.empty()) return SelectionMasks::from_indices(channel.M, fixed_A);
    return SelectionMasks::equispaced(channel.M, M_A);
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    channel.validate();
    if (Np < 1) fail("Np must be positive");
    if (!(rho > 0.0)) fail("rho must be positive");
    if (!std::isfinite(train_snr_db)) fail("train_snr_db must be finite");
    if (batch < 1) fail("batch must be positive");
    if (epochs < 0) fail("epochs must be non-negative");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
    if (decay_every < 1) fail("decay_every must be positive");
    if (gamma1 < 0 || gamma2 < 0 || gamma3_init < 0 || gamma3_step < 0 || gamma3_max < 0)
        fail("loss weights and schedules must be non-negative");
    if (!(kappa > 0.0) || !(kappa_growth > 0.0)) fail("kappa and kappa_growth must be positive");
    if (c1_a < 1 || c1_b < 1) fail("c1_a and c1_b must be positive");
    if (snr_mix && snr_mix_min_db > snr_mix_max_db) fail("snr_mix_min_db exceeds snr_mix_max_db");
    if (early_stop_patience < 0) fail("early_stop_patience must be non-negative");
    if (early_stop_patience > 0 && !(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in (0, 1)");
    if (mode == Mode::ZcPilots && Np < channel.K) fail("ZC pilots need Np >= K");
    if (uses_selnet()) {
        if (M_A < 1 || M_A > channel.M) fail("M_A must lie in [1, M] when SELNet allocates");
    } else if (mode != Mode::OneBit) {
        if (fixed_A.empty() && (M_A < 0 || M_A > channel.M)) fail("M_A must lie in [0, M]");
        if (!fixed_A.empty()) SelectionMasks::from_indices(channel.M, fixed_A);
    }
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["M"] = c.channel.M;
    j["K"] = c.channel.K;
    j["L"] = c.channel.L;
    j["doa_min_deg"] = c.channel.doa_min_deg;
    j["doa_max_deg"] = c.channel.doa_max_deg;
    j["doa_jitter_deg"] = c.channel.doa_jitter_deg;
    j["gain_var"] = c.channel.gain_var;
    j["gain_jitter_var"] = c.channel.gain_jitter_var;
    j["n_train"] = c.channel.n_train;
    j["n_test"] = c.channel.n_test;
    j["channel_seed"] = c.channel.seed;
    j["Np"] = c.Np;
    j["rho"] = c.rho;
    j["train_snr_db"] = c.train_snr_db;
    j["mode"] = to_string(c.mode);
    j["M_A"] = c.M_A;
    j["fixed_A"] = c.fixed_A;
    j["batch"] = c.batch;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["lr_decay"] = c.lr_decay;
    j["decay_every"] = c.decay_every;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["gamma1"] = c.gamma1;
    j["gamma2"] = c.gamma2;
    j["gamma3_init"] = c.gamma3_init;
    j["gamma3_step"] = c.gamma3_step;
    j["gamma3_max"] = c.gamma3_max;
    j["kappa"] = c.kappa;
    j["kappa_growth"] = c.kappa_growth;
    j["kappa_max"] = c.kappa_max;
    j["surrogate"] = c.surrogate == ag::QuantizerSurrogate::SignForward ? "sign" : "softsign";
    j["c1_a"] = c.c1_a;
    j["c1_b"] = c.c1_b;
    j["snr_mix"] = c.snr_mix;
    j["snr_mix_min_db"] = c.snr_mix_min_db;
    j["snr_mix_max_db"] = c.snr_mix_max_db;
    j["early_stop_patience"] = c.early_stop_patience;
    j["val_fraction"] = c.val_fraction;
    j["seed"] = c.seed;
    return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c.channel.M = j.at("M");
        c.channel.K = j.at("K");
        c.channel.L = j.at("L");
        c.channel.doa_min_deg = j.at("doa_min_deg");
        c.channel.doa_max_deg = j.at("doa_max_deg");
        c.channel.doa_jitter_deg = j.at("doa_jitter_deg");
        c.channel.gain_var = j.at("gain_var");
        c.channel.gain_jitter_var = j.at("gain_jitter_var");
        c.channel.n_train = j.at("n_train");
        c.channel.n_test = j.at("n_test");
        c.channel.seed = j.at("channel_seed");
        c.Np = j.at("Np");
        c.rho = j.at("rho");
        c.train_snr_db = j.at("train_snr_db");
        c.mode = mode_from_string(j.at("mode"));
        c.M_A = j.at("M_A");
        c.fixed_A = j.at("fixed_A").get<std::vector<Index>>();
        c.batch = j.at("batch");
        c.epochs = j.at("epochs");
        c.lr = j.at("lr");
        c.lr_decay = j.at("lr_decay");
        c.decay_every = j.at("decay_every");
        c.adam_beta1 = j.at("adam_beta1");
        c.adam_beta2 = j.at("adam_beta2");
        c.adam_eps = j.at("adam_eps");
        c.gamma1 = j.at("gamma1");
        c.gamma2 = j.at("gamma2");
        c.gamma3_init = j.at("gamma3_init");
        c.gamma3_step = j.at("gamma3_step");
        c.gamma3_max = j.at("gamma3_max");
        c.kappa = j.at("kappa");
        c.kappa_growth = j.at("kappa_growth");
        c.kappa_max = j.at("kappa_max");
        const std::string s = j.at("surrogate");
        if (s != "sign" && s != "softsign") throw ConfigError("config: surrogate must be 'sign' or 'softsign'");
        c.surrogate = s == "sign" ? ag::QuantizerSurrogate::SignForward : ag::QuantizerSurrogate::Softsign;
        c.c1_a = j.at("c1_a");
        c.c1_b = j.at("c1_b");
        c.snr_mix = j.at("snr_mix");
        c.snr_mix_min_db = j.at("snr_mix_min_db");
        c.snr_mix_max_db = j.at("snr_mix_max_db");
        c.early_stop_patience = j.at("early_stop_patience");
        c.val_fraction = j.at("val_fraction");
        c.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
    nlohmann::json j = to_json(base);
    std::istringstream in(text);
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (!j.contains(key)) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        j[key] = parse_value(key, value, j[key]);
    }
    ExperimentConfig cfg = config_from_json(j);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    const auto j = to_json(cfg);
    for (const auto& [key, value] : j.items()) out += key + " = " + format_value(value) + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    return "fnv1a64:" + io::hex64(io::fnv1a64(to_json(cfg).dump()));
}

}  // namespace qmimo
