// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/airlink.hpp"
#include "qmimo/channel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmimo {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode {
    Full,         // PDNet + SELNet + CENet
    OneBit,       // PDNet + CENet, every chain one-bit
    FixedAlloc,   // PDNet + CENet, given full-resolution set
    ZcPilots,     // frozen ZC pilots + CENet
    CnnAblation,  // Full with plain conv blocks
};

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct ExperimentConfig {
    ChannelSpec channel;
    Index Np = 64;
    double rho = 1.0;
    double train_snr_db = 10.0;

    Mode mode = Mode::Full;
    Index M_A = 16;
    std::vector<Index> fixed_A;  // FixedAlloc / ZcPilots; empty means equispaced

    Index batch = 100;
    Index epochs = 200;
    double lr = 2e-3;
    double lr_decay = 0.7;
    Index decay_every = 20;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

    double gamma1 = 1.0, gamma2 = 1.0;
    double gamma3_init = 0.01, gamma3_step = 0.02, gamma3_max = 0.5;

    double kappa = 70.0;
    double kappa_growth = 1.0;  // per-epoch factor; 1 keeps kappa fixed
    double kappa_max = 70.0;
    ag::QuantizerSurrogate surrogate = ag::QuantizerSurrogate::SignForward;

    Index c1_a = 60, c1_b = 20;

    bool snr_mix = false;
    double snr_mix_min_db = 0.0, snr_mix_max_db = 20.0;

    Index early_stop_patience = 0;  // 0 trains the full budget
    double val_fraction = 0.1;

    std::uint64_t seed = 1;

    double sigma2() const { return noise_variance(rho, train_snr_db); }
    static double noise_variance(double rho, double snr_db);
    // gamma3 for a 0-based epoch
    double gamma3_at(Index epoch) const;
    double lr_at(Index epoch) const;
    double kappa_at(Index epoch) const;
    // Deployed masks for the modes without SELNet.
    SelectionMasks fixed_masks() const;
    bool uses_selnet() const { return mode == Mode::Full || mode == Mode::CnnAblation; }
    bool trains_pilot() const { return mode != Mode::ZcPilots; }
    Index full_resolution_count() const;

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Flat "key = value" text; '#' starts a comment. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
std::string format_config(const ExperimentConfig& cfg);

// Stable hash of the resolved configuration.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace qmimo
