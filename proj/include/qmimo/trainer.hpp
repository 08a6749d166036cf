// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/airlink.hpp"
#include "qmimo/cenet.hpp"
#include "qmimo/channel.hpp"
#include "qmimo/config.hpp"
#include "qmimo/pdnet.hpp"
#include "qmimo/selnet.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmimo {

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    Index epoch = 0;
    double loss = 0.0;
    double cenet_loss = 0.0;
    double selnet_loss = 0.0;
    double lr = 0.0;
    double gamma3 = 0.0;
    double kappa = 0.0;
    double val_nmse = -1.0;  // negative when no validation split
    double wall_s = 0.0;
    std::vector<Index> A;  // allocation at the end of the epoch
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

struct TrainingCurves {
    std::vector<EpochRecord> epochs;
    Eigen::VectorXd final_u_tilde;  // empty without SELNet
};

struct LossTerms {
    ag::Var total, cenet, selnet;
};

// L_CENet + gamma3(epoch) L_SELNet; the SELNet term is dropped when absent.
LossTerms composite_loss(const ag::Var& Hhat, const Tensor& Htarget, const ag::Var* u_tilde,
                         const ExperimentConfig& cfg, Index epoch);

// PDNet -> noise -> quantizer -> masks -> CENet, wired per the config mode.
class EndToEndModel {
public:
    explicit EndToEndModel(const ExperimentConfig& cfg);

    struct Pass {
        ag::Var Hhat;
        LossTerms loss;
        std::optional<SelectionState> selection;
    };
    // Htilde [N, 2M, 2K], noise [N, 2M, Np].
    Pass forward(const Tensor& Htilde, const Tensor& Htarget, const Tensor& noise, Index epoch, bool training);

    Eigen::MatrixXd pilot() const;
    SelectionMasks masks() const;
    std::optional<SelectionState> selection() const;

    nn::StateRefs state();
    const ExperimentConfig& config() const { return cfg_; }
    CENet& cenet() { return cenet_; }
    PilotWeights& pilot_weights() { return pilot_; }
    SelNet* selnet() { return selnet_ ? &*selnet_ : nullptr; }

private:
    ExperimentConfig cfg_;
    PilotWeights pilot_;
    Eigen::MatrixXd frozen_pilot_;
    std::optional<SelNet> selnet_;
    SelectionMasks fixed_;
    CENet cenet_;
};

// Deployment artefact: everything the receiver needs after training.
struct ArtifactBundle {
    ExperimentConfig config;
    Eigen::MatrixXd Ptilde;  // [2K, Np]
    SelectionMasks masks;
    std::map<std::string, Tensor> cenet_state;  // parameters and running statistics
    TrainingCurves curves;
};

inline constexpr int kBundleVersion = 1;

void export_deployment(const ArtifactBundle& bundle, const std::string& path);
ArtifactBundle load_deployment(const std::string& path);

// CENet rebuilt from a bundle for inference.
class Estimator {
public:
    explicit Estimator(const ArtifactBundle& bundle);

    const ArtifactBundle& bundle() const { return bundle_; }
    // Ya, Yb [N, 2M, Np] -> Hhat [N, 2M, K]
    Tensor infer(const Tensor& Ya, const Tensor& Yb);
    // Sends the pilot through Htilde [N, 2M, 2K] at noise variance sigma2 and estimates.
    Tensor estimate(const Tensor& Htilde, double sigma2, Rng& rng, Index chunk = 256);

private:
    ArtifactBundle bundle_;
    CENet cenet_;
};

struct TrainOptions {
    std::string log_path;         // JSON lines, appended
    std::string checkpoint_path;  // written after every epoch when set
    bool resume = false;
    Index stop_after_epochs = -1;  // halt early (for interruption tests)
    std::function<void(const EpochRecord&)> on_epoch;
};

// Mini-batch training; deterministic for a given config seed.
ArtifactBundle train(const ExperimentConfig& cfg, const ChannelBatch& data, const TrainOptions& options = {});

// Bundle snapshot of the current model state.
ArtifactBundle make_bundle(EndToEndModel& model, TrainingCurves curves);

// Noise for a mini-batch: i.i.d. N(0, sigma2/2), or per-sample SNR drawn
// uniformly in dB when the config mixes SNRs.
Tensor training_noise(const ExperimentConfig& cfg, Shape shape, Rng& rng);

}  // namespace qmimo
