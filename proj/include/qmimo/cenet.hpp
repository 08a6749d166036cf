// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/errors.hpp"
#include "qmimo/nn.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace qmimo {

// Coefficients that turn rk3_combine into Kutta's third-order step when every
// stage is mu * f.
inline constexpr std::array<double, 5> kClassicalRk3{0.5, -1.0, 2.0, 1.0 / 6.0, 4.0};

// Unfolded third-order Runge-Kutta update:
//   G1 = phi1(X)
//   G2 = phi2(X + b1 G1)
//   G3 = phi3(X + b2 G1 + b3 G2)
//   Z  = X + b4 (G1 + b5 G2 + G3)
// Works for Eigen values with scalar coefficients and for ag::Var with
// trainable scalar coefficients.
template <typename T, typename Coef, typename Phi1, typename Phi2, typename Phi3>
T rk3_combine(const T& x, const std::array<Coef, 5>& beta, Phi1&& phi1, Phi2&& phi2, Phi3&& phi3) {
    const T g1 = phi1(x);
    const T g2 = phi2(T(x + beta[0] * g1));
    const T g3 = phi3(T(x + beta[1] * g1 + beta[2] * g2));
    return T(x + beta[3] * T(g1 + beta[4] * g2 + g3));
}

// Per-stream channel counts of the three densely connected blocks. Block i
// consumes the concatenation of everything before it, so C2 = 2 C1, C3 = 2 C2.
struct SubnetChannels {
    Index c1 = 0, c2 = 0, c3 = 0;

    static SubnetChannels from_first(Index c1) { return {c1, 2 * c1, 4 * c1}; }
    Index total() const { return c1 + c2 + c3; }
    void validate() const;
};

// Np -> K linear map along the pilot axis, then one conv stage to C1 channels.
class ResizeBlock {
public:
    ResizeBlock() = default;
    ResizeBlock(Index Np, Index K, Index c1, Rng& rng);
    // Y [N, 2M, Np] -> [N, C1, 2M, K]
    ag::Var operator()(const ag::Var& y, bool training);
    void collect(const std::string& prefix, nn::StateRefs& refs);

    nn::Parameter map;  // [Np, K]
    nn::ConvStage stage;
};

// Channel-preserving block; `plain` drops the Runge-Kutta wiring and chains the
// three stages (the parameter-matched CNN ablation).
class Rk3Block {
public:
    Rk3Block() = default;
    Rk3Block(Index channels, Rng& rng, bool plain = false);
    ag::Var operator()(const ag::Var& x, bool training);
    void collect(const std::string& prefix, nn::StateRefs& refs);
    bool plain() const { return plain_; }

    std::array<nn::Parameter, 5> beta;
    std::array<nn::ConvStage, 3> phi;

private:
    bool plain_ = false;
};

class DenseSubnet {
public:
    DenseSubnet() = default;
    DenseSubnet(Index Np, Index K, SubnetChannels channels, Rng& rng, bool plain_blocks = false);
    // Y [N, 2M, Np] -> [N, C_total, 2M, K]
    ag::Var operator()(const ag::Var& y, bool training);
    void collect(const std::string& prefix, nn::StateRefs& refs);
    const SubnetChannels& channels() const { return channels_; }

    ResizeBlock resize;
    std::array<Rk3Block, 3> blocks;

private:
    SubnetChannels channels_;
};

// Concatenated stream features -> two halving conv stages -> 1-channel conv.
class FusionHead {
public:
    FusionHead() = default;
    FusionHead(Index in_channels, Rng& rng);
    ag::Var operator()(const ag::Var& ha, const ag::Var& hb, bool training);
    void collect(const std::string& prefix, nn::StateRefs& refs);

    std::array<nn::ConvStage, 2> stages;
    nn::Conv2d out;
};

struct CenetShape {
    Index M = 0, K = 0, Np = 0;
    SubnetChannels stream_a, stream_b;
    bool plain_blocks = false;
};

class CENet {
public:
    CENet() = default;
    CENet(const CenetShape& shape, Rng& rng);

    // Ya, Yb [N, 2M, Np] -> Hhat [N, 2M, K]
    ag::Var operator()(const ag::Var& ya, const ag::Var& yb, bool training);
    Tensor infer(const Tensor& ya, const Tensor& yb);

    void collect(const std::string& prefix, nn::StateRefs& refs);
    const CenetShape& shape() const { return shape_; }

    DenseSubnet stream_a, stream_b;
    FusionHead fusion;

private:
    CenetShape shape_;
};

// Mean over samples and users of ||h_k - hhat_k||^2 / ||h_k||^2 for [N, 2M, K].
double nmse(const Tensor& Hhat, const Tensor& Htarget);

namespace ag {
Var cenet_loss(const Var& Hhat, const Tensor& Htarget);
}

}  // namespace qmimo
