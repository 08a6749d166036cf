// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/nn.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace qmimo {

class DegeneratePilot : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// sqrt(Np * rho) * P / ||P||_F, so trace(P P^T) = Np * rho by construction.
template <typename Derived>
auto power_normalize(const Eigen::MatrixBase<Derived>& raw, double rho) {
    using Scalar = typename Derived::Scalar;
    const auto norm = raw.norm();
    if (!(norm > 0)) throw DegeneratePilot("pilot weights have zero Frobenius norm");
    const Scalar scale = std::sqrt(Scalar(raw.cols()) * Scalar(rho)) / norm;
    return Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>(scale * raw);
}

// Fewer pilot symbols than users leaves no room for distinct shifts.
class InfeasibleShift : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Trainable real pilot matrix [2K, Np] for K users.
struct PilotWeights {
    nn::Parameter raw;
    Index Np = 0;
    double rho = 1.0;

    // i.i.d. N(0, 1/(2K)) entries.
    static PilotWeights init(Index K, Index Np, double rho, Rng& rng);

    Eigen::MatrixXd normalized() const;
    ag::Var normalized_var() const;
    void collect(const std::string& prefix, nn::StateRefs& refs) { refs.params.emplace_back(prefix + ".raw", &raw); }
};

namespace ag {
// Power normalization layer over a [2K, Np] weight.
Var normalized_pilot(const Var& raw, double rho);
}  // namespace ag

// Htilde [N, 2M, 2K] times Ptilde [2K, Np] -> [N, 2M, Np]
inline ag::Var pdnet_forward(const ag::Var& Htilde, const ag::Var& Ptilde) { return ag::matmul_right(Htilde, Ptilde); }

struct ZcPilots {
    Eigen::MatrixXcd P;      // [K, Np]
    Eigen::MatrixXd Ptilde;  // [2K, Np] = [Re(P); Im(P)]
};

// Root-1 Zadoff-Chu sequence; user k gets the circular shift by k * floor(Np / K).
ZcPilots zc_pilots(Index Np, Index K, double rho);

}  // namespace qmimo
