// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/errors.hpp"
#include "qmimo/nn.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace qmimo {

// Indicator of the k largest entries of u; ties go to the lower index.
Eigen::VectorXd topk_mask(const Eigen::Ref<const Eigen::VectorXd>& u, Index k);

struct SelectionState {
    Eigen::VectorXd v;        // logits
    Eigen::VectorXd u;        // softmax(v)
    Eigen::VectorXd u_tilde;  // M_A * u
    Eigen::VectorXd a, b;     // forward masks
    std::vector<Index> A, B;
    Index M_A = 0;
};

// (||u||_2^2 - M_A, ||u||_3^3 - M_A)
template <typename Derived>
std::pair<typename Derived::Scalar, typename Derived::Scalar> khot_residuals(const Eigen::MatrixBase<Derived>& u_tilde,
                                                                           Index M_A) {
    using S = typename Derived::Scalar;
    const auto abs = u_tilde.array().abs();
    return {abs.square().sum() - S(M_A), abs.cube().sum() - S(M_A)};
}

template <typename Derived>
typename Derived::Scalar selnet_loss(const Eigen::MatrixBase<Derived>& u_tilde, Index M_A, double gamma1, double gamma2) {
    if (gamma1 < 0 || gamma2 < 0) throw std::invalid_argument("selnet_loss: weights must be non-negative");
    const auto [r2, r3] = khot_residuals(u_tilde, M_A);
    return gamma1 * r2 * r2 + gamma2 * r3 * r3;
}

namespace ag {
// Forward: binary top-k mask of u_tilde. Backward: identity onto u_tilde.
Var topk_straight_through(const Var& u_tilde, Index k);
Var selnet_loss(const Var& u_tilde, Index M_A, double gamma1, double gamma2);
}  // namespace ag

// Fully connected selector: trainable 16-wide seed vector -> FC 16, 32, 64
// (leaky rectifier) -> linear to M logits -> softmax -> top-M_A.
class SelNet {
public:
    static constexpr Index kSeedWidth = 16;

    SelNet() = default;
    SelNet(Index M, Index M_A, Rng& rng);

    struct Output {
        ag::Var u_tilde;  // [M]
        ag::Var a;        // [M], binary forward, u_tilde gradient
        SelectionState state;
    };
    Output forward() const;
    SelectionState state() const { return forward().state; }

    Index antennas() const { return M_; }
    Index full_resolution_count() const { return M_A_; }
    void collect(const std::string& prefix, nn::StateRefs& refs);

private:
    Index M_ = 0, M_A_ = 0;
    nn::Parameter seed_;
    std::array<nn::Linear, 3> hidden_;
    nn::Linear head_;
};

// Numerical check of the k-hot characterization: a non-negative x with
// ||x||_r^r = ||x||_p^p = ||x||_q^q = K must be K-hot.
struct KhotCertificate {
    enum class Status { Certified, Violated, Counterexample };
    Status status = Status::Violated;
    int violated_norm = 0;  // exponent of the first norm equality that fails
    std::array<double, 3> residuals{};
    double max_binary_distance = 0.0;
};

struct KhotExponents {
    double r = 1.0, p = 2.0, q = 3.0;
};

KhotCertificate khot_certificate(const Eigen::Ref<const Eigen::VectorXd>& x, Index K, KhotExponents e = {},
                                 double tol = 1e-8, double binary_tol = 1e-3);

struct FalsificationReport {
    Index restarts = 0;
    Index converged = 0;        // restarts that reached residuals < tol
    Index counterexamples = 0;  // converged points that are not K-hot
    double worst_binary_distance = 0.0;
    Eigen::VectorXd worst_point;
};

// Minimizes the summed squared norm residuals over x >= 0 from random starts
// with projected gradient descent and records any near-feasible point that is
// not K-hot.
FalsificationReport falsify_khot(Index M, Index K, Index restarts, std::uint64_t seed, KhotExponents e = {},
                                 double tol = 1e-8, double binary_tol = 1e-3);

}  // namespace qmimo
