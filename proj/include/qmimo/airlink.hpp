// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/autograd.hpp"
#include "qmimo/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace qmimo {

// Full-resolution (A) / one-bit (B) split of the M receive chains.
struct SelectionMasks {
    Eigen::VectorXd a;  // 1 on A
    Eigen::VectorXd b;  // 1 - a
    std::vector<Index> A, B;

    static SelectionMasks from_indices(Index M, std::vector<Index> full_resolution);
    static SelectionMasks from_mask(const Eigen::Ref<const Eigen::VectorXd>& a);
    static SelectionMasks all_one_bit(Index M) { return from_indices(M, {}); }
    // M_A indices spread evenly over the array: floor(i * M / M_A).
    static SelectionMasks equispaced(Index M, Index full_resolution_count);

    Index antennas() const { return a.size(); }
    Index full_resolution_count() const { return static_cast<Index>(A.size()); }
    void validate() const;
};

struct Observation {
    Tensor Ztilde;  // unquantized  [.., 2M, Np]
    Tensor Zsign;   // sign copy
    Tensor Ya;      // full-resolution rows
    Tensor Yb;      // one-bit rows
    double sigma2 = 0.0;
};

// Real-valued i.i.d. N(0, sigma2/2) entries: complex noise of variance sigma2.
Tensor awgn(Shape shape, double sigma2, Rng& rng);

// Htilde [2M, 2K] or [N, 2M, 2K] times Ptilde [2K, Np], plus noise.
Tensor transmit(const Tensor& Htilde, const Eigen::Ref<const Eigen::MatrixXd>& Ptilde, double sigma2, Rng& rng);

// sign with sign(0) = +1
template <typename Derived>
auto hard_sign(const Eigen::ArrayBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) { return v >= S(0) ? S(1) : S(-1); });
}
inline double hard_sign(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// 2 * sigmoid(kappa * x) - 1
inline double softsign(double x, double kappa) { return 2.0 / (1.0 + std::exp(-kappa * x)) - 1.0; }
inline double softsign_derivative(double x, double kappa) {
    const double s = 1.0 / (1.0 + std::exp(-kappa * x));
    return 2.0 * kappa * s * (1.0 - s);
}

// Rows m and m + M of Z are scaled by mask[m]. Z is [.., 2M, Np].
Tensor row_mask(const Tensor& Z, const Eigen::Ref<const Eigen::VectorXd>& mask);
std::pair<Tensor, Tensor> apply_masks(const Tensor& Ztilde, const Tensor& Zsign, const SelectionMasks& masks);

Observation observe(const Tensor& Htilde, const Eigen::Ref<const Eigen::MatrixXd>& Ptilde, double sigma2,
                    const SelectionMasks& masks, Rng& rng);

namespace ag {

enum class QuantizerSurrogate {
    SignForward,  // sign forward, softsign derivative backward
    Softsign,     // softsign both ways
};

Var quantize(const Var& z, double kappa, QuantizerSurrogate mode = QuantizerSurrogate::SignForward);

// Differentiable in both Z and the mask.
Var row_mask(const Var& z, const Var& mask);

}  // namespace ag

}  // namespace qmimo
