// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/errors.hpp"
#include "qmimo/tensor.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace qmimo {

using ComplexTensor = BasicTensor<std::complex<double>>;

// Multipath ULA channel recipe. All users share the same path count.
struct ChannelSpec {
    Index M = 64;
    Index K = 8;
    Index L = 3;
    double doa_min_deg = -80.0;
    double doa_max_deg = 80.0;
    double doa_jitter_deg = 4.0;
    double gain_var = 1.0;
    double gain_jitter_var = 0.04;
    Index n_train = 100000;
    Index n_test = 5000;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const ChannelSpec&) const = default;
};

nlohmann::json channel_spec_to_json(const ChannelSpec& spec);
ChannelSpec channel_spec_from_json(const nlohmann::json& j);

enum class Split { Train, Test };

const char* to_string(Split split);

struct ChannelBatch {
    ComplexTensor H;  // [n, M, K]
    Tensor Htilde;    // [n, 2M, 2K]
    Tensor Htarget;   // [n, 2M, K]
    ChannelSpec spec;
    Split split = Split::Train;
    double scale = 1.0;  // normalization applied to every sample

    Index size() const { return H.empty() ? 0 : H.dim(0); }
    // The selected samples as a new batch.
    ChannelBatch subset(std::span<const Index> rows) const;
};

// a(theta)_m = exp(-j*pi*m*sin(theta)), m = 0..M-1. Accepts |theta| <= 90
// degrees; the endpoints evaluate as the limit.
template <typename Scalar>
Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> steering_vector(Scalar theta_deg, Index M) {
    if (!(std::abs(theta_deg) <= Scalar(90)))
        throw DomainError("steering_vector: DOA must lie in [-90, 90] degrees, got " + std::to_string(double(theta_deg)));
    if (M < 1) throw DomainError("steering_vector: antenna count must be positive");
    const Scalar phase = -std::numbers::pi_v<Scalar> * std::sin(theta_deg * std::numbers::pi_v<Scalar> / Scalar(180));
    Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> a(M);
    for (Index m = 0; m < M; ++m) a[m] = std::polar(Scalar(1), phase * Scalar(m));
    return a;
}

// Real-valued stacking of a complex matrix:
//   full   = [Re(H), -Im(H); Im(H), Re(H)]
//   target = [Re(H); Im(H)]
template <typename Derived>
auto real_stack(const Eigen::MatrixBase<Derived>& H) {
    using Real = typename Eigen::NumTraits<typename Derived::Scalar>::Real;
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
    const Index m = H.rows(), k = H.cols();
    Mat full(2 * m, 2 * k), target(2 * m, k);
    full.topLeftCorner(m, k) = H.real();
    full.topRightCorner(m, k) = -H.imag();
    full.bottomLeftCorner(m, k) = H.imag();
    full.bottomRightCorner(m, k) = H.real();
    target.topRows(m) = H.real();
    target.bottomRows(m) = H.imag();
    return std::pair<Mat, Mat>{std::move(full), std::move(target)};
}

// Stack a complex vector / matrix column-wise into [Re; Im].
template <typename Derived>
auto stack_columns(const Eigen::MatrixBase<Derived>& X) {
    using Real = typename Eigen::NumTraits<typename Derived::Scalar>::Real;
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> out(2 * X.rows(), X.cols());
    out.topRows(X.rows()) = X.real();
    out.bottomRows(X.rows()) = X.imag();
    return out;
}

// Inverse of the target layout: [Re; Im] (2M x K) -> complex M x K.
Eigen::MatrixXcd unstack_columns(const Eigen::Ref<const Eigen::MatrixXd>& stacked);

// One sample's channel for explicit path parameters.
Eigen::MatrixXcd multipath_channel(Index M, const Eigen::MatrixXd& doa_deg, const Eigen::MatrixXcd& gains);

// Generates the requested split. Initial DOAs and gains are drawn once from
// the seed; each sample perturbs them from its own counter-derived stream, so
// output does not depend on evaluation order. Samples are scaled so the
// average per-user energy over the training split equals M.
ChannelBatch synthesize_batch(const ChannelSpec& spec, Split split);

struct ChannelDataset {
    ChannelBatch train;
    ChannelBatch test;
};
ChannelDataset synthesize_dataset(const ChannelSpec& spec);

// Build a batch from complex channels (Htilde / Htarget are derived).
ChannelBatch make_batch(ComplexTensor H, const ChannelSpec& spec, Split split, double scale);

void save_channel_batch(const ChannelBatch& batch, const std::string& path);
ChannelBatch load_channel_batch(const std::string& path);

}  // namespace qmimo
