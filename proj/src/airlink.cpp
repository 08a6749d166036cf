// SPDX-License-Identifier: Apache-2.0
#include "qmimo/airlink.hpp"
#include "qmimo/errors.hpp"

#include <algorithm>
#include <stdexcept>

namespace qmimo {

SelectionMasks SelectionMasks::from_indices(Index M, std::vector<Index> full_resolution) {
    std::sort(full_resolution.begin(), full_resolution.end());
    if (std::adjacent_find(full_resolution.begin(), full_resolution.end()) != full_resolution.end())
        throw std::invalid_argument("selection masks: duplicate full-resolution index");
    SelectionMasks s;
    s.a = Eigen::VectorXd::Zero(M);
    for (Index m : full_resolution) {
        if (m < 0 || m >= M) throw std::invalid_argument("selection masks: index " + std::to_string(m) + " out of range");
        s.a[m] = 1.0;
    }
    s.b = Eigen::VectorXd::Ones(M) - s.a;
    s.A = std::move(full_resolution);
    for (Index m = 0; m < M; ++m)
        if (s.a[m] == 0.0) s.B.push_back(m);
    return s;
}

SelectionMasks SelectionMasks::from_mask(const Eigen::Ref<const Eigen::VectorXd>& a) {
    std::vector<Index> idx;
    for (Index m = 0; m < a.size(); ++m) {
        if (a[m] != 0.0 && a[m] != 1.0) throw std::invalid_argument("selection masks: mask must be binary");
        if (a[m] == 1.0) idx.push_back(m);
    }
    return from_indices(a.size(), std::move(idx));
}

SelectionMasks SelectionMasks::equispaced(Index M, Index full_resolution_count) {
    if (full_resolution_count < 0 || full_resolution_count > M)
        throw std::invalid_argument("selection masks: M_A must lie in [0, M]");
    std::vector<Index> idx;
    for (Index i = 0; i < full_resolution_count; ++i) idx.push_back(i * M / full_resolution_count);
    return from_indices(M, std::move(idx));
}

void SelectionMasks::validate() const {
    const Index M = a.size();
    if (b.size() != M) throw std::logic_error("selection masks: a and b differ in length");
    if (((a + b).array() != 1.0).any()) throw std::logic_error("selection masks: b != 1 - a");
    if (static_cast<Index>(A.size() + B.size()) != M) throw std::logic_error("selection masks: A and B do not partition");
    if (a.sum() != double(A.size())) throw std::logic_error("selection masks: |A| != sum(a)");
    for (Index m : A)
        if (a[m] != 1.0) throw std::logic_error("selection masks: A disagrees with a");
    for (Index m : B)
        if (b[m] != 1.0) throw std::logic_error("selection masks: B disagrees with b");
}

Tensor awgn(Shape shape, double sigma2, Rng& rng) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("awgn: noise variance must be non-negative");
    Tensor w(std::move(shape));
    if (sigma2 == 0.0) return w;
    std::normal_distribution<double> dist(0.0, std::sqrt(sigma2 / 2.0));
    for (Index i = 0; i < w.size(); ++i) w[i] = dist(rng);
    return w;
}

Tensor transmit(const Tensor& Htilde, const Eigen::Ref<const Eigen::MatrixXd>& Ptilde, double sigma2, Rng& rng) {
    const Index rows = Htilde.shape()[Htilde.shape().size() - 2];
    const Index inner = Htilde.shape().back();
    if (inner != Ptilde.rows())
        throw ContractViolation("transmit: channel has " + std::to_string(inner) + " columns, pilot has " +
                                std::to_string(Ptilde.rows()) + " rows");
    const Index np = Ptilde.cols();
    const Index batch = Htilde.size() / (rows * inner);
    Shape shape = Htilde.shape();
    shape.back() = np;
    Tensor z = awgn(shape, sigma2, rng);
    z.matrix(batch * rows, np) += Htilde.matrix(batch * rows, inner) * Ptilde;
    return z;
}

Tensor row_mask(const Tensor& Z, const Eigen::Ref<const Eigen::VectorXd>& mask) {
    const Index M = mask.size();
    const Index np = Z.shape().back();
    const Index rows = Z.size() / np;
    if (Z.shape()[Z.shape().size() - 2] != 2 * M) throw std::invalid_argument("row_mask: expected 2M rows");
    Tensor out(Z.shape());
    auto o = out.matrix(rows, np);
    const auto z = Z.matrix(rows, np);
    for (Index r = 0; r < rows; ++r) o.row(r) = z.row(r) * mask[r % M];
    return out;
}

std::pair<Tensor, Tensor> apply_masks(const Tensor& Ztilde, const Tensor& Zsign, const SelectionMasks& masks) {
    return {row_mask(Ztilde, masks.a), row_mask(Zsign, masks.b)};
}

Observation observe(const Tensor& Htilde, const Eigen::Ref<const Eigen::MatrixXd>& Ptilde, double sigma2,
                    const SelectionMasks& masks, Rng& rng) {
    Observation obs;
    obs.sigma2 = sigma2;
    obs.Ztilde = transmit(Htilde, Ptilde, sigma2, rng);
    obs.Zsign = Tensor(obs.Ztilde.shape(), hard_sign(obs.Ztilde.data().array()).matrix());
    std::tie(obs.Ya, obs.Yb) = apply_masks(obs.Ztilde, obs.Zsign, masks);
    return obs;
}

namespace ag {

Var quantize(const Var& z, double kappa, QuantizerSurrogate mode) {
    if (!(kappa > 0.0)) throw std::invalid_argument("quantize: kappa must be positive");
    const auto& zv = z.value().data();
    Tensor out(z.shape());
    if (mode == QuantizerSurrogate::SignForward)
        out.data() = hard_sign(zv.array()).matrix();
    else
        out.data() = zv.unaryExpr([kappa](double x) { return softsign(x, kappa); });
    return make_op(std::move(out), {z}, [z, kappa](const Tensor& g) {
        const auto d = z.value().data().unaryExpr([kappa](double x) { return softsign_derivative(x, kappa); });
        z.node()->accumulate(g.data().cwiseProduct(d));
    });
}

Var row_mask(const Var& z, const Var& mask) {
    const Index M = mask.size();
    const Index np = z.shape().back();
    const Index rows = z.size() / np;
    Tensor out = qmimo::row_mask(z.value(), mask.value().data());
    return make_op(std::move(out), {z, mask}, [z, mask, M, np, rows](const Tensor& g) {
        const auto G = g.matrix(rows, np);
        if (z.requires_grad()) z.node()->accumulate(qmimo::row_mask(g, mask.value().data()).data());
        if (mask.requires_grad()) {
            const auto Z = z.value().matrix(rows, np);
            Eigen::VectorXd dm = Eigen::VectorXd::Zero(M);
            for (Index r = 0; r < rows; ++r) dm[r % M] += G.row(r).dot(Z.row(r));
            mask.node()->accumulate(dm);
        }
    });
}

}  // namespace ag

}  // namespace qmimo
