// SPDX-License-Identifier: Apache-2.0
#include "qmimo/selnet.hpp"

#include "qmimo/random.hpp"

#include <algorithm>
#include <numeric>

namespace qmimo {

Eigen::VectorXd topk_mask(const Eigen::Ref<const Eigen::VectorXd>& u, Index k) {
    if (k < 0 || k > u.size()) throw std::invalid_argument("topk_mask: k must lie in [0, M]");
    std::vector<Index> order(static_cast<std::size_t>(u.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return u[i] > u[j]; });
    Eigen::VectorXd a = Eigen::VectorXd::Zero(u.size());
    for (Index i = 0; i < k; ++i) a[order[static_cast<std::size_t>(i)]] = 1.0;
    return a;
}

namespace ag {

Var topk_straight_through(const Var& u_tilde, Index k) {
    Tensor out(u_tilde.shape(), topk_mask(u_tilde.value().data(), k));
    return make_op(std::move(out), {u_tilde}, [u_tilde](const Tensor& g) { u_tilde.node()->accumulate(g.data()); });
}

Var selnet_loss(const Var& u_tilde, Index M_A, double gamma1, double gamma2) {
    if (gamma1 < 0 || gamma2 < 0) throw std::invalid_argument("selnet_loss: weights must be non-negative");
    const Var r2 = power_sum(u_tilde, 2.0) + (-double(M_A));
    const Var r3 = power_sum(u_tilde, 3.0) + (-double(M_A));
    return gamma1 * square(r2) + gamma2 * square(r3);
}

}  // namespace ag

SelNet::SelNet(Index M, Index M_A, Rng& rng)
    : M_(M),
      M_A_(M_A),
      seed_(nn::normal_tensor({1, kSeedWidth}, 1.0, rng)),
      hidden_{nn::Linear(kSeedWidth, 16, rng), nn::Linear(16, 32, rng), nn::Linear(32, 64, rng)},
      head_(64, M, rng) {
    if (M_A < 1 || M_A > M)
        throw std::invalid_argument("SelNet: M_A = " + std::to_string(M_A) + " outside [1, " + std::to_string(M) + "]");
}

SelNet::Output SelNet::forward() const {
    ag::Var h = seed_.var();
    for (const auto& layer : hidden_) h = ag::leaky_relu(layer(h), nn::kLeakySlope);
    const ag::Var v = ag::reshape(head_(h), {M_});
    const ag::Var u = ag::softmax(v);
    ag::Var u_tilde = double(M_A_) * u;
    ag::Var a = ag::topk_straight_through(u_tilde, M_A_);

    SelectionState s;
    s.v = v.value().data();
    s.u = u.value().data();
    s.u_tilde = u_tilde.value().data();
    s.a = a.value().data();
    s.b = Eigen::VectorXd::Ones(M_) - s.a;
    for (Index m = 0; m < M_; ++m) (s.a[m] == 1.0 ? s.A : s.B).push_back(m);
    s.M_A = M_A_;
    return {std::move(u_tilde), std::move(a), std::move(s)};
}

void SelNet::collect(const std::string& prefix, nn::StateRefs& refs) {
    refs.params.emplace_back(prefix + ".seed", &seed_);
    for (std::size_t i = 0; i < hidden_.size(); ++i) hidden_[i].collect(prefix + ".fc" + std::to_string(i), refs);
    head_.collect(prefix + ".head", refs);
}

namespace {

Eigen::Vector3d norm_residuals(const Eigen::VectorXd& x, Index K, const KhotExponents& e) {
    return {x.array().pow(e.r).sum() - double(K), x.array().pow(e.p).sum() - double(K),
            x.array().pow(e.q).sum() - double(K)};
}

double binary_distance(const Eigen::VectorXd& x) {
    return x.unaryExpr([](double v) { return std::min(std::abs(v), std::abs(v - 1.0)); }).maxCoeff();
}

}  // namespace

KhotCertificate khot_certificate(const Eigen::Ref<const Eigen::VectorXd>& x, Index K, KhotExponents e, double tol,
                                 double binary_tol) {
    if (!(0.0 < e.r && e.r < e.p && e.p < e.q)) throw std::invalid_argument("khot_certificate: need 0 < r < p < q");
    if ((x.array() < 0.0).any()) throw DomainError("khot_certificate: entries must be non-negative");
    KhotCertificate c;
    const Eigen::Vector3d res = norm_residuals(x, K, e);
    for (int i = 0; i < 3; ++i) c.residuals[static_cast<std::size_t>(i)] = res[i];
    c.max_binary_distance = x.size() ? binary_distance(x) : 0.0;
    const std::array<double, 3> exps{e.r, e.p, e.q};
    for (int i = 0; i < 3; ++i)
        if (std::abs(res[i]) > tol) {
            c.status = KhotCertificate::Status::Violated;
            c.violated_norm = static_cast<int>(exps[static_cast<std::size_t>(i)]);
            return c;
        }
    c.status = c.max_binary_distance <= binary_tol ? KhotCertificate::Status::Certified
                                                   : KhotCertificate::Status::Counterexample;
    return c;
}

FalsificationReport falsify_khot(Index M, Index K, Index restarts, std::uint64_t seed, KhotExponents e, double tol,
                                 double binary_tol) {
    if (K < 1 || K > M) throw std::invalid_argument("falsify_khot: need 1 <= K <= M");
    FalsificationReport rep;
    rep.restarts = restarts;
    for (Index trial = 0; trial < restarts; ++trial) {
        Rng rng = make_rng(seed, Stream::Falsify, {static_cast<std::uint64_t>(trial)});
        std::uniform_real_distribution<double> init(0.0, 1.5);
        Eigen::VectorXd x(M);
        for (Index i = 0; i < M; ++i) x[i] = init(rng);

        // Projected Levenberg-Marquardt on the three residuals.
        double lambda = 1e-3;
        Eigen::Vector3d r = norm_residuals(x, K, e);
        for (int it = 0; it < 400 && r.cwiseAbs().maxCoeff() >= tol; ++it) {
            Eigen::Matrix<double, 3, Eigen::Dynamic> J(3, M);
            J.row(0) = (e.r * x.array().pow(e.r - 1.0)).matrix().transpose();
            J.row(1) = (e.p * x.array().pow(e.p - 1.0)).matrix().transpose();
            J.row(2) = (e.q * x.array().pow(e.q - 1.0)).matrix().transpose();
            const Eigen::VectorXd grad = J.transpose() * r;
            for (Index i = 0; i < M; ++i)
                if (x[i] <= 0.0 && grad[i] > 0.0) J.col(i).setZero();  // bound-active

            const double f = r.squaredNorm();
            bool accepted = false;
            while (lambda < 1e12) {
                const Eigen::Matrix3d A = J * J.transpose() + lambda * Eigen::Matrix3d::Identity();
                const Eigen::VectorXd step = -J.transpose() * A.ldlt().solve(r);
                const Eigen::VectorXd xn = (x + step).cwiseMax(0.0);
                const Eigen::Vector3d rn = norm_residuals(xn, K, e);
                if (rn.squaredNorm() < f) {
                    x = xn;
                    r = rn;
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 4.0;
            }
            if (!accepted) break;
        }
        if (r.cwiseAbs().maxCoeff() < tol) {
            ++rep.converged;
            const double d = binary_distance(x);
            if (d > binary_tol) ++rep.counterexamples;
            if (d >= rep.worst_binary_distance) {
                rep.worst_binary_distance = d;
                rep.worst_point = x;
            }
        }
    }
    return rep;
}

}  // namespace qmimo
