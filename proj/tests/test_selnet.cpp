// SPDX-License-Identifier: Apache-2.0
#include "qmimo/selnet.hpp"

#include <catch_amalgamated.hpp>

using namespace qmimo;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<Index>(v.size()));
    Index i = 0;
    for (double e : v) x[i++] = e;
    return x;
}

Tensor as_tensor(const Eigen::VectorXd& v) { return Tensor({v.size()}, v); }

Eigen::VectorXd softmax_ref(const Eigen::VectorXd& v) {
    const Eigen::ArrayXd e = (v.array() - v.maxCoeff()).exp();
    return (e / e.sum()).matrix();
}

}  // namespace

TEST_CASE("top-k ties go to the lower index", "[selnet]") {
    CHECK(topk_mask(vec({0.1, 0.5, 0.2, 0.2}), 2) == vec({0, 1, 1, 0}));
    CHECK(topk_mask(vec({0.3, 0.3, 0.3}), 1) == vec({1, 0, 0}));
    CHECK(topk_mask(vec({0.1, 0.2}), 0) == vec({0, 0}));
    CHECK_THROWS(topk_mask(vec({0.1, 0.2}), 3));
}

TEST_CASE("full allocation selects every chain", "[selnet]") {
    Rng rng = make_rng(1, Stream::ParamInit);
    SelNet net(6, 6, rng);
    const auto s = net.state();
    CHECK(s.a == Eigen::VectorXd::Ones(6));
    CHECK(s.b == Eigen::VectorXd::Zero(6));
    CHECK(s.B.empty());
}

TEST_CASE("allocation count out of range", "[selnet]") {
    Rng rng = make_rng(1, Stream::ParamInit);
    CHECK_THROWS(SelNet(6, 0, rng));
    CHECK_THROWS(SelNet(6, 7, rng));
}

TEST_CASE("forward state is consistent", "[selnet]") {
    Rng rng = make_rng(2, Stream::ParamInit);
    SelNet net(16, 4, rng);
    const auto out = net.forward();
    const auto& s = out.state;
    CHECK_THAT(s.u.sum(), WithinAbs(1.0, 1e-14));
    CHECK_THAT(s.u_tilde.sum(), WithinAbs(4.0, 1e-13));
    CHECK((s.u_tilde - 4.0 * s.u).norm() < 1e-14);
    CHECK((s.u - softmax_ref(s.v)).norm() < 1e-14);
    CHECK(s.a == topk_mask(s.u_tilde, 4));
    CHECK((s.a + s.b).isOnes());
    CHECK(s.A.size() == 4);
    CHECK(s.B.size() == 12);
    CHECK(out.a.value().data() == s.a);
    // same parameters, same mask
    CHECK(net.state().a == s.a);
}

TEST_CASE("mask is invariant to a common logit shift", "[selnet]") {
    Rng rng = make_rng(3, Stream::ParamInit);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd v(10);
        for (Index i = 0; i < 10; ++i) v[i] = n(rng);
        const auto a0 = topk_mask(ag::softmax(ag::Var::constant(as_tensor(v))).value().data(), 3);
        const Eigen::VectorXd shifted = v.array() + 7.25;
        const auto a1 = topk_mask(ag::softmax(ag::Var::constant(as_tensor(shifted))).value().data(), 3);
        CHECK(a0 == a1);
    }
}

TEST_CASE("straight-through gradient equals the surrogate gradient", "[selnet]") {
    Rng rng = make_rng(4, Stream::ParamInit);
    std::normal_distribution<double> n;
    const Index M = 8, MA = 3;
    Eigen::VectorXd v(M), c(M);
    for (Index i = 0; i < M; ++i) {
        v[i] = n(rng);
        c[i] = n(rng);
    }
    auto vv = ag::Var::leaf(as_tensor(v));
    const auto ut = double(MA) * ag::softmax(vv);
    const auto a = ag::topk_straight_through(ut, MA);
    CHECK(a.value().data() == topk_mask(ut.value().data(), MA));
    ag::sum(a * ag::Var::constant(as_tensor(c))).backward();

    auto surrogate = [&](const Eigen::VectorXd& x) { return double(MA) * softmax_ref(x).dot(c); };
    const double h = 1e-6;
    for (Index i = 0; i < M; ++i) {
        Eigen::VectorXd xp = v, xm = v;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (surrogate(xp) - surrogate(xm)) / (2 * h);
        CHECK(std::abs(vv.grad()[i] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
}

TEST_CASE("residuals of k-hot and uniform vectors", "[selnet]") {
    const auto [r2, r3] = khot_residuals(vec({0, 1, 1, 0}), 2);
    CHECK(r2 == 0.0);
    CHECK(r3 == 0.0);
    const auto [u2, u3] = khot_residuals(vec({0.5, 0.5, 0.5, 0.5}), 2);
    CHECK(u2 == -1.0);
    CHECK(u3 == -1.5);
}

TEST_CASE("selection loss values", "[selnet]") {
    CHECK(selnet_loss(vec({1, 0, 0, 1}), 2, 1.0, 1.0) == 0.0);
    CHECK_THAT(selnet_loss(vec({0.5, 0.5, 0.5, 0.5}), 2, 1.0, 1.0), WithinAbs(3.25, 1e-15));
    CHECK_THROWS(selnet_loss(vec({0.5, 0.5}), 1, -1.0, 1.0));
    const auto l = ag::selnet_loss(ag::Var::constant(as_tensor(vec({0.5, 0.5, 0.5, 0.5}))), 2, 1.0, 1.0);
    CHECK_THAT(l.item(), WithinAbs(3.25, 1e-15));
}

TEST_CASE("non-binary vectors with the right sum have a nonzero residual", "[selnet]") {
    Rng rng = make_rng(5, Stream::ParamInit);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd x(6);
        for (Index i = 0; i < 6; ++i) x[i] = u(rng);
        x *= 3.0 / x.sum();
        const auto [r2, r3] = khot_residuals(x, 3);
        CHECK(std::max(std::abs(r2), std::abs(r3)) > 1e-6);
    }
}

TEST_CASE("selection loss gradient matches finite differences", "[selnet]") {
    const Eigen::VectorXd x = vec({0.9, 0.3, 0.7, 0.05, 0.4});
    auto xv = ag::Var::leaf(as_tensor(x));
    ag::selnet_loss(xv, 2, 1.0, 0.5).backward();
    const double h = 1e-6;
    for (Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (selnet_loss(xp, 2, 1.0, 0.5) - selnet_loss(xm, 2, 1.0, 0.5)) / (2 * h);
        CHECK(std::abs(xv.grad()[i] - fd) <= 1e-6 * std::max(std::abs(fd), 1.0));
    }
}

TEST_CASE("certificate accepts k-hot and rejects the rest", "[selnet]") {
    CHECK(khot_certificate(vec({1, 1, 0, 0}), 2).status == KhotCertificate::Status::Certified);
    const auto c = khot_certificate(vec({1.5, 0.5, 0, 0}), 2);
    CHECK(c.status == KhotCertificate::Status::Violated);
    CHECK(c.violated_norm == 2);
    CHECK_THAT(c.residuals[1], WithinAbs(0.5, 1e-15));
    CHECK_THROWS_AS(khot_certificate(vec({1, -0.1, 0.1}), 1), DomainError);
}

TEST_CASE("every exact k-hot vector certifies", "[selnet]") {
    for (Index M = 1; M <= 8; ++M)
        for (unsigned bits = 0; bits < (1u << M); ++bits) {
            Eigen::VectorXd x(M);
            for (Index i = 0; i < M; ++i) x[i] = (bits >> i) & 1u ? 1.0 : 0.0;
            const Index K = static_cast<Index>(x.sum());
            if (K == 0) continue;
            CHECK(khot_certificate(x, K).status == KhotCertificate::Status::Certified);
        }
}

TEST_CASE("falsification search finds no counterexample", "[selnet]") {
    for (Index K : {1, 2, 3}) {
        const auto rep = falsify_khot(6, K, 200, 17);
        CHECK(rep.restarts == 200);
        CHECK(rep.converged > 0);
        CHECK(rep.counterexamples == 0);
    }
}

TEST_CASE("matching two norms is not enough", "[selnet]") {
    const Eigen::VectorXd x = vec({4.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    REQUIRE_THAT(x.sum(), WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(x.squaredNorm(), WithinAbs(2.0, 1e-12));
    const auto c = khot_certificate(x, 2);
    CHECK(c.status == KhotCertificate::Status::Violated);
    CHECK(c.violated_norm == 3);
}
