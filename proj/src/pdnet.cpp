// SPDX-License-Identifier: Apache-2.0
#include "qmimo/pdnet.hpp"

#include "qmimo/channel.hpp"

#include <cmath>
#include <numbers>

namespace qmimo {

PilotWeights PilotWeights::init(Index K, Index Np, double rho, Rng& rng) {
    if (K < 1 || Np < 1) throw std::invalid_argument("pilot: K and Np must be positive");
    if (!(rho > 0.0)) throw std::invalid_argument("pilot: transmit power must be positive");
    PilotWeights w;
    w.raw = nn::Parameter(nn::normal_tensor({2 * K, Np}, std::sqrt(1.0 / double(2 * K)), rng));
    w.Np = Np;
    w.rho = rho;
    return w;
}

Eigen::MatrixXd PilotWeights::normalized() const {
    const Tensor& r = raw.value();
    return power_normalize(r.matrix(r.dim(0), r.dim(1)), rho);
}

ag::Var PilotWeights::normalized_var() const { return ag::normalized_pilot(raw.var(), rho); }

namespace ag {

Var normalized_pilot(const Var& raw, double rho) {
    if (raw.value().rank() != 2) throw std::invalid_argument("normalized_pilot: weight must be [2K, Np]");
    const Index np = raw.value().dim(1);
    const double norm = raw.value().data().norm();
    if (!(norm > 0.0)) throw DegeneratePilot("pilot weights have zero Frobenius norm");
    const double scale = std::sqrt(double(np) * rho);
    Tensor out(raw.shape(), raw.value().data() * (scale / norm));
    return make_op(std::move(out), {raw}, [raw, norm, scale](const Tensor& g) {
        // d/dr [s r / |r|] = (s / |r|) (I - r_hat r_hat^T)
        const Eigen::VectorXd unit = raw.value().data() / norm;
        raw.node()->accumulate((scale / norm) * (g.data() - unit * unit.dot(g.data())));
    });
}

}  // namespace ag

ZcPilots zc_pilots(Index Np, Index K, double rho) {
    if (K < 1) throw std::invalid_argument("zc_pilots: K must be positive");
    if (Np < K) throw InfeasibleShift("zc_pilots: pilot length " + std::to_string(Np) + " < user count " + std::to_string(K));
    Eigen::VectorXcd z(Np);
    for (Index n = 0; n < Np; ++n) {
        const double nn = double(n);
        const double phase = Np % 2 == 0 ? -std::numbers::pi * nn * nn / double(Np)
                                         : -std::numbers::pi * nn * (nn + 1.0) / double(Np);
        z[n] = std::polar(1.0, phase);
    }
    const Index shift = Np / K;
    const double amplitude = std::sqrt(rho / double(K));
    ZcPilots out;
    out.P.resize(K, Np);
    for (Index k = 0; k < K; ++k)
        for (Index n = 0; n < Np; ++n) out.P(k, n) = amplitude * z[(n + k * shift) % Np];
    out.Ptilde = stack_columns(out.P);
    return out;
}

}  // namespace qmimo
