// SPDX-License-Identifier: Apache-2.0
#include "qmimo/nn.hpp"

#include <cmath>

namespace qmimo::nn {

void StateRefs::zero_grad() {
    for (auto& [name, p] : params) p->zero_grad();
}

std::vector<Parameter*> StateRefs::trainable() const {
    std::vector<Parameter*> out;
    for (const auto& [name, p] : params)
        if (p->trainable()) out.push_back(p);
    return out;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(normal_tensor({out, in}, std::sqrt(2.0 / double(in)), rng)), bias(Tensor({out})) {}

void Linear::collect(const std::string& prefix, StateRefs& refs) {
    refs.params.emplace_back(prefix + ".weight", &weight);
    refs.params.emplace_back(prefix + ".bias", &bias);
}

Conv2d::Conv2d(Index in_channels, Index out_channels, Rng& rng)
    : weight(normal_tensor({out_channels, in_channels, 3, 3}, std::sqrt(2.0 / double(9 * in_channels)), rng)),
      bias(Tensor({out_channels})) {}

void Conv2d::collect(const std::string& prefix, StateRefs& refs) {
    refs.params.emplace_back(prefix + ".weight", &weight);
    refs.params.emplace_back(prefix + ".bias", &bias);
}

BatchNorm2d::BatchNorm2d(Index channels)
    : gamma(Tensor::constant({channels}, 1.0)),
      beta(Tensor({channels})),
      running_mean(Tensor({channels})),
      running_var(Tensor::constant({channels}, 1.0)) {}

ag::Var BatchNorm2d::operator()(const ag::Var& x, bool training) {
    return ag::batch_norm(x, gamma.var(), beta.var(), {running_mean, running_var, training});
}

void BatchNorm2d::collect(const std::string& prefix, StateRefs& refs) {
    refs.params.emplace_back(prefix + ".gamma", &gamma);
    refs.params.emplace_back(prefix + ".beta", &beta);
    refs.buffers.emplace_back(prefix + ".running_mean", &running_mean);
    refs.buffers.emplace_back(prefix + ".running_var", &running_var);
}

ConvStage::ConvStage(Index in_channels, Index out_channels, Rng& rng, bool activate)
    : norm(in_channels), conv(in_channels, out_channels, rng), activate(activate) {}

ag::Var ConvStage::operator()(const ag::Var& x, bool training) {
    auto y = conv(norm(x, training));
    return activate ? ag::leaky_relu(y, kLeakySlope) : y;
}

void ConvStage::collect(const std::string& prefix, StateRefs& refs) {
    norm.collect(prefix + ".norm", refs);
    conv.collect(prefix + ".conv", refs);
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (auto* p : params_) {
        m_.emplace_back(p->value().shape());
        v_.emplace_back(p->value().shape());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        const Tensor& g = p.grad();
        auto& m = m_[i].data();
        auto& v = v_[i].data();
        m = options_.beta1 * m + (1.0 - options_.beta1) * g.data();
        v = options_.beta2 * v + (1.0 - options_.beta2) * g.data().cwiseAbs2();
        p.value().data().array() -=
            options_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.eps);
    }
}

}  // namespace qmimo::nn
