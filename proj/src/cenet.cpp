// SPDX-License-Identifier: Apache-2.0
#include "qmimo/cenet.hpp"

#include "qmimo/errors.hpp"

#include <cmath>

namespace qmimo {

void SubnetChannels::validate() const {
    if (c1 < 1) throw ContractViolation("subnet channels: C1 must be positive");
    if (c2 != 2 * c1 || c3 != 2 * c2)
        throw ContractViolation("subnet channels: dense wiring needs C2 = 2 C1 and C3 = 2 C2, got " +
                                std::to_string(c1) + "/" + std::to_string(c2) + "/" + std::to_string(c3));
}

ResizeBlock::ResizeBlock(Index Np, Index K, Index c1, Rng& rng)
    : map(nn::normal_tensor({Np, K}, std::sqrt(1.0 / double(Np)), rng)), stage(1, c1, rng) {}

ag::Var ResizeBlock::operator()(const ag::Var& y, bool training) {
    const Index n = y.shape()[0], rows = y.shape()[1];
    const ag::Var mapped = ag::matmul_right(y, map.var());
    return stage(ag::reshape(mapped, {n, 1, rows, map.value().dim(1)}), training);
}

void ResizeBlock::collect(const std::string& prefix, nn::StateRefs& refs) {
    refs.params.emplace_back(prefix + ".map", &map);
    stage.collect(prefix + ".stage", refs);
}

Rk3Block::Rk3Block(Index channels, Rng& rng, bool plain)
    : phi{nn::ConvStage(channels, channels, rng), nn::ConvStage(channels, channels, rng),
          nn::ConvStage(channels, channels, rng)},
      plain_(plain) {
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] = nn::Parameter(Tensor::constant({1}, kClassicalRk3[i]), !plain);
}

ag::Var Rk3Block::operator()(const ag::Var& x, bool training) {
    auto stage = [this, training](std::size_t i) { return [this, i, training](const ag::Var& in) { return phi[i](in, training); }; };
    if (plain_) return phi[2](phi[1](phi[0](x, training), training), training);
    const std::array<ag::Var, 5> b{beta[0].var(), beta[1].var(), beta[2].var(), beta[3].var(), beta[4].var()};
    return rk3_combine(x, b, stage(0), stage(1), stage(2));
}

void Rk3Block::collect(const std::string& prefix, nn::StateRefs& refs) {
    if (!plain_)
        for (std::size_t i = 0; i < beta.size(); ++i) refs.params.emplace_back(prefix + ".beta" + std::to_string(i + 1), &beta[i]);
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i].collect(prefix + ".phi" + std::to_string(i + 1), refs);
}

DenseSubnet::DenseSubnet(Index Np, Index K, SubnetChannels channels, Rng& rng, bool plain_blocks)
    : resize(Np, K, channels.c1, rng),
      blocks{Rk3Block(channels.c1, rng, plain_blocks), Rk3Block(channels.c2, rng, plain_blocks),
             Rk3Block(channels.c3, rng, plain_blocks)},
      channels_(channels) {
    channels.validate();
}

ag::Var DenseSubnet::operator()(const ag::Var& y, bool training) {
    const ag::Var x1 = resize(y, training);
    const ag::Var z1 = blocks[0](x1, training);
    const std::array<ag::Var, 2> in2{x1, z1};
    const ag::Var z2 = blocks[1](ag::concat_channels(in2), training);
    const std::array<ag::Var, 3> in3{x1, z1, z2};
    const ag::Var z3 = blocks[2](ag::concat_channels(in3), training);
    const std::array<ag::Var, 3> out{z1, z2, z3};
    return ag::concat_channels(out);
}

void DenseSubnet::collect(const std::string& prefix, nn::StateRefs& refs) {
    resize.collect(prefix + ".resize", refs);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i + 1), refs);
}

FusionHead::FusionHead(Index in_channels, Rng& rng) {
    const Index c1 = std::max<Index>(1, in_channels / 2), c2 = std::max<Index>(1, in_channels / 4);
    stages = {nn::ConvStage(in_channels, c1, rng), nn::ConvStage(c1, c2, rng)};
    out = nn::Conv2d(c2, 1, rng);
}

ag::Var FusionHead::operator()(const ag::Var& ha, const ag::Var& hb, bool training) {
    const std::array<ag::Var, 2> in{ha, hb};
    ag::Var h = ag::concat_channels(in);
    for (auto& s : stages) h = s(h, training);
    h = out(h);
    return ag::reshape(h, {h.shape()[0], h.shape()[2], h.shape()[3]});
}

void FusionHead::collect(const std::string& prefix, nn::StateRefs& refs) {
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(prefix + ".stage" + std::to_string(i + 1), refs);
    out.collect(prefix + ".out", refs);
}

CENet::CENet(const CenetShape& shape, Rng& rng)
    : stream_a(shape.Np, shape.K, shape.stream_a, rng, shape.plain_blocks),
      stream_b(shape.Np, shape.K, shape.stream_b, rng, shape.plain_blocks),
      fusion(shape.stream_a.total() + shape.stream_b.total(), rng),
      shape_(shape) {}

ag::Var CENet::operator()(const ag::Var& ya, const ag::Var& yb, bool training) {
    const Shape expected{ya.shape()[0], 2 * shape_.M, shape_.Np};
    if (ya.shape() != expected || yb.shape() != expected)
        throw ContractViolation("CENet: inputs must be " + to_string(expected) + ", got " + to_string(ya.shape()) +
                                " and " + to_string(yb.shape()));
    return fusion(stream_a(ya, training), stream_b(yb, training), training);
}

Tensor CENet::infer(const Tensor& ya, const Tensor& yb) {
    return (*this)(ag::Var::constant(ya), ag::Var::constant(yb), false).value();
}

void CENet::collect(const std::string& prefix, nn::StateRefs& refs) {
    stream_a.collect(prefix + ".stream_a", refs);
    stream_b.collect(prefix + ".stream_b", refs);
    fusion.collect(prefix + ".fusion", refs);
}

namespace {

// ||h_k||^2 per (sample, user); throws on a zero column.
Eigen::MatrixXd column_energy(const Tensor& Htarget) {
    const Index n = Htarget.dim(0), k = Htarget.dim(2);
    Eigen::MatrixXd e(n, k);
    for (Index s = 0; s < n; ++s) e.row(s) = Htarget.slice(s).colwise().squaredNorm();
    if ((e.array() <= 0.0).any()) throw DomainError("nmse: target column with zero norm");
    return e;
}

}  // namespace

double nmse(const Tensor& Hhat, const Tensor& Htarget) {
    if (Hhat.shape() != Htarget.shape() || Htarget.rank() != 3)
        throw ContractViolation("nmse: shape mismatch " + to_string(Hhat.shape()) + " vs " + to_string(Htarget.shape()));
    const Eigen::MatrixXd energy = column_energy(Htarget);
    const Index n = Htarget.dim(0), k = Htarget.dim(2);
    double total = 0.0;
    for (Index s = 0; s < n; ++s)
        total += ((Hhat.slice(s) - Htarget.slice(s)).colwise().squaredNorm().array() / energy.row(s).array()).sum();
    return total / double(n * k);
}

namespace ag {

Var cenet_loss(const Var& Hhat, const Tensor& Htarget) {
    const double value = nmse(Hhat.value(), Htarget);
    auto energy = std::make_shared<Eigen::MatrixXd>(column_energy(Htarget));
    return make_op(Tensor({1}, Tensor::Storage::Constant(1, value)), {Hhat}, [Hhat, Htarget, energy](const Tensor& g) {
        const Index n = Htarget.dim(0), k = Htarget.dim(2);
        Tensor d(Hhat.shape());
        const double scale = 2.0 * g[0] / double(n * k);
        for (Index s = 0; s < n; ++s) {
            d.slice(s) = Hhat.value().slice(s) - Htarget.slice(s);
            d.slice(s).array().rowwise() /= energy->row(s).array();
        }
        Hhat.node()->accumulate(scale * d.data());
    });
}

}  // namespace ag

}  // namespace qmimo
