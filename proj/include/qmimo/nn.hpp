// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/autograd.hpp"
#include "qmimo/random.hpp"

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace qmimo::nn {

using Rng = qmimo::Rng;

// Trainable leaf. The node persists across forward passes so gradients
// accumulate until zero_grad().
class Parameter {
public:
    Parameter() = default;
    explicit Parameter(Tensor init, bool trainable = true)
        : var_(ag::Var::leaf(std::move(init), trainable)) {}

    const ag::Var& var() const { return var_; }
    Tensor& value() { return var_.node()->value; }
    const Tensor& value() const { return var_.node()->value; }
    Tensor& grad() { return var_.node()->ensure_grad(); }
    bool trainable() const { return var_.requires_grad(); }
    void set_trainable(bool on) { var_.node()->requires_grad = on; }
    void zero_grad() { var_.node()->grad = Tensor(); }

private:
    ag::Var var_;
};

// Named handles into a module tree, used by the optimizer and serializers.
struct StateRefs {
    std::vector<std::pair<std::string, Parameter*>> params;
    std::vector<std::pair<std::string, Tensor*>> buffers;

    void zero_grad();
    std::vector<Parameter*> trainable() const;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(Index in, Index out, Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight.var(), bias.var()); }
    void collect(const std::string& prefix, StateRefs& refs);

    Parameter weight, bias;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Index in_channels, Index out_channels, Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d_3x3(x, weight.var(), bias.var()); }
    void collect(const std::string& prefix, StateRefs& refs);
    Index out_channels() const { return weight.value().dim(0); }

    Parameter weight, bias;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(Index channels);
    ag::Var operator()(const ag::Var& x, bool training);
    void collect(const std::string& prefix, StateRefs& refs);

    Parameter gamma, beta;
    Tensor running_mean, running_var;
};

inline constexpr double kLeakySlope = 0.01;

// normalization -> 3x3 convolution -> optional leaky rectifier
class ConvStage {
public:
    ConvStage() = default;
    ConvStage(Index in_channels, Index out_channels, Rng& rng, bool activate = true);
    ag::Var operator()(const ag::Var& x, bool training);
    void collect(const std::string& prefix, StateRefs& refs);

    BatchNorm2d norm;
    Conv2d conv;
    bool activate = true;
};

struct AdamOptions {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(std::vector<Parameter*> params, AdamOptions options);

    void step();
    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    long long steps() const { return t_; }

    // Moment buffers exposed for checkpointing, keyed by parameter order.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_steps(long long t) { t_ = t; }

private:
    std::vector<Parameter*> params_;
    AdamOptions options_;
    std::vector<Tensor> m_, v_;
    long long t_ = 0;
};

}  // namespace qmimo::nn
