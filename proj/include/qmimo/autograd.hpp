// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

// Minimal reverse-mode differentiation over Tensor values. Each op records a
// closure that pushes the output gradient into its parents; backward() walks
// the graph in reverse topological order.
namespace qmimo::ag {

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor&)> backward_fn;
    bool requires_grad = false;

    void accumulate(const Tensor::Storage& g);
    Tensor& ensure_grad();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var leaf(Tensor value, bool requires_grad = true);

    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    Index size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    // Seeds d(this)/d(this) = 1; this must be a scalar.
    void backward() const;

private:
    std::shared_ptr<Node> node_;
};

// Builds an op node. `backward` receives the output gradient and must call
// Node::accumulate on the parents that require grad.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(const Tensor&)> backward);

Var detach(const Var& x);

// Elementwise arithmetic. A size-1 operand broadcasts against the other.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator*(double s, const Var& a);
inline Var operator*(const Var& a, double s) { return s * a; }
Var operator+(const Var& a, double s);
Var operator-(double s, const Var& a);
Var operator-(const Var& a);

Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);
Var square(const Var& x);
// sum_i x_i^p for x >= 0 (p may be fractional)
Var power_sum(const Var& x, double p);

// X [..., k] (flattened to rows) times W [k, c]
Var matmul_right(const Var& x, const Var& w);
// x [B, in], weight [out, in], bias [out] -> [B, out]
Var linear(const Var& x, const Var& weight, const Var& bias);

Var leaky_relu(const Var& x, double negative_slope);

// 3x3, stride 1, zero "same" padding. x [N, C, H, W], weight [Co, C, 3, 3], bias [Co].
Var conv2d_3x3(const Var& x, const Var& weight, const Var& bias);

struct BatchNormState {
    Tensor& running_mean;
    Tensor& running_var;
    bool training;
    double momentum = 0.1;
    double eps = 1e-5;
};
// Per-channel normalization over (N, H, W) for x [N, C, H, W].
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state);

// Concatenate [N, Ci, H, W] tensors along the channel axis.
Var concat_channels(std::span<const Var> xs);

Var softmax(const Var& v);

}  // namespace qmimo::ag
