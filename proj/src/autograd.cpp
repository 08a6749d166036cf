// SPDX-License-Identifier: Apache-2.0
#include "qmimo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace qmimo::ag {

void Node::accumulate(const Tensor::Storage& g) {
    if (grad.size() != value.size() || grad.shape() != value.shape()) {
        grad = Tensor(value.shape(), g);
        return;
    }
    grad.data() += g;
}

Tensor& Node::ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

double Var::item() const {
    if (size() != 1) throw std::logic_error("item() on a non-scalar of shape " + to_string(shape()));
    return value()[0];
}

void Var::backward() const {
    if (size() != 1) throw std::logic_error("backward() requires a scalar output");
    if (!requires_grad()) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad().data().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(n->grad);
    }
    // Free interior gradients; leaves keep theirs.
    for (Node* n : order)
        if (n->backward_fn) n->grad = Tensor();
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(const Tensor&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward);
    }
    return Var(std::move(n));
}

Var detach(const Var& x) { return Var::constant(x.value()); }

namespace {

enum class Broadcast { None, Left, Right };

Broadcast check_binary(const Var& a, const Var& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::None;
    if (a.size() == 1) return Broadcast::Left;
    if (b.size() == 1) return Broadcast::Right;
    throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
}

void push(const Var& v, const Tensor::Storage& g) {
    if (v.requires_grad()) v.node()->accumulate(g);
}

void push_scalar(const Var& v, double g) {
    if (v.requires_grad()) v.node()->ensure_grad()[0] += g;
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
    const auto mode = check_binary(a, b, "add");
    if (mode == Broadcast::None) {
        return make_op(Tensor(a.shape(), a.value().data() + b.value().data()), {a, b}, [a, b](const Tensor& g) {
            push(a, g.data());
            push(b, g.data());
        });
    }
    const Var& s = mode == Broadcast::Left ? a : b;
    const Var& t = mode == Broadcast::Left ? b : a;
    Tensor out(t.shape(), t.value().data().array() + s.value()[0]);
    return make_op(std::move(out), {s, t}, [s, t](const Tensor& g) {
        push_scalar(s, g.data().sum());
        push(t, g.data());
    });
}

Var operator-(const Var& a) { return -1.0 * a; }

Var operator-(const Var& a, const Var& b) { return a + (-b); }

Var operator*(const Var& a, const Var& b) {
    const auto mode = check_binary(a, b, "mul");
    if (mode == Broadcast::None) {
        Tensor out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
        return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
            if (a.requires_grad()) push(a, g.data().cwiseProduct(b.value().data()));
            if (b.requires_grad()) push(b, g.data().cwiseProduct(a.value().data()));
        });
    }
    const Var& s = mode == Broadcast::Left ? a : b;
    const Var& t = mode == Broadcast::Left ? b : a;
    Tensor out(t.shape(), t.value().data() * s.value()[0]);
    return make_op(std::move(out), {s, t}, [s, t](const Tensor& g) {
        if (s.requires_grad()) push_scalar(s, g.data().dot(t.value().data()));
        if (t.requires_grad()) push(t, g.data() * s.value()[0]);
    });
}

Var operator*(double s, const Var& a) {
    return make_op(Tensor(a.shape(), a.value().data() * s), {a}, [a, s](const Tensor& g) { push(a, g.data() * s); });
}

Var operator+(const Var& a, double s) {
    return make_op(Tensor(a.shape(), a.value().data().array() + s), {a},
                   [a](const Tensor& g) { push(a, g.data()); });
}

Var operator-(double s, const Var& a) {
    return make_op(Tensor(a.shape(), s - a.value().data().array()), {a},
                   [a](const Tensor& g) { push(a, -g.data()); });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [x](const Tensor& g) { push(x, g.data()); });
}

Var sum(const Var& x) {
    return make_op(Tensor({1}, Tensor::Storage::Constant(1, x.value().data().sum())), {x}, [x](const Tensor& g) {
        push(x, Tensor::Storage::Constant(x.size(), g[0]));
    });
}

Var square(const Var& x) { return x * x; }

Var power_sum(const Var& x, double p) {
    const auto& xv = x.value().data();
    const double s = xv.array().pow(p).sum();
    return make_op(Tensor({1}, Tensor::Storage::Constant(1, s)), {x}, [x, p](const Tensor& g) {
        push(x, (p * x.value().data().array().pow(p - 1.0) * g[0]).matrix());
    });
}

Var matmul_right(const Var& x, const Var& w) {
    if (w.value().rank() != 2) throw std::invalid_argument("matmul_right: weight must be 2-D");
    const Index k = w.value().dim(0), c = w.value().dim(1);
    if (x.shape().back() != k)
        throw std::invalid_argument("matmul_right: inner dimension mismatch " + to_string(x.shape()) + " x " +
                                    to_string(w.shape()));
    const Index rows = x.size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = c;
    Tensor out(out_shape);
    out.matrix(rows, c).noalias() = x.value().matrix(rows, k) * w.value().matrix(k, c);
    return make_op(std::move(out), {x, w}, [x, w, rows, k, c](const Tensor& g) {
        const auto G = g.matrix(rows, c);
        if (x.requires_grad()) {
            Tensor dx(x.shape());
            dx.matrix(rows, k).noalias() = G * w.value().matrix(k, c).transpose();
            push(x, dx.data());
        }
        if (w.requires_grad()) {
            Tensor dw(w.shape());
            dw.matrix(k, c).noalias() = x.value().matrix(rows, k).transpose() * G;
            push(w, dw.data());
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Index out_dim = weight.value().dim(0), in_dim = weight.value().dim(1);
    if (x.shape().back() != in_dim) throw std::invalid_argument("linear: input width mismatch");
    const Index batch = x.size() / in_dim;
    Tensor out({batch, out_dim});
    out.matrix(batch, out_dim).noalias() = x.value().matrix(batch, in_dim) * weight.value().matrix(out_dim, in_dim).transpose();
    out.matrix(batch, out_dim).rowwise() += bias.value().data().transpose();
    return make_op(std::move(out), {x, weight, bias}, [x, weight, bias, batch, in_dim, out_dim](const Tensor& g) {
        const auto G = g.matrix(batch, out_dim);
        if (x.requires_grad()) {
            Tensor dx(x.shape());
            dx.matrix(batch, in_dim).noalias() = G * weight.value().matrix(out_dim, in_dim);
            push(x, dx.data());
        }
        if (weight.requires_grad()) {
            Tensor dw(weight.shape());
            dw.matrix(out_dim, in_dim).noalias() = G.transpose() * x.value().matrix(batch, in_dim);
            push(weight, dw.data());
        }
        if (bias.requires_grad()) push(bias, G.colwise().sum().transpose());
    });
}

Var leaky_relu(const Var& x, double negative_slope) {
    const auto& xv = x.value().data();
    Tensor out(x.shape(), (xv.array() >= 0.0).select(xv.array(), negative_slope * xv.array()).matrix());
    return make_op(std::move(out), {x}, [x, negative_slope](const Tensor& g) {
        const auto& xv = x.value().data();
        push(x, (xv.array() >= 0.0).select(g.data().array(), negative_slope * g.data().array()).matrix());
    });
}

namespace {

struct ConvGeometry {
    Index n, c, h, w;
    Index hw() const { return h * w; }
};

// Source pixel for each output pixel under kernel tap (kh, kw); -1 on padding.
std::vector<Index> tap_index(const ConvGeometry& g, Index kh, Index kw) {
    std::vector<Index> idx(static_cast<std::size_t>(g.hw()));
    for (Index i = 0; i < g.h; ++i)
        for (Index j = 0; j < g.w; ++j) {
            const Index si = i + kh - 1, sj = j + kw - 1;
            idx[std::size_t(i * g.w + j)] = (si >= 0 && si < g.h && sj >= 0 && sj < g.w) ? si * g.w + sj : -1;
        }
    return idx;
}

// Samples [n0, n0 + count) unrolled into cols [C*9, count*H*W], row c*9 + kh*3 + kw.
void im2col(const Tensor& x, const ConvGeometry& g, Index n0, Index count, RowMatrix<double>& cols) {
    cols.resize(g.c * 9, count * g.hw());
    const double* src = x.ptr();
    for (Index t = 0; t < 9; ++t) {
        const auto idx = tap_index(g, t / 3, t % 3);
        for (Index c = 0; c < g.c; ++c) {
            double* row = cols.data() + (c * 9 + t) * cols.cols();
            for (Index n = 0; n < count; ++n) {
                const double* plane = src + ((n0 + n) * g.c + c) * g.hw();
                double* dst = row + n * g.hw();
                for (Index p = 0; p < g.hw(); ++p) {
                    const Index q = idx[std::size_t(p)];
                    dst[p] = q >= 0 ? plane[q] : 0.0;
                }
            }
        }
    }
}

void col2im(const RowMatrix<double>& cols, const ConvGeometry& g, Index n0, Index count, Tensor& dx) {
    double* dst = dx.ptr();
    for (Index t = 0; t < 9; ++t) {
        const auto idx = tap_index(g, t / 3, t % 3);
        for (Index c = 0; c < g.c; ++c) {
            const double* row = cols.data() + (c * 9 + t) * cols.cols();
            for (Index n = 0; n < count; ++n) {
                double* plane = dst + ((n0 + n) * g.c + c) * g.hw();
                const double* s = row + n * g.hw();
                for (Index p = 0; p < g.hw(); ++p) {
                    const Index q = idx[std::size_t(p)];
                    if (q >= 0) plane[q] += s[p];
                }
            }
        }
    }
}

// Samples per chunk so one unrolled block stays cache-sized.
Index conv_chunk(const ConvGeometry& g) { return std::max<Index>(1, (Index{1} << 16) / (9 * g.c * g.hw())); }

}  // namespace

Var conv2d_3x3(const Var& x, const Var& weight, const Var& bias) {
    if (x.value().rank() != 4) throw std::invalid_argument("conv2d_3x3: input must be [N, C, H, W]");
    const ConvGeometry geo{x.value().dim(0), x.value().dim(1), x.value().dim(2), x.value().dim(3)};
    const Index co = weight.value().dim(0);
    if (weight.shape() != Shape{co, geo.c, 3, 3})
        throw std::invalid_argument("conv2d_3x3: weight shape " + to_string(weight.shape()) + " for input " +
                                    to_string(x.shape()));

    const Index chunk = conv_chunk(geo);
    const auto wm = weight.value().matrix(co, geo.c * 9);
    Tensor out({geo.n, co, geo.h, geo.w});
    RowMatrix<double> cols, r;
    for (Index n0 = 0; n0 < geo.n; n0 += chunk) {
        const Index count = std::min(chunk, geo.n - n0);
        im2col(x.value(), geo, n0, count, cols);
        r.noalias() = wm * cols;
        for (Index n = 0; n < count; ++n)
            for (Index o = 0; o < co; ++o)
                Eigen::Map<Eigen::RowVectorXd>(out.ptr() + ((n0 + n) * co + o) * geo.hw(), geo.hw()) =
                    r.row(o).segment(n * geo.hw(), geo.hw()).array() + bias.value()[o];
    }

    return make_op(std::move(out), {x, weight, bias}, [x, weight, bias, geo, co, chunk](const Tensor& g) {
        const auto wm = weight.value().matrix(co, geo.c * 9);
        RowMatrix<double> dw = RowMatrix<double>::Zero(co, geo.c * 9), cols, dr, dcols;
        Eigen::VectorXd db = Eigen::VectorXd::Zero(co);
        Tensor dx;
        if (x.requires_grad()) dx = Tensor(x.shape());
        for (Index n0 = 0; n0 < geo.n; n0 += chunk) {
            const Index count = std::min(chunk, geo.n - n0);
            dr.resize(co, count * geo.hw());
            for (Index n = 0; n < count; ++n)
                for (Index o = 0; o < co; ++o)
                    dr.row(o).segment(n * geo.hw(), geo.hw()) =
                        Eigen::Map<const Eigen::RowVectorXd>(g.ptr() + ((n0 + n) * co + o) * geo.hw(), geo.hw());
            if (weight.requires_grad()) {
                im2col(x.value(), geo, n0, count, cols);
                dw.noalias() += dr * cols.transpose();
            }
            if (bias.requires_grad()) db += dr.rowwise().sum();
            if (x.requires_grad()) {
                dcols.noalias() = wm.transpose() * dr;
                col2im(dcols, geo, n0, count, dx);
            }
        }
        if (weight.requires_grad()) push(weight, Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size()));
        if (bias.requires_grad()) push(bias, db);
        if (x.requires_grad()) push(x, dx.data());
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state) {
    if (x.value().rank() != 4) throw std::invalid_argument("batch_norm: input must be [N, C, H, W]");
    const Index n = x.value().dim(0), c = x.value().dim(1), hw = x.value().dim(2) * x.value().dim(3);
    const Index count = n * hw;
    Eigen::VectorXd mean(c), inv_std(c);
    const double* xp = x.value().ptr();

    for (Index ch = 0; ch < c; ++ch) {
        double m = 0.0, v = 0.0;
        if (state.training) {
            for (Index s = 0; s < n; ++s) m += Eigen::Map<const Eigen::VectorXd>(xp + (s * c + ch) * hw, hw).sum();
            m /= double(count);
            for (Index s = 0; s < n; ++s)
                v += (Eigen::Map<const Eigen::VectorXd>(xp + (s * c + ch) * hw, hw).array() - m).square().sum();
            v /= double(count);
            const double unbiased = count > 1 ? v * double(count) / double(count - 1) : v;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * m;
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        } else {
            m = state.running_mean[ch];
            v = state.running_var[ch];
        }
        mean[ch] = m;
        inv_std[ch] = 1.0 / std::sqrt(v + state.eps);
    }

    auto xhat = std::make_shared<Tensor>(x.shape());
    Tensor out(x.shape());
    for (Index s = 0; s < n; ++s)
        for (Index ch = 0; ch < c; ++ch) {
            const Index off = (s * c + ch) * hw;
            auto xh = Eigen::Map<Eigen::VectorXd>(xhat->ptr() + off, hw);
            xh = (Eigen::Map<const Eigen::VectorXd>(xp + off, hw).array() - mean[ch]) * inv_std[ch];
            Eigen::Map<Eigen::VectorXd>(out.ptr() + off, hw) = (xh.array() * gamma.value()[ch] + beta.value()[ch]).matrix();
        }

    const bool training = state.training;
    return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n, c, hw, count, training](const Tensor& g) {
        Eigen::VectorXd dgamma = Eigen::VectorXd::Zero(c), dbeta = Eigen::VectorXd::Zero(c);
        for (Index s = 0; s < n; ++s)
            for (Index ch = 0; ch < c; ++ch) {
                const Index off = (s * c + ch) * hw;
                const auto gs = Eigen::Map<const Eigen::VectorXd>(g.ptr() + off, hw);
                dbeta[ch] += gs.sum();
                dgamma[ch] += gs.dot(Eigen::Map<const Eigen::VectorXd>(xhat->ptr() + off, hw));
            }
        if (gamma.requires_grad()) push(gamma, dgamma);
        if (beta.requires_grad()) push(beta, dbeta);
        if (!x.requires_grad()) return;
        Tensor dx(x.shape());
        for (Index s = 0; s < n; ++s)
            for (Index ch = 0; ch < c; ++ch) {
                const Index off = (s * c + ch) * hw;
                const auto gs = Eigen::Map<const Eigen::VectorXd>(g.ptr() + off, hw);
                const double scale = gamma.value()[ch] * inv_std[ch];
                auto d = Eigen::Map<Eigen::VectorXd>(dx.ptr() + off, hw);
                if (training) {
                    const auto xh = Eigen::Map<const Eigen::VectorXd>(xhat->ptr() + off, hw);
                    d = scale * (gs.array() - dbeta[ch] / double(count) - xh.array() * dgamma[ch] / double(count)).matrix();
                } else {
                    d = scale * gs;
                }
            }
        push(x, dx.data());
    });
}

Var concat_channels(std::span<const Var> xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const Shape& s0 = xs[0].shape();
    if (s0.size() != 4) throw std::invalid_argument("concat_channels: inputs must be [N, C, H, W]");
    const Index n = s0[0], hw = s0[2] * s0[3];
    Index total = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[0] != n || s[2] != s0[2] || s[3] != s0[3])
            throw std::invalid_argument("concat_channels: incompatible shape " + to_string(s));
        total += s[1];
    }
    Tensor out({n, total, s0[2], s0[3]});
    std::vector<Var> parents(xs.begin(), xs.end());
    Index offset = 0;
    for (const auto& x : xs) {
        const Index ci = x.shape()[1];
        for (Index s = 0; s < n; ++s)
            std::copy_n(x.value().ptr() + s * ci * hw, ci * hw, out.ptr() + (s * total + offset) * hw);
        offset += ci;
    }
    return make_op(std::move(out), parents, [parents, n, hw, total](const Tensor& g) {
        Index offset = 0;
        for (const auto& x : parents) {
            const Index ci = x.shape()[1];
            if (x.requires_grad()) {
                Tensor dx(x.shape());
                for (Index s = 0; s < n; ++s)
                    std::copy_n(g.ptr() + (s * total + offset) * hw, ci * hw, dx.ptr() + s * ci * hw);
                push(x, dx.data());
            }
            offset += ci;
        }
    });
}

Var softmax(const Var& v) {
    const auto& vv = v.value().data();
    Eigen::VectorXd e = (vv.array() - vv.maxCoeff()).exp();
    e /= e.sum();
    Tensor out(v.shape(), e);
    return make_op(out, {v}, [v, u = std::move(e)](const Tensor& g) {
        const double dot = g.data().dot(u);
        push(v, (u.array() * (g.data().array() - dot)).matrix());
    });
}

}  // namespace qmimo::ag
