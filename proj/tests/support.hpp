// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qmimo/autograd.hpp"
#include "qmimo/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <functional>

namespace qmimo::testing {

inline double rel_err(const Eigen::Ref<const Eigen::VectorXd>& got, const Eigen::Ref<const Eigen::VectorXd>& want,
                      double floor = 1e-12) {
    return (got - want).norm() / std::max(want.norm(), floor);
}

// Central differences of f with respect to every entry of t.
inline Eigen::VectorXd fd_gradient(Tensor& t, const std::function<double()>& f, double h = 1e-6) {
    Eigen::VectorXd g(t.size());
    for (Index i = 0; i < t.size(); ++i) {
        const double x = t[i];
        t[i] = x + h;
        const double fp = f();
        t[i] = x - h;
        const double fm = f();
        t[i] = x;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// One explicit step of Kutta's third-order method for dx/dt = f(x).
template <typename Vec, typename F>
Vec kutta3_step(const Vec& x, double h, F&& f) {
    const Vec k1 = f(x);
    const Vec k2 = f(Vec(x + 0.5 * h * k1));
    const Vec k3 = f(Vec(x - h * k1 + 2.0 * h * k2));
    return x + (h / 6.0) * (k1 + 4.0 * k2 + k3);
}

}  // namespace qmimo::testing
