#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "avflow/tensor.hpp"

namespace testutil {

inline double rel_err(double got, double want) {
    const double denom = std::max(std::abs(want), 1e-12);
    return std::abs(got - want) / denom;
}

inline double max_rel_err(const avflow::Tensor& got, const avflow::Tensor& want) {
    double m = 0.0;
    for (std::size_t i = 0; i < got.numel(); ++i) m = std::max(m, rel_err(got[i], want[i]));
    return m;
}

// Relative error with the denominator floored at 1% of the tensor's
// largest entry, so finite-difference noise on near-zero entries does not
// dominate the comparison.
inline double max_rel_err_scaled(const avflow::Tensor& got, const avflow::Tensor& want) {
    double linf = 0.0;
    for (std::size_t i = 0; i < want.numel(); ++i) linf = std::max(linf, std::abs(want[i]));
    const double floor = std::max(0.01 * linf, 1e-12);
    double m = 0.0;
    for (std::size_t i = 0; i < got.numel(); ++i)
        m = std::max(m, std::abs(got[i] - want[i]) / std::max(std::abs(want[i]), floor));
    return m;
}

// Central finite differences of a scalar function w.r.t. one tensor input.
inline avflow::Tensor fd_gradient(const std::function<double(const avflow::Tensor&)>& f, const avflow::Tensor& x,
                                  double h = 1e-6) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        std::vector<double> plus(x.storage()), minus(x.storage());
        plus[i] += h;
        minus[i] -= h;
        g[i] = (f(avflow::Tensor(x.shape(), plus)) - f(avflow::Tensor(x.shape(), minus))) / (2.0 * h);
    }
    return avflow::Tensor(x.shape(), std::move(g));
}

// Central finite differences of a vector function along a direction.
inline avflow::Tensor fd_directional(const std::function<avflow::Tensor(const avflow::Tensor&)>& f,
                                     const avflow::Tensor& x, const avflow::Tensor& v, double h = 1e-5) {
    std::vector<double> plus(x.storage()), minus(x.storage());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        plus[i] += h * v[i];
        minus[i] -= h * v[i];
    }
    const avflow::Tensor fp = f(avflow::Tensor(x.shape(), plus));
    const avflow::Tensor fm = f(avflow::Tensor(x.shape(), minus));
    std::vector<double> out(fp.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (fp[i] - fm[i]) / (2.0 * h);
    return avflow::Tensor(fp.shape(), std::move(out));
}

}  // namespace testutil
