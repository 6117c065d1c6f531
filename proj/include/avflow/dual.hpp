#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "avflow/tensor.hpp"

namespace avflow {

// Forward-mode carrier: primal value plus directional tangent of the same
// shape. One pass through a function built from the kernel primitives
// yields (f(x), J_f(x)·v).
struct DualTensor {
    Tensor primal;
    Tensor tangent;

    DualTensor(Tensor p, Tensor t) : primal(std::move(p)), tangent(std::move(t)) {
        detail::require_same_shape(primal, tangent, "dual");
    }

    // Lift a value with a zero tangent (constants, frozen parameters).
    static DualTensor constant(const Tensor& p) { return DualTensor(p, Tensor::zeros(p.shape())); }

    static DualTensor seeded(Tensor p, Tensor t) { return DualTensor(std::move(p), std::move(t)); }
};

namespace detail {

// Tangent-times-local-derivative with an exact-zero guard so a zero
// tangent survives points where the derivative overflows (e.g. sqrt at 0).
inline double tprop(double t, double deriv) { return t == 0.0 ? 0.0 : t * deriv; }

}  // namespace detail

inline DualTensor add(const DualTensor& a, const DualTensor& b) {
    return DualTensor(add(a.primal, b.primal), add(a.tangent, b.tangent));
}

inline DualTensor sub(const DualTensor& a, const DualTensor& b) {
    return DualTensor(sub(a.primal, b.primal), sub(a.tangent, b.tangent));
}

inline DualTensor mul(const DualTensor& a, const DualTensor& b) {
    detail::require_same_shape(a.primal, b.primal, "mul");
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = a.primal[i] * b.primal[i];
        t[i] = detail::tprop(a.tangent[i], b.primal[i]) + detail::tprop(b.tangent[i], a.primal[i]);
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor smul(double s, const DualTensor& a) {
    return DualTensor(smul(s, a.primal), smul(s, a.tangent));
}

inline DualTensor matvec(const DualTensor& w, const DualTensor& x) {
    // d(Wx) = dW·x + W·dx
    Tensor p = matvec(w.primal, x.primal);
    Tensor t = add(matvec(w.tangent, x.primal), matvec(w.primal, x.tangent));
    return DualTensor(std::move(p), std::move(t));
}

inline DualTensor matmul(const DualTensor& a, const DualTensor& b) {
    Tensor p = matmul(a.primal, b.primal);
    Tensor t = add(matmul(a.tangent, b.primal), matmul(a.primal, b.tangent));
    return DualTensor(std::move(p), std::move(t));
}

inline DualTensor reduce_sum(const DualTensor& a) {
    return DualTensor(reduce_sum(a.primal), reduce_sum(a.tangent));
}

inline DualTensor reduce_mean(const DualTensor& a) {
    return DualTensor(reduce_mean(a.primal), reduce_mean(a.tangent));
}

inline DualTensor broadcast(const DualTensor& a, std::size_t n) {
    return DualTensor(broadcast(a.primal, n), broadcast(a.tangent, n));
}

inline DualTensor concat(const std::vector<DualTensor>& parts) {
    std::vector<Tensor> ps, ts;
    ps.reserve(parts.size());
    ts.reserve(parts.size());
    for (const auto& d : parts) {
        ps.push_back(d.primal);
        ts.push_back(d.tangent);
    }
    return DualTensor(concat(ps), concat(ts));
}

inline DualTensor slice(const DualTensor& a, std::size_t offset, std::size_t len) {
    return DualTensor(slice(a.primal, offset, len), slice(a.tangent, offset, len));
}

inline DualTensor silu(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = detail::silu_val(a.primal[i]);
        t[i] = detail::tprop(a.tangent[i], detail::silu_deriv(a.primal[i]));
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor sin(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::sin(a.primal[i]);
        t[i] = detail::tprop(a.tangent[i], std::cos(a.primal[i]));
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor cos(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::cos(a.primal[i]);
        t[i] = detail::tprop(a.tangent[i], -std::sin(a.primal[i]));
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor square(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = a.primal[i] * a.primal[i];
        t[i] = detail::tprop(a.tangent[i], 2.0 * a.primal[i]);
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor sqrt(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = std::sqrt(a.primal[i]);
        p[i] = r;
        t[i] = detail::tprop(a.tangent[i], 0.5 / r);
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor pow(const DualTensor& a, double e) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::pow(a.primal[i], e);
        t[i] = detail::tprop(a.tangent[i], detail::pow_deriv(a.primal[i], e));
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

inline DualTensor reciprocal(const DualTensor& a) {
    std::vector<double> p(a.primal.numel()), t(a.primal.numel());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = 1.0 / a.primal[i];
        p[i] = r;
        t[i] = detail::tprop(a.tangent[i], -r * r);
    }
    return DualTensor(Tensor(a.primal.shape(), std::move(p)), Tensor(a.primal.shape(), std::move(t)));
}

// Dual tangents do not pass through a stop-gradient.
inline DualTensor stop_gradient(const DualTensor& a) { return DualTensor::constant(a.primal); }

// Directional derivative of f along `tangents` in a single dual-number
// forward pass. f maps a list of DualTensor inputs to one DualTensor and
// must be built from kernel primitives only.
template <class F>
std::pair<Tensor, Tensor> jvp(F&& f, const std::vector<Tensor>& inputs, const std::vector<Tensor>& tangents) {
    if (inputs.size() != tangents.size())
        throw ContractViolation("jvp: inputs and tangents must align one-to-one");
    std::vector<DualTensor> duals;
    duals.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].same_shape(tangents[i]))
            throw ContractViolation("jvp: tangent " + std::to_string(i) + " shape mismatch");
        duals.emplace_back(inputs[i], tangents[i]);
    }
    DualTensor out = f(duals);
    if (!out.primal.all_finite() || !out.tangent.all_finite())
        throw NumericError("jvp: non-finite value in dual forward pass");
    return {out.primal, out.tangent};
}

}  // namespace avflow
