#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "avflow/tensor.hpp"

namespace avflow {

class GradTape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    GradTape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

// Reverse-mode record of kernel operations. One tape per loss evaluation;
// replaying it backward visits each recorded operation exactly once and
// accumulates gradients for every leaf reachable from the loss.
class GradTape {
  public:
    using GradSpan = std::span<const double>;
    using BackFn = std::function<void(GradTape&, GradSpan)>;

    Var leaf(Tensor v) { return push(std::move(v), nullptr); }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

    // Accumulation buffer for node `id`, zero-initialized on first touch.
    double* grad_buffer(std::size_t id) {
        auto& g = grads_[id];
        if (g.empty() && nodes_[id].value.numel() > 0) g.assign(nodes_[id].value.numel(), 0.0);
        return g.data();
    }

    bool touched(std::size_t id) const { return !grads_[id].empty(); }

    // Gradient of the last backward() w.r.t. node `id`; zeros if the loss
    // never reached it.
    Tensor grad(const Var& v) const {
        const auto& g = grads_[v.id];
        if (g.empty()) return Tensor::zeros(nodes_[v.id].value.shape());
        return Tensor(nodes_[v.id].value.shape(), g);
    }

    // Seed d(loss)/d(loss) = 1 and replay the record in reverse.
    void backward(const Var& loss) {
        if (loss.tape != this) throw ContractViolation("backward: loss from a different tape");
        const Tensor& lv = nodes_[loss.id].value;
        if (lv.numel() != 1) throw ContractViolation("backward: loss must be scalar");
        if (!std::isfinite(lv[0])) throw NumericError("backward: non-finite loss");
        grads_.assign(nodes_.size(), {});
        backward_visits_ = 0;
        grad_buffer(loss.id)[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (!touched(i) || !nodes_[i].back) continue;
            ++backward_visits_;
            nodes_[i].back(*this, GradSpan(grads_[i]));
        }
    }

    // Number of recorded (non-leaf) operations replayed by the last backward.
    std::size_t backward_visits() const { return backward_visits_; }

    Var push(Tensor value, BackFn back) {
        nodes_.push_back(Node{std::move(value), std::move(back)});
        grads_.emplace_back();
        return Var{this, nodes_.size() - 1};
    }

  private:
    struct Node {
        Tensor value;
        BackFn back;  // null for leaves
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::size_t backward_visits_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline GradTape* same_tape(const Var& a, const Var& b) {
    if (a.tape != b.tape) throw ContractViolation("tape op: operands from different tapes");
    return a.tape;
}

}  // namespace detail

// ---- tape kernels ---------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    GradTape* t = detail::same_tape(a, b);
    Tensor v = add(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return t->push(std::move(v), [ia, ib](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        double* gb = tp.grad_buffer(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    GradTape* t = detail::same_tape(a, b);
    Tensor v = sub(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return t->push(std::move(v), [ia, ib](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        double* gb = tp.grad_buffer(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    GradTape* t = detail::same_tape(a, b);
    Tensor v = mul(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return t->push(std::move(v), [ia, ib](GradTape& tp, GradTape::GradSpan g) {
        const Tensor& av = tp.value(ia);
        const Tensor& bv = tp.value(ib);
        double* ga = tp.grad_buffer(ia);
        double* gb = tp.grad_buffer(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

inline Var smul(double s, const Var& a) {
    Tensor v = smul(s, a.value());
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), [ia, s](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

inline Var matvec(const Var& w, const Var& x) {
    GradTape* t = detail::same_tape(w, x);
    Tensor v = matvec(w.value(), x.value());
    const std::size_t iw = w.id, ix = x.id;
    return t->push(std::move(v), [iw, ix](GradTape& tp, GradTape::GradSpan g) {
        const Tensor& wv = tp.value(iw);
        const Tensor& xv = tp.value(ix);
        const std::size_t m = wv.dim(0), n = wv.dim(1);
        double* gw = tp.grad_buffer(iw);
        double* gx = tp.grad_buffer(ix);
        const double* wp = wv.data();
        const double* xp = xv.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* gwrow = gw + i * n;
            const double* wrow = wp + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                gwrow[j] += gi * xp[j];
                gx[j] += gi * wrow[j];
            }
        }
    });
}

inline Var matmul(const Var& a, const Var& b) {
    GradTape* t = detail::same_tape(a, b);
    Tensor v = matmul(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return t->push(std::move(v), [ia, ib](GradTape& tp, GradTape::GradSpan g) {
        const Tensor& av = tp.value(ia);
        const Tensor& bv = tp.value(ib);
        const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        double* ga = tp.grad_buffer(ia);
        double* gb = tp.grad_buffer(ib);
        // dA = G·Bᵀ, dB = Aᵀ·G
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[l * n + j];
                ga[i * k + l] += acc;
            }
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += av[i * k + l] * g[i * n + j];
                gb[l * n + j] += acc;
            }
    });
}

inline Var reduce_sum(const Var& a) {
    Tensor v = reduce_sum(a.value());
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), [ia](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        const std::size_t n = tp.value(ia).numel();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    });
}

inline Var reduce_mean(const Var& a) {
    Tensor v = reduce_mean(a.value());
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), [ia](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        const std::size_t n = tp.value(ia).numel();
        const double s = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) ga[i] += s;
    });
}

inline Var broadcast(const Var& a, std::size_t n) {
    Tensor v = broadcast(a.value(), n);
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), [ia](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
        ga[0] += acc;
    });
}

inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractViolation("concat: no parts");
    GradTape* t = parts[0].tape;
    std::vector<Tensor> vals;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        detail::same_tape(parts[0], p);
        vals.push_back(p.value());
        ids.push_back(p.id);
    }
    Tensor v = concat(vals);
    return t->push(std::move(v), [ids](GradTape& tp, GradTape::GradSpan g) {
        std::size_t off = 0;
        for (std::size_t pid : ids) {
            const std::size_t n = tp.value(pid).numel();
            double* gp = tp.grad_buffer(pid);
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
            off += n;
        }
    });
}

inline Var slice(const Var& a, std::size_t offset, std::size_t len) {
    Tensor v = slice(a.value(), offset, len);
    const std::size_t ia = a.id;
    return a.tape->push(std::move(v), [ia, offset](GradTape& tp, GradTape::GradSpan g) {
        double* ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
    });
}

namespace detail {

// Elementwise op with pointwise derivative; shared by the unary kernels.
template <class FV, class FD>
Var unary_pointwise(const Var& a, FV&& fval, FD&& fderiv) {
    const Tensor& av = a.value();
    std::vector<double> out(av.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fval(av[i]);
    const std::size_t ia = a.id;
    auto deriv = std::forward<FD>(fderiv);
    return a.tape->push(Tensor(av.shape(), std::move(out)), [ia, deriv](GradTape& tp, GradTape::GradSpan g) {
        const Tensor& x = tp.value(ia);
        double* ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (g[i] != 0.0) ga[i] += g[i] * deriv(x[i]);
    });
}

}  // namespace detail

inline Var silu(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return detail::silu_val(x); }, [](double x) { return detail::silu_deriv(x); });
}

inline Var sin(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

inline Var cos(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

inline Var square(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return std::sqrt(x); }, [](double x) { return x == 0.0 ? 0.0 : 0.5 / std::sqrt(x); });
}

inline Var pow(const Var& a, double e) {
    return detail::unary_pointwise(
        a, [e](double x) { return std::pow(x, e); }, [e](double x) { return detail::pow_deriv(x, e); });
}

inline Var reciprocal(const Var& a) {
    return detail::unary_pointwise(
        a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

// Same value, no gradient path: a fresh leaf.
inline Var stop_gradient(const Var& a) { return a.tape->leaf(a.value()); }

// Gradient of a scalar loss w.r.t. an ordered parameter list. The callable
// receives the tape and the parameter Vars and returns the loss Var.
template <class F>
std::vector<Tensor> grad(F&& loss_fn, const std::vector<Tensor>& params) {
    GradTape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    Var loss = loss_fn(tape, vars);
    if (loss.value().numel() != 1) throw ContractViolation("grad: loss must be scalar");
    tape.backward(loss);
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(tape.grad(v));
    return out;
}

}  // namespace avflow
