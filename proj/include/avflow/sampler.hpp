#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "avflow/flowcore.hpp"
#include "avflow/netmodel.hpp"
#include "avflow/tensor.hpp"

namespace avflow {

// Velocity source for inference: a trained network or an analytic oracle.
// Called as fn(x, t_hi, t_lo, y); instantaneous queries pass t_lo == t_hi.
using VelocityFn = std::function<Tensor(const Tensor& x, double t_hi, double t_lo, const Tensor& y)>;

struct SamplerConfig {
    enum class Mode { EulerInstantaneous, AverageVelocity };

    std::size_t nfe = 1;
    Mode mode = Mode::AverageVelocity;

    void validate() const {
        if (nfe < 1) throw ContractViolation("SamplerConfig: nfe must be >= 1");
    }
};

inline SamplerConfig::Mode parse_sampler_mode(const std::string& s) {
    if (s == "euler") return SamplerConfig::Mode::EulerInstantaneous;
    if (s == "avg") return SamplerConfig::Mode::AverageVelocity;
    throw ContractViolation("unknown sampler mode: " + s);
}

inline VelocityFn model_velocity(ModelParams params) {
    return [params = std::move(params)](const Tensor& x, double t_hi, double t_lo, const Tensor& y) {
        return forward(params, x, t_hi, t_lo, y);
    };
}

inline VelocityFn oracle_instantaneous(OracleField field) {
    return [field = std::move(field)](const Tensor& x, double t_hi, double, const Tensor&) {
        return oracle_velocity(field, x, t_hi);
    };
}

inline VelocityFn oracle_average(OracleField field, std::size_t steps = 1024) {
    return [field = std::move(field), steps](const Tensor& x, double t_hi, double t_lo, const Tensor&) {
        return average_velocity(field, x, t_hi, t_lo, steps);
    };
}

namespace detail {

inline void check_sampler_state(const Tensor& x, double t) {
    if (!x.all_finite())
        throw NumericError("sampler: state diverged (non-finite) at t = " + std::to_string(t));
}

}  // namespace detail

// Euler integration of the flow ODE from t=1 to t=0 with Δt = 1/N,
// querying the model at (x_t, t, t, y).
inline Tensor euler_sample(const VelocityFn& fn, const Tensor& x1, const Tensor& y, const SamplerConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.nfe;
    Tensor x = x1;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(n - i) / static_cast<double>(n);
        const double t_next = static_cast<double>(n - i - 1) / static_cast<double>(n);
        const Tensor v = fn(x, t, t, y);
        std::vector<double> next(x.numel());
        for (std::size_t j = 0; j < next.size(); ++j) next[j] = x[j] - (t - t_next) * v[j];
        x = Tensor(x.shape(), std::move(next));
        detail::check_sampler_state(x, t_next);
    }
    return x;
}

// Average-velocity sampling over N equal sub-intervals of [0,1]:
// x <- x - (t_i - t_{i+1})·u(x, t_i, t_{i+1}, y). N=1 is the one-step
// generator x0 = x1 - u(x1, 1, 0, y).
inline Tensor avg_velocity_sample(const VelocityFn& fn, const Tensor& x1, const Tensor& y,
                                  const SamplerConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.nfe;
    Tensor x = x1;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(n - i) / static_cast<double>(n);
        const double t_next = static_cast<double>(n - i - 1) / static_cast<double>(n);
        const Tensor u = fn(x, t, t_next, y);
        std::vector<double> next(x.numel());
        for (std::size_t j = 0; j < next.size(); ++j) next[j] = x[j] - (t - t_next) * u[j];
        x = Tensor(x.shape(), std::move(next));
        detail::check_sampler_state(x, t_next);
    }
    return x;
}

inline Tensor sample(const VelocityFn& fn, const Tensor& x1, const Tensor& y, const SamplerConfig& cfg) {
    return cfg.mode == SamplerConfig::Mode::EulerInstantaneous ? euler_sample(fn, x1, y, cfg)
                                                               : avg_velocity_sample(fn, x1, y, cfg);
}

}  // namespace avflow
