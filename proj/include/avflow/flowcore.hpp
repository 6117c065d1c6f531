#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "avflow/rng.hpp"
#include "avflow/tensor.hpp"

namespace avflow {

// A state x_t on the linear interpolation path, t in [0,1]; t=0 is data,
// t=1 is the prior.
struct PathState {
    Tensor value;
    double time;
};

// x_t = (1-t)·x0 + t·x1
inline PathState interpolate(const Tensor& x0, const Tensor& x1, double t) {
    detail::require_same_shape(x0, x1, "interpolate");
    if (!(t >= 0.0 && t <= 1.0)) throw ContractViolation("interpolate: t outside [0,1]");
    std::vector<double> out(x0.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
    return PathState{Tensor(x0.shape(), std::move(out)), t};
}

// One (t1, t2, alpha, m) draw. Always satisfies 0 <= t2 <= m <= t1 <= 1;
// alpha==0 puts m exactly at t1 and alpha==1 exactly at t2.
struct TimePair {
    double t1;
    double t2;
    double alpha;
    double m;

    TimePair(double t1_, double t2_, double alpha_) : t1(t1_), t2(t2_), alpha(alpha_) {
        if (!(t2 <= t1)) throw ContractViolation("TimePair: requires t2 <= t1");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("TimePair: alpha outside [0,1]");
        if (alpha == 0.0)
            m = t1;
        else if (alpha == 1.0)
            m = t2;
        else
            m = std::min(t1, std::max(t2, t1 + alpha * (t2 - t1)));
    }

    bool equal_times() const { return t1 == t2; }

    // Sub-interval lengths of the split [t2, m, t1].
    double d1() const { return t1 - m; }
    double d2() const { return m - t2; }
};

struct TimeSamplerConfig {
    double logit_mean = -0.4;
    double logit_std = 1.0;
    double p_equal = 0.5;

    void validate() const {
        if (!(logit_std > 0.0)) throw ContractViolation("TimeSamplerConfig: logit_std must be > 0");
        if (!(p_equal >= 0.0 && p_equal <= 1.0)) throw ContractViolation("TimeSamplerConfig: p_equal outside [0,1]");
    }
};

namespace detail {

// Logistic-normal draw, clamped into the open interval (0,1).
inline double logistic_normal(Rng& rng, double mean, double std) {
    const double z = mean + std * rng.normal();
    double t = 1.0 / (1.0 + std::exp(-z));
    t = std::min(1.0 - 1e-15, std::max(1e-15, t));
    return t;
}

}  // namespace detail

// Two logistic-normal raw times sorted so t2 <= t1; with probability
// p_equal the pair collapses to t2 == t1; alpha ~ U[0,1] places m.
inline TimePair sample_time_pair(Rng& rng, const TimeSamplerConfig& cfg) {
    cfg.validate();
    const double a = detail::logistic_normal(rng, cfg.logit_mean, cfg.logit_std);
    const double b = detail::logistic_normal(rng, cfg.logit_mean, cfg.logit_std);
    double t1 = std::max(a, b);
    double t2 = std::min(a, b);
    if (rng.uniform01() < cfg.p_equal) t2 = t1;
    const double alpha = rng.uniform01();
    return TimePair(t1, t2, alpha);
}

// Analytic instantaneous-velocity fields with closed-form v(x,t), used as
// ground truth for every identity check. Conditioning is ignored.
class OracleField {
  public:
    enum class Kind { Constant, SinglePoint, Gaussian1d };

    static OracleField constant(Tensor c) { return OracleField(Kind::Constant, std::move(c), 0.0); }
    static OracleField single_point(Tensor a) { return OracleField(Kind::SinglePoint, std::move(a), 0.0); }
    static OracleField gaussian1d(double sigma0) {
        if (!(sigma0 > 0.0)) throw ContractViolation("gaussian1d: sigma0 must be > 0");
        return OracleField(Kind::Gaussian1d, Tensor(), sigma0);
    }

    Kind kind() const { return kind_; }
    const Tensor& param() const { return param_; }
    double sigma0() const { return sigma0_; }

    const char* name() const {
        switch (kind_) {
            case Kind::Constant: return "constant";
            case Kind::SinglePoint: return "single-point";
            default: return "gaussian-1d";
        }
    }

  private:
    OracleField(Kind k, Tensor p, double s) : kind_(k), param_(std::move(p)), sigma0_(s) {}

    Kind kind_;
    Tensor param_;
    double sigma0_;
};

// Closed-form v(x, t).
//   constant(c):      c
//   single-point(a):  (x - a) / t                          (t > 0)
//   gaussian-1d(s0):  [(t - (1-t)·s0²) / ((1-t)²·s0² + t²)] · x
// The gaussian form is the conditional expectation E[x1 - x0 | x_t = x]
// for x0 ~ N(0, s0²·I) and x1 ~ N(0, I) independent.
inline Tensor oracle_velocity(const OracleField& field, const Tensor& x, double t) {
    switch (field.kind()) {
        case OracleField::Kind::Constant: {
            detail::require_same_shape(field.param(), x, "oracle_velocity");
            return field.param();
        }
        case OracleField::Kind::SinglePoint: {
            detail::require_same_shape(field.param(), x, "oracle_velocity");
            if (t < 1e-9) throw DomainError("single-point field: velocity undefined at t < 1e-9");
            std::vector<double> out(x.numel());
            const Tensor& a = field.param();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - a[i]) / t;
            return Tensor(x.shape(), std::move(out));
        }
        default: {
            const double s2 = field.sigma0() * field.sigma0();
            const double num = t - (1.0 - t) * s2;
            const double den = (1.0 - t) * (1.0 - t) * s2 + t * t;
            return smul(num / den, x);
        }
    }
}

namespace detail {

struct Rk4Result {
    Tensor endpoint;  // x at t_to
    Tensor integral;  // ∫_{t_from}^{t_to} v(x_τ, τ) dτ along the trajectory
};

// Classical fixed-step RK4 on dx/dτ = v(x,τ), accumulating the running
// integral of v with the same stage combination (the two increments are
// identical because v does not depend on the accumulator).
inline Rk4Result rk4_flow(const OracleField& field, const Tensor& x_start, double t_from, double t_to,
                          std::size_t steps) {
    if (steps < 1) throw ContractViolation("rk4_flow: steps must be >= 1");
    Tensor x = x_start;
    Tensor acc = Tensor::zeros(x_start.shape());
    if (t_from == t_to) return {x, acc};
    const double h = (t_to - t_from) / static_cast<double>(steps);
    std::vector<double> xv(x.storage());
    std::vector<double> accv(acc.storage());
    const std::size_t n = xv.size();
    std::vector<double> stage(n);
    for (std::size_t s = 0; s < steps; ++s) {
        const double tau = t_from + h * static_cast<double>(s);
        const Tensor xt(x_start.shape(), xv);
        const Tensor k1 = oracle_velocity(field, xt, tau);
        for (std::size_t i = 0; i < n; ++i) stage[i] = xv[i] + 0.5 * h * k1[i];
        const Tensor k2 = oracle_velocity(field, Tensor(x_start.shape(), stage), tau + 0.5 * h);
        for (std::size_t i = 0; i < n; ++i) stage[i] = xv[i] + 0.5 * h * k2[i];
        const Tensor k3 = oracle_velocity(field, Tensor(x_start.shape(), stage), tau + 0.5 * h);
        for (std::size_t i = 0; i < n; ++i) stage[i] = xv[i] + h * k3[i];
        const Tensor k4 = oracle_velocity(field, Tensor(x_start.shape(), stage), tau + h);
        for (std::size_t i = 0; i < n; ++i) {
            const double incr = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            xv[i] += incr;
            accv[i] += incr;
        }
    }
    return {Tensor(x_start.shape(), std::move(xv)), Tensor(x_start.shape(), std::move(accv))};
}

}  // namespace detail

// Trajectory endpoint x(t_to) of the flow ODE through (x, t_from).
inline Tensor flow_to(const OracleField& field, const Tensor& x, double t_from, double t_to,
                      std::size_t steps = 1024) {
    return detail::rk4_flow(field, x, t_from, t_to, steps).endpoint;
}

// Displacement k(x_t1, t1, t2) = ∫_{t2}^{t1} v(x_τ, τ) dτ along the
// trajectory through (x_t1, t1), integrated backward from t1 to t2.
inline Tensor displacement(const OracleField& field, const Tensor& x_t1, double t1, double t2,
                           std::size_t steps = 1024) {
    if (!(t2 <= t1)) throw ContractViolation("displacement: requires t2 <= t1");
    // The backward sweep accumulates ∫_{t1}^{t2}; flip the sign.
    return smul(-1.0, detail::rk4_flow(field, x_t1, t1, t2, steps).integral);
}

// Average velocity u(x_t1, t1, t2) = k / (t1 - t2); at t1 == t2 the limit
// is the instantaneous velocity (same code path as oracle_velocity).
inline Tensor average_velocity(const OracleField& field, const Tensor& x_t1, double t1, double t2,
                               std::size_t steps = 1024) {
    if (!(t2 <= t1)) throw ContractViolation("average_velocity: requires t2 <= t1");
    if (t1 == t2) return oracle_velocity(field, x_t1, t1);
    const Tensor k = displacement(field, x_t1, t1, t2, steps);
    const double dt = t1 - t2;
    std::vector<double> out(k.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k[i] / dt;
    return Tensor(k.shape(), std::move(out));
}

// Residual of the differential identity
//   u(x,t1,t2) = v(x,t1) - (t1-t2)·(d/dt1) u(x_{t1},t1,t2),
// with the total derivative estimated by central differences along the
// trajectory direction (x moves by ±fd·v while t1 moves by ±fd).
inline double check_meanflow_identity(const OracleField& field, const Tensor& x_t1, double t1, double t2,
                                      double fd_step, std::size_t steps = 1024) {
    if (!(t1 > t2)) throw ContractViolation("check_meanflow_identity: requires t1 > t2");
    if (!(fd_step > 0.0)) throw ContractViolation("check_meanflow_identity: fd_step must be > 0");
    const Tensor v = oracle_velocity(field, x_t1, t1);
    const Tensor u = average_velocity(field, x_t1, t1, t2, steps);

    std::vector<double> xp(x_t1.numel()), xm(x_t1.numel());
    for (std::size_t i = 0; i < xp.size(); ++i) {
        xp[i] = x_t1[i] + fd_step * v[i];
        xm[i] = x_t1[i] - fd_step * v[i];
    }
    const Tensor u_plus = average_velocity(field, Tensor(x_t1.shape(), std::move(xp)), t1 + fd_step, t2, steps);
    const Tensor u_minus = average_velocity(field, Tensor(x_t1.shape(), std::move(xm)), t1 - fd_step, t2, steps);

    double resid_sq = 0.0;
    const double dt = t1 - t2;
    for (std::size_t i = 0; i < u.numel(); ++i) {
        const double total_deriv = (u_plus[i] - u_minus[i]) / (2.0 * fd_step);
        const double r = u[i] - (v[i] - dt * total_deriv);
        resid_sq += r * r;
    }
    return std::sqrt(resid_sq);
}

// Residual of the composition identity
//   u(x,t1,t2) = u(x_m,m,t2) + α·(u(x,t1,m) - u(x_m,m,t2)),  α = (t1-m)/(t1-t2),
// evaluated with the affine combination in convex form so both degenerate
// splits (m == t1, m == t2) cancel exactly.
inline double check_composition_identity(const OracleField& field, const Tensor& x_t1, double t1, double m,
                                         double t2, std::size_t steps = 1024) {
    if (!(t2 <= m && m <= t1)) throw ContractViolation("check_composition_identity: requires t2 <= m <= t1");
    if (t1 == t2) throw ContractViolation("check_composition_identity: undefined at t1 == t2");
    const double alpha_frac = (t1 - m) / (t1 - t2);
    const Tensor u_full = average_velocity(field, x_t1, t1, t2, steps);
    const Tensor u_upper = average_velocity(field, x_t1, t1, m, steps);
    const Tensor x_m = flow_to(field, x_t1, t1, m, steps);
    const Tensor u_lower = average_velocity(field, x_m, m, t2, steps);

    double resid_sq = 0.0;
    for (std::size_t i = 0; i < u_full.numel(); ++i) {
        const double rhs = (1.0 - alpha_frac) * u_lower[i] + alpha_frac * u_upper[i];
        const double r = u_full[i] - rhs;
        resid_sq += r * r;
    }
    return std::sqrt(resid_sq);
}

// Residual of displacement additivity k(t1,t2) = k(t1,m) + k(m,t2).
inline double check_displacement_additivity(const OracleField& field, const Tensor& x_t1, double t1, double m,
                                            double t2, std::size_t steps = 1024) {
    if (!(t2 <= m && m <= t1)) throw ContractViolation("check_displacement_additivity: requires t2 <= m <= t1");
    const Tensor k_full = displacement(field, x_t1, t1, t2, steps);
    const Tensor k_upper = displacement(field, x_t1, t1, m, steps);
    const Tensor x_m = flow_to(field, x_t1, t1, m, steps);
    const Tensor k_lower = displacement(field, x_m, m, t2, steps);

    double resid_sq = 0.0;
    for (std::size_t i = 0; i < k_full.numel(); ++i) {
        const double r = k_full[i] - k_upper[i] - k_lower[i];
        resid_sq += r * r;
    }
    return std::sqrt(resid_sq);
}

}  // namespace avflow
