#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "avflow/flowcore.hpp"
#include "avflow/netmodel.hpp"
#include "avflow/rng.hpp"
#include "avflow/tape.hpp"
#include "avflow/tasks.hpp"
#include "avflow/tensor.hpp"

namespace avflow {

enum class Objective { Cfm, MeanFlowJvp, Composition };

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::Cfm: return "cfm";
        case Objective::MeanFlowJvp: return "meanflow-jvp";
        default: return "composition";
    }
}

inline Objective parse_objective(const std::string& s) {
    if (s == "cfm") return Objective::Cfm;
    if (s == "meanflow-jvp") return Objective::MeanFlowJvp;
    if (s == "composition") return Objective::Composition;
    throw ContractViolation("unknown objective: " + s);
}

// L = sg(w)·|Δ|^{2γ} with w = 1/(|Δ|² + c)^p.
struct AdaptiveLossConfig {
    double c = 1e-3;
    double p = 1.0;
    double gamma = 0.5;
    bool enabled = true;

    void validate() const {
        if (!(c > 0.0)) throw ContractViolation("AdaptiveLossConfig: c must be > 0");
        if (!(p >= 0.0)) throw ContractViolation("AdaptiveLossConfig: p must be >= 0");
        if (!(gamma > 0.0)) throw ContractViolation("AdaptiveLossConfig: gamma must be > 0");
    }
};

struct TrainConfig {
    Objective objective = Objective::Composition;
    AdaptiveLossConfig adaptive;
    TimeSamplerConfig time_sampler;
    double learning_rate = 1e-3;  // desk-scale default; the paper-scale preset is 5e-5
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ContractViolation("TrainConfig: learning_rate must be >= 0");
        if (batch_size < 1) throw ContractViolation("TrainConfig: batch_size must be >= 1");
        adaptive.validate();
        time_sampler.validate();
    }
};

// The paper-scale learning rate, exposed as a named preset.
inline constexpr double kPaperLearningRate = 5e-5;

struct StepRecord {
    std::size_t step = 0;
    double raw_loss = 0.0;
    double weighted_loss = 0.0;
    std::size_t forwards = 0;  // network forward passes per sample
    std::size_t jvps = 0;      // dual-number evaluations per sample
    double ms = 0.0;
};

// ---- objective targets ------------------------------------------------------

// CFM regression target x1 - x0.
inline Tensor cfm_target(const Tensor& x0, const Tensor& x1) { return sub(x1, x0); }

// MeanFlow target sg(v - (t1-t2)·D) where v = x1 - x0 and D is the total
// derivative of u_theta along the tangent (v, 1, 0, 0), computed in a
// single dual-number forward pass.
inline Tensor meanflow_jvp_target(const ModelParams& params, const Tensor& x_t1, double t1, double t2,
                                  const Tensor& y, const Tensor& x0, const Tensor& x1) {
    if (!(t2 <= t1)) throw ContractViolation("meanflow_jvp_target: requires t2 <= t1");
    const Tensor v = sub(x1, x0);
    const DualTensor out = forward_dual(params, x_t1, v, t1, 1.0, t2, y);
    const double dt = t1 - t2;
    std::vector<double> tgt(v.numel());
    for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = v[i] - dt * out.tangent[i];
    return Tensor(v.shape(), std::move(tgt));
}

using VelocityQuery = std::function<Tensor(const Tensor& x, double t_hi, double t_lo, const Tensor& y)>;

namespace detail {

// Algorithm-1 composition target over an arbitrary average-velocity
// oracle. The affine combination u1 + α(u2-u1) is evaluated in convex form
// so the degenerate splits α==0 (m==t1) and α==1 (m==t2) reproduce the
// full-interval query bitwise.
inline Tensor composition_target_impl(const VelocityQuery& u, const Tensor& x_t1, double t1, double m, double t2,
                                      double alpha, const Tensor& y, std::size_t* forwards) {
    const Tensor u2 = u(x_t1, t1, m, y);
    const double d1 = t1 - m;
    std::vector<double> xm(x_t1.numel());
    for (std::size_t i = 0; i < xm.size(); ++i) xm[i] = x_t1[i] - d1 * u2[i];
    const Tensor x_m(x_t1.shape(), std::move(xm));
    const Tensor u1 = u(x_m, m, t2, y);
    if (forwards) *forwards += 2;
    std::vector<double> tgt(u1.numel());
    for (std::size_t i = 0; i < tgt.size(); ++i) tgt[i] = (1.0 - alpha) * u1[i] + alpha * u2[i];
    return Tensor(u1.shape(), std::move(tgt));
}

}  // namespace detail

// Composition target with u supplied by any average-velocity function
// (trained network or analytic oracle). Two queries, no JVP.
inline Tensor composition_target_with(const VelocityQuery& u, const Tensor& x_t1, const TimePair& tp,
                                      const Tensor& y, std::size_t* forwards = nullptr) {
    if (!(tp.t1 > tp.t2)) throw ContractViolation("composition_target: requires t1 > t2");
    return detail::composition_target_impl(u, x_t1, tp.t1, tp.m, tp.t2, tp.alpha, y, forwards);
}

inline Tensor composition_target(const ModelParams& params, const Tensor& x_t1, const TimePair& tp, const Tensor& y,
                                 std::size_t* forwards = nullptr) {
    VelocityQuery q = [&params](const Tensor& x, double a, double b, const Tensor& cond) {
        return forward(params, x, a, b, cond);
    };
    return composition_target_with(q, x_t1, tp, y, forwards);
}

// The same target parameterized by interval lengths (d1, d2) instead of
// (m, t2); algebraically the self-consistency form of the identity.
inline Tensor composition_target_intervals(const ModelParams& params, const Tensor& x_t1, double t1, double d1,
                                           double d2, double alpha, const Tensor& y,
                                           std::size_t* forwards = nullptr) {
    if (!(d1 >= 0.0 && d2 >= 0.0 && d1 + d2 > 0.0))
        throw ContractViolation("composition_target_intervals: intervals must be nonnegative and not both zero");
    const double m = t1 - d1;
    const double t2 = m - d2;
    VelocityQuery q = [&params](const Tensor& x, double a, double b, const Tensor& cond) {
        return forward(params, x, a, b, cond);
    };
    return detail::composition_target_impl(q, x_t1, t1, m, t2, alpha, y, forwards);
}

// (weighted_loss, raw_loss) for a residual Δ: raw = |Δ|²,
// weighted = sg(w)·(|Δ|²)^γ with w = 1/(|Δ|² + c)^p; raw when disabled.
inline std::pair<double, double> adaptive_weight(const Tensor& delta, const AdaptiveLossConfig& cfg) {
    cfg.validate();
    const double raw = norm2_sq(delta);
    if (!cfg.enabled) return {raw, raw};
    const double w = 1.0 / std::pow(raw + cfg.c, cfg.p);
    return {w * std::pow(raw, cfg.gamma), raw};
}

// ---- optimizer ---------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t t = 0;

    static AdamState init_like(const std::vector<Tensor>& params) {
        AdamState s;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.push_back(Tensor::zeros(p.shape()));
            s.v.push_back(Tensor::zeros(p.shape()));
        }
        return s;
    }
};

inline void adam_update(std::vector<Tensor>& params, AdamState& st, const std::vector<Tensor>& grads,
                        const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ContractViolation("adam_update: size mismatch");
    st.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::size_t n = params[k].numel();
        std::vector<double> mv(n), vv(n), pv(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grads[k][i];
            mv[i] = b1 * st.m[k][i] + (1.0 - b1) * g;
            vv[i] = b2 * st.v[k][i] + (1.0 - b2) * g * g;
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            pv[i] = params[k][i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        st.m[k] = Tensor(params[k].shape(), std::move(mv));
        st.v[k] = Tensor(params[k].shape(), std::move(vv));
        params[k] = Tensor(params[k].shape(), std::move(pv));
    }
}

// ---- training loop -----------------------------------------------------------

namespace detail {

inline std::size_t worker_threads() {
    if (const char* env = std::getenv("AVFLOW_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return 1;
}

struct SampleResult {
    std::vector<Tensor> grads;
    double raw_loss = 0.0;
    double weighted_loss = 0.0;
    std::size_t forwards = 0;
    std::size_t jvps = 0;
};

// Loss and parameter gradients for one sample; pure given its inputs.
inline SampleResult train_sample(const ModelParams& params, const SignalPair& sample, const Tensor& x1,
                                 const TimePair& tp, const TrainConfig& cfg) {
    SampleResult res;
    const Tensor& x0 = sample.clean;
    const Tensor& y = sample.noisy;
    const Tensor x_t1 = interpolate(x0, x1, tp.t1).value;

    Tensor target = Tensor();
    double pred_t2 = tp.t2;
    switch (cfg.objective) {
        case Objective::Cfm:
            target = cfm_target(x0, x1);
            pred_t2 = tp.t1;  // instantaneous model: t2 fed equal to t1
            break;
        case Objective::MeanFlowJvp:
            target = meanflow_jvp_target(params, x_t1, tp.t1, tp.t2, y, x0, x1);
            res.jvps += 1;
            break;
        case Objective::Composition:
            if (tp.equal_times()) {
                // Algorithm 1's target collapses to the model's own output at
                // t1 == t2; anchor the boundary condition u(x,t,t) = v instead.
                target = cfm_target(x0, x1);
            } else {
                target = composition_target(params, x_t1, tp, y, &res.forwards);
            }
            break;
    }

    GradTape tape;
    TapedNet net(tape, params);
    Var pred = net.forward(x_t1, tp.t1, pred_t2, y);
    res.forwards += 1;
    Var delta = sub(pred, tape.leaf(target));
    Var raw = reduce_sum(square(delta));
    Var loss{nullptr, 0};
    if (cfg.adaptive.enabled) {
        const double w = 1.0 / std::pow(raw.value()[0] + cfg.adaptive.c, cfg.adaptive.p);
        loss = smul(w, pow(raw, cfg.adaptive.gamma));
    } else {
        loss = raw;
    }
    res.raw_loss = raw.value()[0];
    res.weighted_loss = loss.value()[0];
    if (!std::isfinite(res.weighted_loss) || !std::isfinite(res.raw_loss))
        throw NumericError("train: non-finite loss");
    tape.backward(loss);
    res.grads = net.grads();
    return res;
}

}  // namespace detail

// One optimizer step over a batch. Randomness (the step's TimePair and the
// per-sample priors) is drawn sequentially from rng; the per-sample work
// then fans out across AVFLOW_THREADS workers and is reduced in index
// order, so results do not depend on the thread count.
inline StepRecord train_step(ModelParams& params, AdamState& opt, const std::vector<SignalPair>& batch,
                             const TrainConfig& cfg, Rng& rng, std::size_t step_index = 0) {
    if (batch.empty()) throw ContractViolation("train_step: empty batch");
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    const TimePair tp = sample_time_pair(rng, cfg.time_sampler);
    std::vector<Tensor> priors;
    priors.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) priors.push_back(rng.normal_tensor(batch[i].clean.shape()));

    std::vector<detail::SampleResult> results(batch.size());
    const std::size_t n_threads = std::min(detail::worker_threads(), batch.size());
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < batch.size(); ++i)
            results[i] = detail::train_sample(params, batch[i], priors[i], tp, cfg);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(n_threads);
        for (std::size_t w = 0; w < n_threads; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (std::size_t i = w; i < batch.size(); i += n_threads)
                        results[i] = detail::train_sample(params, batch[i], priors[i], tp, cfg);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<Tensor> flat = params.trainable();
    std::vector<std::vector<double>> grad_acc(flat.size());
    for (std::size_t k = 0; k < flat.size(); ++k) grad_acc[k].assign(flat[k].numel(), 0.0);
    double raw_sum = 0.0, weighted_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& r : results) {
        raw_sum += r.raw_loss;
        weighted_sum += r.weighted_loss;
        for (std::size_t k = 0; k < flat.size(); ++k)
            for (std::size_t i = 0; i < grad_acc[k].size(); ++i) grad_acc[k][i] += inv_b * r.grads[k][i];
    }

    std::vector<Tensor> grads;
    grads.reserve(flat.size());
    for (std::size_t k = 0; k < flat.size(); ++k) grads.push_back(Tensor(flat[k].shape(), std::move(grad_acc[k])));
    adam_update(flat, opt, grads, cfg);
    params.set_trainable(flat);

    StepRecord rec;
    rec.step = step_index;
    rec.raw_loss = raw_sum * inv_b;
    rec.weighted_loss = weighted_sum * inv_b;
    rec.forwards = results[0].forwards;
    rec.jvps = results[0].jvps;
    if (!std::isfinite(rec.weighted_loss)) throw NumericError("train_step: non-finite loss at step " + std::to_string(step_index));
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
    return rec;
}

// Full training run: cfg.steps optimizer steps over shuffled minibatches.
// Deterministic for a fixed seed.
inline std::pair<ModelParams, std::vector<StepRecord>> train(const TrainConfig& cfg, const NetConfig& net_cfg,
                                                             const std::vector<SignalPair>& dataset) {
    if (dataset.empty()) throw ContractViolation("train: empty dataset");
    cfg.validate();
    ModelParams params = init(net_cfg, cfg.seed);
    AdamState opt = AdamState::init_like(params.trainable());
    Rng rng(cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL);

    std::vector<StepRecord> log;
    log.reserve(cfg.steps);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // trigger shuffle on first use

    std::vector<SignalPair> batch;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        batch.clear();
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(dataset[order[cursor++]]);
        }
        log.push_back(train_step(params, opt, batch, cfg, rng, step));
    }
    return {std::move(params), std::move(log)};
}

// steps.csv: step,raw_loss,weighted_loss,forwards,jvps,ms
inline void write_step_log(const std::vector<StepRecord>& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_step_log: cannot open " + path.string());
    out << "step,raw_loss,weighted_loss,forwards,jvps,ms\n";
    char buf[160];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%zu,%zu,%.6g\n", r.step, r.raw_loss, r.weighted_loss,
                      r.forwards, r.jvps, r.ms);
        out << buf;
    }
    if (!out) throw IoError("write_step_log: write failed");
}

}  // namespace avflow
