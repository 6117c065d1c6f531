#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "avflow/binio.hpp"
#include "avflow/dual.hpp"
#include "avflow/rng.hpp"
#include "avflow/tape.hpp"
#include "avflow/tensor.hpp"

namespace avflow {

struct NetConfig {
    std::size_t signal_dim = 2;
    std::size_t hidden_width = 256;
    std::size_t hidden_layers = 3;
    std::size_t n_frequencies = 16;

    void validate() const {
        if (signal_dim < 1 || hidden_width < 1 || hidden_layers < 1 || n_frequencies < 1)
            throw ContractViolation("NetConfig: all counts must be >= 1");
    }

    // concat(x_t, y, embed(t1), embed(t2), t1, t2)
    std::size_t input_width() const { return 2 * signal_dim + 4 * n_frequencies + 2; }

    bool operator==(const NetConfig&) const = default;
};

// Weights of the conditional average-velocity network u_theta(x_t, t1, t2, y):
// an MLP with smooth activations, a linear output layer, and Fourier
// features of both time arguments.
struct ModelParams {
    NetConfig cfg;
    std::vector<Tensor> weights;  // hidden_layers + 1 matrices
    std::vector<Tensor> biases;   // matching vectors
    Tensor freq_table;            // [n_frequencies], f_k = 2^(k-1)

    std::size_t layer_count() const { return weights.size(); }

    // Trainable tensors in serialization order (freq_table is fixed, not trained).
    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        out.reserve(weights.size() * 2);
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out.push_back(weights[i]);
            out.push_back(biases[i]);
        }
        return out;
    }

    void set_trainable(const std::vector<Tensor>& flat) {
        if (flat.size() != weights.size() * 2) throw ContractViolation("set_trainable: wrong tensor count");
        for (std::size_t i = 0; i < weights.size(); ++i) {
            weights[i] = flat[2 * i];
            biases[i] = flat[2 * i + 1];
        }
    }
};

namespace detail {

inline std::size_t val_numel(const Tensor& t) { return t.numel(); }
inline std::size_t val_numel(const DualTensor& t) { return t.primal.numel(); }
inline std::size_t val_numel(const Var& v) { return v.value().numel(); }

// Angular rates and phases realizing the interleaved
// [sin(2π f_k t), cos(2π f_k t)] layout as one sin() over 2n entries
// (cos x = sin(x + π/2)).
inline std::pair<Tensor, Tensor> embed_tables(const Tensor& freq_table) {
    const std::size_t n = freq_table.numel();
    std::vector<double> w(2 * n), phase(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
        w[2 * k] = kTwoPi * freq_table[k];
        w[2 * k + 1] = kTwoPi * freq_table[k];
        phase[2 * k] = 0.0;
        phase[2 * k + 1] = kHalfPi;
    }
    return {Tensor({2 * n}, std::move(w)), Tensor({2 * n}, std::move(phase))};
}

inline Tensor default_freq_table(std::size_t n_frequencies) {
    std::vector<double> f(n_frequencies);
    for (std::size_t k = 0; k < n_frequencies; ++k) f[k] = std::ldexp(1.0, static_cast<int>(k));
    return Tensor({n_frequencies}, std::move(f));
}

// The network body, written once over the kernel algebra so the same code
// runs as a plain forward (V = Tensor), a dual-number JVP pass
// (V = DualTensor), or a taped pass for reverse mode (V = Var).
template <class V>
V net_apply(const std::vector<V>& weights, const std::vector<V>& biases, const V& embed_w, const V& embed_phase,
            const V& x_t, const V& t1, const V& t2, const V& y) {
    auto embed = [&](const V& t) { return sin(add(mul(broadcast(t, val_numel(embed_w)), embed_w), embed_phase)); };
    // Raw t1/t2 channels keep the input injective at the endpoints, where the
    // integer-frequency Fourier features are 1-periodic (embed(0) == embed(1)).
    V h = concat({x_t, y, embed(t1), embed(t2), t1, t2});
    const std::size_t layers = weights.size();
    for (std::size_t i = 0; i + 1 < layers; ++i) h = silu(add(matvec(weights[i], h), biases[i]));
    return add(matvec(weights[layers - 1], h), biases[layers - 1]);
}

}  // namespace detail

// [sin(2π f_k t), cos(2π f_k t)] for k = 1..n, f_k = 2^(k-1); length 2n.
inline Tensor fourier_embed(double t, std::size_t n_frequencies) {
    const Tensor freqs = detail::default_freq_table(n_frequencies);
    auto [w, phase] = detail::embed_tables(freqs);
    return sin(add(mul(broadcast(Tensor::scalar(t), 2 * n_frequencies), w), phase));
}

// Xavier-uniform weights, zero biases, output layer scaled down so initial
// predictions (and therefore early bootstrapped targets) are near zero.
inline ModelParams init(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.cfg = cfg;
    std::vector<std::size_t> dims;
    dims.push_back(cfg.input_width());
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) dims.push_back(cfg.hidden_width);
    dims.push_back(cfg.signal_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w = rng.uniform_tensor({fan_out, fan_in}, -bound, bound);
        if (l + 2 == dims.size()) w = smul(0.01, w);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Tensor::zeros({fan_out}));
    }
    p.freq_table = detail::default_freq_table(cfg.n_frequencies);
    return p;
}

namespace detail {

inline void check_forward_args(const ModelParams& p, const Tensor& x_t, double t1, double t2, const Tensor& y) {
    if (x_t.shape() != Shape{p.cfg.signal_dim} || y.shape() != Shape{p.cfg.signal_dim})
        throw ContractViolation("forward: x_t and y must have shape [signal_dim]");
    if (!(t2 <= t1)) throw ContractViolation("forward: requires t2 <= t1");
}

}  // namespace detail

// u_theta(x_t, t1, t2, y); pure function of its arguments.
inline Tensor forward(const ModelParams& p, const Tensor& x_t, double t1, double t2, const Tensor& y) {
    detail::check_forward_args(p, x_t, t1, t2, y);
    auto [w, phase] = detail::embed_tables(p.freq_table);
    return detail::net_apply<Tensor>(p.weights, p.biases, w, phase, x_t, Tensor::scalar(t1), Tensor::scalar(t2), y);
}

// Dual forward with caller-chosen tangents on x_t and t1 (t2 and y frozen):
// one pass yields u_theta and its directional derivative along (dx, dt1).
inline DualTensor forward_dual(const ModelParams& p, const Tensor& x_t, const Tensor& dx, double t1, double dt1,
                               double t2, const Tensor& y) {
    detail::check_forward_args(p, x_t, t1, t2, y);
    auto [w, phase] = detail::embed_tables(p.freq_table);
    std::vector<DualTensor> weights, biases;
    weights.reserve(p.weights.size());
    biases.reserve(p.biases.size());
    for (const auto& wt : p.weights) weights.push_back(DualTensor::constant(wt));
    for (const auto& bt : p.biases) biases.push_back(DualTensor::constant(bt));
    return detail::net_apply<DualTensor>(weights, biases, DualTensor::constant(w), DualTensor::constant(phase),
                                         DualTensor(x_t, dx), DualTensor(Tensor::scalar(t1), Tensor::scalar(dt1)),
                                         DualTensor::constant(Tensor::scalar(t2)), DualTensor::constant(y));
}

// Network parameters registered as leaves on a tape, ready for repeated
// taped forwards within one loss evaluation.
struct TapedNet {
    const ModelParams* params;
    GradTape* tape;
    std::vector<Var> weights;
    std::vector<Var> biases;
    Var embed_w;
    Var embed_phase;

    TapedNet(GradTape& t, const ModelParams& p) : params(&p), tape(&t) {
        auto [w, phase] = detail::embed_tables(p.freq_table);
        for (const auto& wt : p.weights) weights.push_back(t.leaf(wt));
        for (const auto& bt : p.biases) biases.push_back(t.leaf(bt));
        embed_w = t.leaf(w);
        embed_phase = t.leaf(phase);
    }

    Var forward(const Tensor& x_t, double t1, double t2, const Tensor& y) const {
        detail::check_forward_args(*params, x_t, t1, t2, y);
        return detail::net_apply<Var>(weights, biases, embed_w, embed_phase, tape->leaf(x_t),
                                      tape->leaf(Tensor::scalar(t1)), tape->leaf(Tensor::scalar(t2)), tape->leaf(y));
    }

    // Gradients for weights/biases in trainable() order after backward().
    std::vector<Tensor> grads() const {
        std::vector<Tensor> out;
        out.reserve(weights.size() * 2);
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out.push_back(tape->grad(weights[i]));
            out.push_back(tape->grad(biases[i]));
        }
        return out;
    }
};

// ---- checkpoint format -----------------------------------------------------
// magic "AVFLOWCK", version u32, NetConfig as four u32, then each tensor as
// (rank u32, dims u32..., float64 payload) in declaration order:
// W0,b0,...,Wn,bn, freq_table.

inline constexpr char kCheckpointMagic[9] = "AVFLOWCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save(const ModelParams& p, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(p.cfg.signal_dim));
    w.u32(static_cast<std::uint32_t>(p.cfg.hidden_width));
    w.u32(static_cast<std::uint32_t>(p.cfg.hidden_layers));
    w.u32(static_cast<std::uint32_t>(p.cfg.n_frequencies));
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        w.tensor(p.weights[i]);
        w.tensor(p.biases[i]);
    }
    w.tensor(p.freq_table);
    w.close();
}

inline ModelParams load(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic(kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    NetConfig cfg;
    cfg.signal_dim = r.u32();
    cfg.hidden_width = r.u32();
    cfg.hidden_layers = r.u32();
    cfg.n_frequencies = r.u32();
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    std::vector<std::size_t> dims;
    dims.push_back(cfg.input_width());
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) dims.push_back(cfg.hidden_width);
    dims.push_back(cfg.signal_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Tensor w = r.tensor();
        Tensor b = r.tensor();
        if (w.shape() != Shape{dims[l + 1], dims[l]} || b.shape() != Shape{dims[l + 1]})
            throw IoError("checkpoint: layer " + std::to_string(l) + " breaks the dimension chain");
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    p.freq_table = r.tensor();
    if (p.freq_table.shape() != Shape{cfg.n_frequencies}) throw IoError("checkpoint: bad frequency table");
    r.expect_eof();
    for (const auto& t : p.weights)
        if (!t.all_finite()) throw IoError("checkpoint: non-finite weights");
    return p;
}

}  // namespace avflow
