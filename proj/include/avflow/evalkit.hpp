#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "avflow/errors.hpp"
#include "avflow/tensor.hpp"

#include <json.hpp>

namespace avflow {

namespace detail {

// dB ratio with the cap rule: zero denominators (and overflow past the
// cap) clamp to +100, vanishing numerators to -100, so aggregation stays
// total.
inline double db_ratio(double num, double den) {
    if (num <= 0.0) return -100.0;
    if (den <= 0.0) return 100.0;
    const double db = 10.0 * std::log10(num / den);
    return std::min(100.0, std::max(-100.0, db));
}

}  // namespace detail

// Scale-invariant SDR: project the estimate onto the reference and compare
// the projection's energy to the residual's.
inline double si_sdr(const Tensor& reference, const Tensor& estimate) {
    detail::require_same_shape(reference, estimate, "si_sdr");
    const double ref_sq = norm2_sq(reference);
    if (ref_sq <= 0.0) throw ContractViolation("si_sdr: zero reference");
    const double beta = dot(estimate, reference) / ref_sq;
    double resid_sq = 0.0;
    for (std::size_t i = 0; i < reference.numel(); ++i) {
        const double r = estimate[i] - beta * reference[i];
        resid_sq += r * r;
    }
    return detail::db_ratio(beta * beta * ref_sq, resid_sq);
}

struct SirSar {
    double si_sir;
    double si_sar;
};

// Decompose the estimate as e_tgt + e_int + e_art with e_tgt the projection
// onto span{s} and e_tgt + e_int the least-squares projection onto
// span{s, n}; ratios are scale-invariant by construction.
inline SirSar si_sir_sar(const Tensor& s, const Tensor& n, const Tensor& estimate) {
    detail::require_same_shape(s, n, "si_sir_sar");
    detail::require_same_shape(s, estimate, "si_sir_sar");
    const double ss = norm2_sq(s);
    const double nn = norm2_sq(n);
    if (ss <= 0.0 || nn <= 0.0) throw ContractViolation("si_sir_sar: zero source");
    const double sn = dot(s, n);
    const double det = ss * nn - sn * sn;
    if (det <= 1e-12 * ss * nn) throw DomainError("si_sir_sar: s and n are (near-)collinear");

    const double es = dot(estimate, s);
    const double en = dot(estimate, n);
    // least squares onto span{s,n} via the 2x2 normal equations
    const double a = (es * nn - en * sn) / det;
    const double b = (en * ss - es * sn) / det;
    const double beta = es / ss;

    double int_sq = 0.0, art_sq = 0.0, proj_sq = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const double proj = a * s[i] + b * n[i];
        const double e_int = proj - beta * s[i];
        const double e_art = estimate[i] - proj;
        int_sq += e_int * e_int;
        art_sq += e_art * e_art;
        proj_sq += proj * proj;
    }
    const double tgt_sq = beta * beta * ss;
    return SirSar{detail::db_ratio(tgt_sq, int_sq), detail::db_ratio(proj_sq, art_sq)};
}

// Energy distance 2·E|a-b| - E|a-a'| - E|b-b'| as a V-statistic over all
// ordered pairs; zero iff the empirical distributions coincide.
inline double energy_distance(const std::vector<Tensor>& set_a, const std::vector<Tensor>& set_b) {
    if (set_a.empty() || set_b.empty()) throw ContractViolation("energy_distance: empty set");
    auto mean_cross = [](const std::vector<Tensor>& u, const std::vector<Tensor>& v) {
        double acc = 0.0;
        for (const auto& a : u)
            for (const auto& b : v) {
                double d = 0.0;
                for (std::size_t i = 0; i < a.numel(); ++i) {
                    const double diff = a[i] - b[i];
                    d += diff * diff;
                }
                acc += std::sqrt(d);
            }
        return acc / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
    };
    return 2.0 * mean_cross(set_a, set_b) - mean_cross(set_a, set_a) - mean_cross(set_b, set_b);
}

struct EvalReport {
    std::vector<double> si_sdr;
    std::vector<double> si_sir;
    std::vector<double> si_sar;
    std::vector<double> mse;
    std::optional<double> energy_dist;

    static double mean(const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc / static_cast<double>(v.size());
    }

    static double stddev(const std::vector<double>& v) {
        const double mu = mean(v);
        double acc = 0.0;
        for (double x : v) acc += (x - mu) * (x - mu);
        return std::sqrt(acc / static_cast<double>(v.size()));
    }
};

// Per-sample metrics for estimates against the dataset's clean/noise pair.
inline EvalReport evaluate(const std::vector<Tensor>& clean, const std::vector<Tensor>& noise,
                           const std::vector<Tensor>& estimates) {
    if (clean.size() != estimates.size() || clean.size() != noise.size())
        throw ContractViolation("evaluate: set sizes differ");
    if (clean.empty()) throw ContractViolation("evaluate: empty sets");
    EvalReport rep;
    rep.si_sdr.reserve(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        rep.si_sdr.push_back(si_sdr(clean[i], estimates[i]));
        const SirSar ss = si_sir_sar(clean[i], noise[i], estimates[i]);
        rep.si_sir.push_back(ss.si_sir);
        rep.si_sar.push_back(ss.si_sar);
        double err = 0.0;
        for (std::size_t j = 0; j < clean[i].numel(); ++j) {
            const double d = estimates[i][j] - clean[i][j];
            err += d * d;
        }
        rep.mse.push_back(err / static_cast<double>(clean[i].numel()));
    }
    return rep;
}

inline nlohmann::json report_json(const EvalReport& rep) {
    nlohmann::json j;
    auto block = [](const std::vector<double>& v) {
        return nlohmann::json{{"mean", EvalReport::mean(v)}, {"std", EvalReport::stddev(v)}, {"per_sample", v}};
    };
    j["si_sdr"] = block(rep.si_sdr);
    j["si_sir"] = block(rep.si_sir);
    j["si_sar"] = block(rep.si_sar);
    j["mse"] = block(rep.mse);
    if (rep.energy_dist) j["energy_distance"] = *rep.energy_dist;
    j["n_samples"] = rep.si_sdr.size();
    return j;
}

inline void write_report_csv(const EvalReport& rep, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_report_csv: cannot open " + path.string());
    out << "idx,si_sdr,si_sir,si_sar,mse\n";
    char buf[192];
    for (std::size_t i = 0; i < rep.si_sdr.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", i, rep.si_sdr[i], rep.si_sir[i],
                      rep.si_sar[i], rep.mse[i]);
        out << buf;
    }
    if (!out) throw IoError("write_report_csv: write failed");
}

inline void write_report_json(const EvalReport& rep, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_report_json: cannot open " + path.string());
    out << report_json(rep).dump(2) << "\n";
    if (!out) throw IoError("write_report_json: write failed");
}

}  // namespace avflow
