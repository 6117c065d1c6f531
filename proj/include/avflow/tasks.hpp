#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "avflow/binio.hpp"
#include "avflow/rng.hpp"
#include "avflow/tensor.hpp"

namespace avflow {

// One conditional-denoising example: noisy == clean + noise exactly, with
// the noise rescaled per sample so the SNR is hit exactly rather than in
// expectation.
struct SignalPair {
    Tensor clean;
    Tensor noise;
    Tensor noisy;
    double snr_db;
};

struct TaskSpec {
    enum class Kind : std::uint8_t { Points2d = 0, SpecGrid = 1 };

    Kind kind = Kind::Points2d;
    std::size_t freq_bins = 16;  // specgrid F
    std::size_t frames = 16;     // specgrid T
    double snr_db = 5.0;
    std::size_t n_train = 2048;
    std::size_t n_test = 256;
    std::uint64_t seed = 0;

    std::size_t signal_dim() const { return kind == Kind::Points2d ? 2 : freq_bins * frames; }

    void validate() const {
        if (kind == Kind::SpecGrid && (freq_bins < 1 || frames < 1))
            throw ContractViolation("TaskSpec: specgrid dims must be >= 1");
        if (n_train < 1 || n_test < 1) throw ContractViolation("TaskSpec: n_train and n_test must be >= 1");
    }
};

inline const char* task_kind_name(TaskSpec::Kind k) { return k == TaskSpec::Kind::Points2d ? "points2d" : "specgrid"; }

inline TaskSpec::Kind parse_task_kind(const std::string& s) {
    if (s == "points2d") return TaskSpec::Kind::Points2d;
    if (s == "specgrid") return TaskSpec::Kind::SpecGrid;
    throw ContractViolation("unknown task kind: " + s);
}

namespace detail {

// Order-independent per-sample seed so samples can be generated in parallel.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    splitmix64(s);
    return splitmix64(s);
}

// White Gaussian noise scaled so 10·log10(|clean|^2/|noise|^2) == snr_db
// exactly; an infinite SNR yields zero noise.
inline SignalPair mix_to_snr(Tensor clean, Rng& rng, double snr_db) {
    const double attenuation = std::pow(10.0, -snr_db / 10.0);
    Tensor raw = rng.normal_tensor(clean.shape());
    const double clean_sq = norm2_sq(clean);
    const double raw_sq = norm2_sq(raw);
    double scale = 0.0;
    if (attenuation > 0.0 && clean_sq > 0.0 && raw_sq > 0.0)
        scale = std::sqrt(clean_sq * attenuation / raw_sq);
    Tensor noise = smul(scale, raw);
    Tensor noisy = add(clean, noise);
    return SignalPair{std::move(clean), std::move(noise), std::move(noisy), snr_db};
}

}  // namespace detail

// Fixed 8-mode Gaussian mixture on a circle of radius 2, mode std 0.1.
inline Tensor points2d_clean(Rng& rng) {
    const std::size_t mode = rng.uniform_index(8);
    const double angle = detail::kTwoPi * static_cast<double>(mode) / 8.0;
    return Tensor::vec({2.0 * std::cos(angle) + 0.1 * rng.normal(), 2.0 * std::sin(angle) + 0.1 * rng.normal()});
}

// One horizontal harmonic track on an F x T grid: constant row, amplitude
// amp modulated along time by the given envelope.
inline Tensor specgrid_track(std::size_t freq_bins, std::size_t frames, std::size_t row, double amp,
                             const std::vector<double>& envelope) {
    if (row >= freq_bins) throw ContractViolation("specgrid_track: row out of range");
    if (envelope.size() != frames) throw ContractViolation("specgrid_track: envelope length must equal frames");
    std::vector<double> grid(freq_bins * frames, 0.0);
    for (std::size_t j = 0; j < frames; ++j) grid[row * frames + j] = amp * envelope[j];
    return Tensor({freq_bins * frames}, std::move(grid));
}

inline Tensor specgrid_clean(Rng& rng, std::size_t freq_bins, std::size_t frames) {
    const std::size_t n_tracks = 1 + rng.uniform_index(3);
    Tensor grid = Tensor::zeros({freq_bins * frames});
    for (std::size_t k = 0; k < n_tracks; ++k) {
        const std::size_t row = rng.uniform_index(freq_bins);
        const double amp = rng.uniform(0.5, 1.0);
        const double center = rng.uniform(0.0, static_cast<double>(frames - 1));
        const double width =
            rng.uniform(static_cast<double>(frames) / 8.0, static_cast<double>(frames) / 2.0);
        std::vector<double> env(frames);
        for (std::size_t j = 0; j < frames; ++j) {
            const double d = (static_cast<double>(j) - center) / width;
            env[j] = std::exp(-0.5 * d * d);
        }
        grid = add(grid, specgrid_track(freq_bins, frames, row, amp, env));
    }
    return grid;
}

// Generates n_train + n_test pairs (train first); each sample uses its own
// derived seed, so the output is a pure function of the spec.
inline std::vector<SignalPair> gen_points2d(const TaskSpec& spec) {
    if (spec.kind != TaskSpec::Kind::Points2d) throw ContractViolation("gen_points2d: wrong kind");
    spec.validate();
    std::vector<SignalPair> out;
    out.reserve(spec.n_train + spec.n_test);
    for (std::size_t i = 0; i < spec.n_train + spec.n_test; ++i) {
        Rng rng(detail::derive_seed(spec.seed, i));
        Tensor clean = points2d_clean(rng);
        out.push_back(detail::mix_to_snr(std::move(clean), rng, spec.snr_db));
    }
    return out;
}

inline std::vector<SignalPair> gen_specgrid(const TaskSpec& spec) {
    if (spec.kind != TaskSpec::Kind::SpecGrid) throw ContractViolation("gen_specgrid: wrong kind");
    spec.validate();
    std::vector<SignalPair> out;
    out.reserve(spec.n_train + spec.n_test);
    for (std::size_t i = 0; i < spec.n_train + spec.n_test; ++i) {
        Rng rng(detail::derive_seed(spec.seed, i));
        Tensor clean = specgrid_clean(rng, spec.freq_bins, spec.frames);
        out.push_back(detail::mix_to_snr(std::move(clean), rng, spec.snr_db));
    }
    return out;
}

inline std::vector<SignalPair> gen_task(const TaskSpec& spec) {
    return spec.kind == TaskSpec::Kind::Points2d ? gen_points2d(spec) : gen_specgrid(spec);
}

// ---- dataset file format ---------------------------------------------------
// magic "AVFLOWDS", version u32, kind u8, signal_dim u32, count u32,
// snr_db f64, then count records of (clean, noise) as raw float64 arrays of
// length signal_dim; noisy is reconstructed as clean + noise on load.

inline constexpr char kDatasetMagic[9] = "AVFLOWDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::vector<SignalPair>& pairs, TaskSpec::Kind kind, std::size_t signal_dim,
                         double snr_db, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.u32(static_cast<std::uint32_t>(signal_dim));
    w.u32(static_cast<std::uint32_t>(pairs.size()));
    w.f64(snr_db);
    for (const auto& p : pairs) {
        if (p.clean.numel() != signal_dim || p.noise.numel() != signal_dim)
            throw ContractViolation("save_dataset: pair dimension mismatch");
        w.f64_array(p.clean.data(), signal_dim);
        w.f64_array(p.noise.data(), signal_dim);
    }
    w.close();
}

struct LoadedDataset {
    TaskSpec::Kind kind;
    std::size_t signal_dim;
    double snr_db;
    std::vector<SignalPair> pairs;
};

inline LoadedDataset load_dataset(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) throw IoError("dataset: unsupported version " + std::to_string(version));
    const std::uint8_t kind_raw = r.u8();
    if (kind_raw > 1) throw IoError("dataset: unknown kind byte");
    LoadedDataset ds;
    ds.kind = static_cast<TaskSpec::Kind>(kind_raw);
    ds.signal_dim = r.u32();
    const std::uint32_t count = r.u32();
    ds.snr_db = r.f64();
    if (ds.signal_dim < 1 || ds.signal_dim > (1u << 24)) throw IoError("dataset: implausible signal_dim");
    ds.pairs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::vector<double> cl(ds.signal_dim), no(ds.signal_dim);
        r.bytes(cl.data(), ds.signal_dim * 8);
        r.bytes(no.data(), ds.signal_dim * 8);
        Tensor clean({ds.signal_dim}, std::move(cl));
        Tensor noise({ds.signal_dim}, std::move(no));
        Tensor noisy = add(clean, noise);
        ds.pairs.push_back(SignalPair{std::move(clean), std::move(noise), std::move(noisy), ds.snr_db});
    }
    r.expect_eof();
    return ds;
}

}  // namespace avflow
