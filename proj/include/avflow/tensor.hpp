#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avflow/errors.hpp"

namespace avflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

// Dense row-major tensor of 64-bit floats. The payload is frozen at
// construction and shared between copies, so copies are cheap and
// concurrent reads are safe.
class Tensor {
  public:
    Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
        if (shape_numel(shape_) != data_->size())
            throw ContractViolation("tensor: shape " + shape_str(shape_) + " does not match payload size " +
                                    std::to_string(data_->size()));
    }

    static Tensor zeros(Shape shape) {
        std::vector<double> d(shape_numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(d));
    }

    static Tensor full(Shape shape, double v) {
        std::vector<double> d(shape_numel(shape), v);
        return Tensor(std::move(shape), std::move(d));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    // 1-D convenience constructor.
    static Tensor vec(std::vector<double> data) {
        Shape s{data.size()};
        return Tensor(std::move(s), std::move(data));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_->size(); }

    const std::vector<double>& storage() const { return *data_; }
    const double* data() const { return data_->data(); }
    double operator[](std::size_t i) const { return (*data_)[i]; }

    // Scalar extraction; the tensor must hold exactly one element.
    double value() const {
        if (numel() != 1) throw ContractViolation("tensor: value() on non-scalar of shape " + shape_str(shape_));
        return (*data_)[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Bitwise equality of shape and payload.
    bool identical(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        const auto& a = *data_;
        const auto& b = *o.data_;
        for (std::size_t i = 0; i < a.size(); ++i) {
            // compare as doubles, distinguishing nothing beyond value bits via ==
            if (!(a[i] == b[i]) && !(std::isnan(a[i]) && std::isnan(b[i]))) return false;
        }
        return true;
    }

  private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

namespace detail {

constexpr double kPi = 3.1415926535897932384626433832795;
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kHalfPi = 1.5707963267948966192313216916398;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x * sigmoid(x); the smooth activation used by every network in this
// project. Continuously differentiable everywhere.
inline double silu_val(double x) { return x * sigmoid(x); }
inline double silu_deriv(double x) {
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// d/dx x^e with a clamp at the x == 0, e < 1 singularity so the training
// loss stays total when a residual is exactly zero.
inline double pow_deriv(double x, double e) {
    if (x == 0.0) {
        if (e == 1.0) return 1.0;
        return 0.0;
    }
    return e * std::pow(x, e - 1.0);
}

}  // namespace detail

// ---- value kernels -------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor(a.shape(), std::move(out));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor(a.shape(), std::move(out));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor(a.shape(), std::move(out));
}

inline Tensor smul(double s, const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
    return Tensor(a.shape(), std::move(out));
}

// W: [m,n], x: [n] -> [m]
inline Tensor matvec(const Tensor& w, const Tensor& x) {
    if (w.rank() != 2 || x.rank() != 1 || w.dim(1) != x.dim(0))
        throw ContractViolation("matvec: incompatible shapes " + shape_str(w.shape()) + " x " + shape_str(x.shape()));
    const std::size_t m = w.dim(0), n = w.dim(1);
    std::vector<double> out(m, 0.0);
    const double* wp = w.data();
    const double* xp = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = wp + i * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * xp[j];
        out[i] = acc;
    }
    return Tensor({m}, std::move(out));
}

// A: [m,k], B: [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ContractViolation("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a[i * k + l];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[l * n + j];
        }
    return Tensor({m, n}, std::move(out));
}

inline Tensor reduce_sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
    return Tensor::scalar(acc);
}

inline Tensor reduce_mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractViolation("reduce_mean: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
    return Tensor::scalar(acc / static_cast<double>(a.numel()));
}

// Replicate a single-element tensor to a 1-D vector of length n.
inline Tensor broadcast(const Tensor& a, std::size_t n) {
    if (a.numel() != 1) throw ContractViolation("broadcast: source must hold one element");
    return Tensor::full({n}, a[0]);
}

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("concat: no parts");
    std::size_t total = 0;
    for (const auto& p : parts) total += p.numel();
    std::vector<double> out;
    out.reserve(total);
    for (const auto& p : parts) out.insert(out.end(), p.data(), p.data() + p.numel());
    return Tensor({total}, std::move(out));
}

inline Tensor slice(const Tensor& a, std::size_t offset, std::size_t len) {
    if (offset + len > a.numel()) throw ContractViolation("slice: range out of bounds");
    std::vector<double> out(a.data() + offset, a.data() + offset + len);
    return Tensor({len}, std::move(out));
}

inline Tensor silu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::silu_val(a[i]);
    return Tensor(a.shape(), std::move(out));
}

inline Tensor sin(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(a[i]);
    return Tensor(a.shape(), std::move(out));
}

inline Tensor cos(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(a[i]);
    return Tensor(a.shape(), std::move(out));
}

inline Tensor square(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
    return Tensor(a.shape(), std::move(out));
}

inline Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a[i]);
    return Tensor(a.shape(), std::move(out));
}

inline Tensor pow(const Tensor& a, double e) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a[i], e);
    return Tensor(a.shape(), std::move(out));
}

inline Tensor reciprocal(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / a[i];
    return Tensor(a.shape(), std::move(out));
}

// stop_gradient on a plain value is the identity.
inline Tensor stop_gradient(const Tensor& a) { return a; }

// ---- small numeric helpers used across modules ---------------------------

inline double dot(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2_sq(const Tensor& a) { return dot(a, a); }
inline double norm2(const Tensor& a) { return std::sqrt(norm2_sq(a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace avflow
