#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace advlab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. A plain value: copyable, movable, no aliasing.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> d;
        d.reserve(r * c);
        for (auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged matrix literal");
            d.insert(d.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(d));
    }
    static Tensor vector(std::initializer_list<double> v) { return Tensor({v.size()}, std::vector<double>(v)); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& vec() noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double item() const {
        if (!is_scalar()) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape s) const {
        if (numel(s) != size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    /// Rows [begin, end) of a matrix.
    Tensor rows(std::size_t begin, std::size_t end) const {
        const std::size_t w = row_width();
        Shape s = shape_;
        s[0] = end - begin;
        return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * w),
                                                        data_.begin() + static_cast<std::ptrdiff_t>(end * w)));
    }
    std::span<const double> row(std::size_t r) const { return data().subspan(r * row_width(), row_width()); }
    std::span<double> row(std::size_t r) { return data().subspan(r * row_width(), row_width()); }
    std::size_t row_width() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

namespace kernels {

inline Tensor map(const Tensor& a, auto&& f) {
    Tensor out(a.shape());
    auto in = a.data();
    auto o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
    return out;
}

/// Elementwise binary op; operands must share a shape unless one is a scalar.
inline Tensor zip(const Tensor& a, const Tensor& b, auto&& f, const char* name) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (b.is_scalar() && (!a.is_scalar() || a.rank() >= b.rank())) {
        const double s = b[0];
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], s);
        return out;
    }
    if (a.is_scalar()) {
        const double s = a[0];
        Tensor out(b.shape());
        for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(s, b[i]);
        return out;
    }
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// out = op(a) * op(b) with op = optional transpose; a, b are matrices.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = ta ? a.dim(1) : a.dim(0);
    const std::size_t k = ta ? a.dim(0) : a.dim(1);
    const std::size_t kb = tb ? b.dim(1) : b.dim(0);
    const std::size_t n = tb ? b.dim(0) : b.dim(1);
    if (k != kb)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                         shape_str(b.shape()) + (tb ? "^T" : ""));
    Tensor out({m, n});
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* c = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * bp[j];
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = A + p * m;
            const double* bp = B + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = ap[i];
                if (av == 0.0) continue;
                double* c = C + i * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * bp[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* ai = A + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = B + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
                C[i * n + j] = s;
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * B[j * k + p];
                C[i * n + j] = s;
            }
    }
    return out;
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

inline double norm_inf(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s = std::max(s, std::abs(v));
    return s;
}

}  // namespace kernels

/// sign(0) = 0.
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace advlab
