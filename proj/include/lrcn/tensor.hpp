#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lrcn {

/// Thrown when operand extents do not fit together.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces (or is fed) NaN/Inf.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/**
 * Dense row-major array of doubles with explicit shape metadata.
 *
 * A default-constructed tensor is "null": it has no shape and no values and is
 * used to mark absent optional quantities (e.g. the memory cell of an RNN).
 */
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_extents();
        values_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        check_extents();
        if (values_.size() != shape_size(shape_))
            throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                                 std::to_string(values_.size()) + " values");
    }

    static Tensor vector(std::initializer_list<double> v) {
        return Tensor({v.size()}, std::vector<double>(v));
    }

    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> values;
        values.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size())
            throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                                 shape_str(shape_));
        return shape_[axis];
    }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    /// Bit-exact comparison of shape and values.
    bool operator==(const Tensor&) const = default;

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != values_.size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), values_);
    }

    Tensor flattened() const { return empty() ? Tensor{} : reshaped({values_.size()}); }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(),
                           [](double v) { return std::isfinite(v); });
    }

  private:
    void check_extents() const {
        for (std::size_t e : shape_)
            if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> values_;
};

inline Tensor zeros_like(const Tensor& t) { return t.empty() ? Tensor{} : Tensor(t.shape()); }

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

/// Standard matrix product; the k-sum runs in ascending order for every entry.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    return out;
}

/// out += W x
inline void matvec_acc(const Tensor& w, std::span<const double> x, std::span<double> out) {
    const std::size_t m = w.dim(0), n = w.dim(1);
    if (x.size() != n || out.size() != m)
        throw DimensionError("matvec: matrix " + shape_str(w.shape()) + " with vector of length " +
                             std::to_string(x.size()));
    const double* row = w.data();
    for (std::size_t i = 0; i < m; ++i, row += n) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
        out[i] += s;
    }
}

inline Tensor matvec(const Tensor& w, const Tensor& x) {
    require_rank(w, 2, "matvec");
    Tensor out({w.dim(0)});
    matvec_acc(w, x.values(), out.values());
    return out;
}

/// out += W^T g
inline void matvec_t_acc(const Tensor& w, std::span<const double> g, std::span<double> out) {
    const std::size_t m = w.dim(0), n = w.dim(1);
    if (g.size() != m || out.size() != n)
        throw DimensionError("matvec_t: matrix " + shape_str(w.shape()) + " with vector of length " +
                             std::to_string(g.size()));
    const double* row = w.data();
    for (std::size_t i = 0; i < m; ++i, row += n) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out[j] += row[j] * gi;
    }
}

/// G += a b^T
inline void outer_acc(Tensor& g, std::span<const double> a, std::span<const double> b) {
    const std::size_t m = g.dim(0), n = g.dim(1);
    if (a.size() != m || b.size() != n)
        throw DimensionError("outer: target " + shape_str(g.shape()) + " with vectors of length " +
                             std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double* row = g.data();
    for (std::size_t i = 0; i < m; ++i, row += n) {
        const double ai = a[i];
        if (ai == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) row[j] += ai * b[j];
    }
}

/// y += alpha * x
inline void axpy(double alpha, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void add_inplace(std::span<double> y, std::span<const double> x) {
    if (x.size() != y.size()) throw DimensionError("add: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += x[i];
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Elementwise logistic function. Outputs are strictly inside (0,1) for |x| < 36.
inline Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = sigmoid(v);
    return out;
}

/// Elementwise hyperbolic tangent. Outputs are strictly inside (-1,1) for |x| < 19.
inline Tensor tanh_act(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = std::tanh(v);
    return out;
}

/// Max-subtracted softmax over a flat span, written into `out`.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
    if (logits.empty()) throw DimensionError("softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

inline Tensor softmax(const Tensor& logits) {
    if (logits.empty()) throw DimensionError("softmax: empty input");
    Tensor out({logits.size()});
    softmax_into(logits.values(), out.values());
    return out;
}

/// log softmax(logits)[index], computed without forming the distribution.
inline double log_softmax_at(std::span<const double> logits, std::size_t index) {
    if (logits.empty()) throw DimensionError("log_softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return logits[index] - mx - std::log(sum);
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.empty()) return b.flattened();
    if (b.empty()) return a.flattened();
    std::vector<double> v(a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    return Tensor::vector(std::move(v));
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] *= b[i];
    return out;
}

inline double sum(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/**
 * Central-difference gradient of a scalar function:
 * (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
 */
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps) {
    Tensor grad = zeros_like(x);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                               std::to_string(i));
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

}  // namespace lrcn
