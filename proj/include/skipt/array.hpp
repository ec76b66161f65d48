#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipt {

using Shape = std::vector<std::size_t>;

inline std::size_t num_elements(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major float64 value. The single numeric carrier for activations,
// features, parameters and gradients.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (num_elements(shape) != data.size())
            throw std::invalid_argument("Array: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
    }

    static Array zeros(Shape s) {
        std::size_t n = num_elements(s);
        return Array(std::move(s), std::vector<double>(n, 0.0));
    }
    static Array full(Shape s, double v) {
        std::size_t n = num_elements(s);
        return Array(std::move(s), std::vector<double>(n, v));
    }
    static Array scalar(double v) { return Array({1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // 2-D accessors; rank-1 arrays act as a single row.
    std::size_t rows() const { return rank() == 1 ? 1 : shape[0]; }
    std::size_t cols() const { return rank() == 1 ? shape[0] : shape[rank() - 1]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Array& other) const { return shape == other.shape; }
};

inline bool all_finite(const Array& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double l2_norm(const Array& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

// Euclidean distance between two equally shaped arrays, positions flattened.
inline double euclidean_distance(const Array& a, const Array& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("euclidean_distance: size mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double max_abs_diff(const Array& a, const Array& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_diff(const Array& a, const Array& b, double floor = 1e-8) {
    if (a.size() != b.size())
        throw std::invalid_argument("max_rel_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double den = std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
        m = std::max(m, std::abs(a.data[i] - b.data[i]) / den);
    }
    return m;
}

}  // namespace skipt
