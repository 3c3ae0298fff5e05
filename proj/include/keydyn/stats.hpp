#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "keydyn/error.hpp"

namespace keydyn {

// Quantile of a sorted list by linear interpolation at index (n-1)*p.
// This convention is used everywhere quartiles appear (IQR filter,
// equal-frequency binning, quartile target binning).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw EmptyInput("quantile of empty list");
    if (sorted.size() == 1) return sorted[0];
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= sorted.size()) return sorted[lo];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, p);
}

inline double mean_of(std::span<const double> values) {
    if (values.empty()) throw EmptyInput("mean of empty list");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

// Population standard deviation (divide by n).
inline double stddev_pop(std::span<const double> values) {
    const double mu = mean_of(values);
    double s = 0.0;
    for (double v : values) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(values.size()));
}

inline double median_of(std::span<const double> values) {
    std::vector<double> tmp(values.begin(), values.end());
    std::sort(tmp.begin(), tmp.end());
    return quantile_sorted(tmp, 0.5);
}

// Dense row-major matrix of doubles; the one exchange type between the
// feature, preprocessing and model layers.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data.data() + r * cols, cols);
    }
    std::span<double> row(std::size_t r) {
        return std::span<double>(data.data() + r * cols, cols);
    }

    void append_row(std::span<const double> v) {
        if (rows == 0 && cols == 0) cols = v.size();
        if (v.size() != cols) throw DimensionMismatch("appended row has wrong width");
        data.insert(data.end(), v.begin(), v.end());
        ++rows;
    }
    void append_row(std::initializer_list<double> v) {
        append_row(std::span<const double>(v.begin(), v.size()));
    }
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Stable 64-bit mix used wherever a derived seed is needed (per-user,
// per-cell). FNV-1a over the key bytes.
inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& key) {
    std::uint64_t h = 14695981039346656037ull ^ seed;
    for (char c : key) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace keydyn
