#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace advdef {

/// Dense row-major tensor of doubles. Images use the shape convention
/// {channels, rows, cols} with pixel values in [0, 1].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::size_t>(numel_of(shape)) != data.size())
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // {C,H,W} accessors
    double& at3(int c, int i, int j) {
        return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
    }
    double at3(int c, int i, int j) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
    }
    // {H,W} accessors
    double& at2(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double at2(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& v : data) v *= s;
        return *this;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::abs(v));
        return m;
    }
    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline double l2_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double linf_distance(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

/// Number of spatial positions (pixels) that differ between two images,
/// counting a position once even if several channels changed.
inline int l0_pixel_distance(const Tensor& a, const Tensor& b) {
    const int channels = a.shape[0], rows = a.shape[1], cols = a.shape[2];
    int count = 0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            bool differs = false;
            for (int c = 0; c < channels && !differs; ++c)
                differs = a.at3(c, i, j) != b.at3(c, i, j);
            count += differs;
        }
    return count;
}

inline void clip01(Tensor& t) {
    for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

/// Rejects images whose pixels leave [0,1] or whose shape is not {C,H,W}.
inline void validate_image(const Tensor& x) {
    if (x.shape.size() != 3) throw std::invalid_argument("image must have shape {C,H,W}");
    for (double v : x.data)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image pixel outside [0,1]");
}

/// splitmix64 step; used to derive independent RNG streams from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace advdef
