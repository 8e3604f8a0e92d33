#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "crib/errors.hpp"

namespace crib::fft {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 Cooley-Tukey, in place. inverse=true applies the 1/N
// scaling.
inline void transform(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0) throw InvariantError("fft: empty input");
    if (!is_pow2(n)) throw InvariantError("fft: length must be a power of two");

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }

    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv_n;
    }
}

// Row-major 2D grid of complex values, W x H with both powers of two.
struct Grid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<cplx> data;

    Grid() = default;
    Grid(std::size_t w, std::size_t h) : width(w), height(h), data(w * h) {}

    cplx& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
    const cplx& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
};

inline void transform2d(Grid& g, bool inverse) {
    std::vector<cplx> buf(std::max(g.width, g.height));
    for (std::size_t y = 0; y < g.height; ++y) {
        buf.assign(g.data.begin() + y * g.width, g.data.begin() + (y + 1) * g.width);
        transform(buf, inverse);
        std::copy(buf.begin(), buf.end(), g.data.begin() + y * g.width);
    }
    for (std::size_t x = 0; x < g.width; ++x) {
        buf.resize(g.height);
        for (std::size_t y = 0; y < g.height; ++y) buf[y] = g.at(x, y);
        transform(buf, inverse);
        for (std::size_t y = 0; y < g.height; ++y) g.at(x, y) = buf[y];
    }
}

} // namespace crib::fft
