#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

namespace frdiff::fft {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// In-place iterative radix-2 transform; sign = -1 forward, +1 inverse (unnormalized).
inline void radix2(std::vector<cplx>& a, int sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const std::size_t half = len / 2;
        std::vector<cplx> tw(half);
        for (std::size_t k = 0; k < half; ++k) tw[k] = std::polar(1.0, ang * static_cast<double>(k));
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < half; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + half] * tw[k];
                a[i + k] = u + v;
                a[i + k + half] = u - v;
            }
    }
}

/// Bluestein chirp-z transform for arbitrary lengths, built on radix2.
inline void bluestein(std::vector<cplx>& a, int sign) {
    const std::size_t n = a.size();
    const std::size_t m = next_pow2(2 * n - 1);
    std::vector<cplx> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large n.
        const std::size_t k2 = (k * k) % (2 * n);
        chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n));
    }
    std::vector<cplx> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    radix2(x, -1);
    radix2(y, -1);
    for (std::size_t i = 0; i < m; ++i) x[i] *= y[i];
    radix2(x, +1);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv * chirp[k];
}

/// Unnormalized 1-D DFT of any length.
inline void transform(std::vector<cplx>& a, int sign) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        radix2(a, sign);
    else
        bluestein(a, sign);
}

/// Unnormalized 2-D DFT of one h x w plane stored row-major.
inline void transform2d(std::vector<cplx>& plane, int h, int w, int sign) {
    std::vector<cplx> line(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) line[x] = plane[static_cast<std::size_t>(y) * w + x];
        transform(line, sign);
        for (int x = 0; x < w; ++x) plane[static_cast<std::size_t>(y) * w + x] = line[x];
    }
    line.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line[y] = plane[static_cast<std::size_t>(y) * w + x];
        transform(line, sign);
        for (int y = 0; y < h; ++y) plane[static_cast<std::size_t>(y) * w + x] = line[y];
    }
}

} // namespace frdiff::fft
