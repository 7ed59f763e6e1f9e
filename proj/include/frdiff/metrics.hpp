#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "spectral.hpp"
#include "tensor.hpp"

namespace frdiff {

/// +inf when the images are identical.
template <typename T>
double psnr(const Tensor3<T>& x, const Tensor3<T>& y, double peak = 1.0) {
    x.require_same(y, "psnr");
    if (x.size() == 0) throw DataError("psnr: empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

/// Rec.601 luma for RGB; single-channel input is used as is.
template <typename T>
Tensor3<double> luminance(const Tensor3<T>& x) {
    Tensor3<double> y(1, x.height(), x.width());
    if (x.channels() == 1) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
        return y;
    }
    if (x.channels() != 3) throw ShapeError(concat("luminance: expected 1 or 3 channels, got ", x.shape_str()));
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = 0.299 * x.channel(0)[i] + 0.587 * x.channel(1)[i] + 0.114 * x.channel(2)[i];
    return y;
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double peak = 1.0;
    double k1 = 0.01, k2 = 0.03;
};

/// Mean SSIM over all valid (fully inside) Gaussian windows of the luma.
template <typename T>
double ssim(const Tensor3<T>& x, const Tensor3<T>& y, const SsimParams& p = {}) {
    x.require_same(y, "ssim");
    const int n = p.window;
    if (x.height() < n || x.width() < n)
        throw DataError(concat("ssim: image ", x.shape_str(), " smaller than the ", n, "x", n, " window"));
    const Tensor3<double> a = luminance(x), b = luminance(y);
    std::vector<double> g(static_cast<std::size_t>(n));
    double gs = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = i - (n - 1) / 2.0;
        g[i] = std::exp(-d * d / (2 * p.sigma * p.sigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;
    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak), c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    const int h = a.height(), w = a.width(), oh = h - n + 1, ow = w - n + 1;

    // Separable filtering of a, b, a^2, b^2, ab.
    auto filter = [&](auto value) {
        std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) s += g[k] * value(yy, xx + k);
                rows[static_cast<std::size_t>(yy) * ow + xx] = s;
            }
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) s += g[k] * rows[static_cast<std::size_t>(yy + k) * ow + xx];
                out[static_cast<std::size_t>(yy) * ow + xx] = s;
            }
        return out;
    };
    const auto mu_a = filter([&](int r, int c) { return a(0, r, c); });
    const auto mu_b = filter([&](int r, int c) { return b(0, r, c); });
    const auto e_aa = filter([&](int r, int c) { return a(0, r, c) * a(0, r, c); });
    const auto e_bb = filter([&](int r, int c) { return b(0, r, c) * b(0, r, c); });
    const auto e_ab = filter([&](int r, int c) { return a(0, r, c) * b(0, r, c); });
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

/// Per-pixel min over channels and a patch x patch window; the window is clipped at the
/// borders (equivalent to replicated edges for a min filter). Values are clamped to [0,1].
template <typename T>
Tensor3<double> dark_channel(const Tensor3<T>& img, int patch = 15) {
    if (patch < 1 || patch % 2 == 0) throw DataError(concat("dark_channel: patch must be odd and >= 1, got ", patch));
    if (patch > img.height() || patch > img.width())
        throw DataError(concat("dark_channel: patch ", patch, " larger than image ", img.shape_str()));
    const int h = img.height(), w = img.width(), r = patch / 2;
    Tensor3<double> cmin(1, h, w, 1.0);
    for (int c = 0; c < img.channels(); ++c)
        for (std::size_t i = 0; i < cmin.size(); ++i)
            cmin[i] = std::min(cmin[i], std::clamp(static_cast<double>(img.channel(c)[i]), 0.0, 1.0));
    Tensor3<double> rows(1, h, w), out(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = 1.0;
            for (int k = std::max(0, x - r); k <= std::min(w - 1, x + r); ++k) m = std::min(m, cmin(0, y, k));
            rows(0, y, x) = m;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = 1.0;
            for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k) m = std::min(m, rows(0, k, x));
            out(0, y, x) = m;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Amplitude-swap dark-channel experiment
// ---------------------------------------------------------------------------

constexpr int kHistBins = 16;  // 16 intensity levels per bin on the 8-bit scale
constexpr int kLowIntensity = 25;
constexpr double kMatchTolerance = 1e-9;

using Histogram = std::array<long long, kHistBins>;

inline int to_level(double v) { return static_cast<int>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)); }

inline void accumulate_histogram(const Tensor3<double>& dc, Histogram& hist, long long& below) {
    for (double v : dc.values()) {
        const int level = to_level(v);
        ++hist[static_cast<std::size_t>(std::min(level / 16, kHistBins - 1))];
        if (level < kLowIntensity) ++below;
    }
}

struct SwapPairRow {
    std::string name;
    double dc_hazy = 0, dc_clear = 0, dc_synclear = 0;
    bool closer = false;
};

struct SwapExperimentReport {
    std::vector<SwapPairRow> rows;
    bool with_synclear = true;
    Histogram hist_hazy{}, hist_clear{}, hist_synclear{};
    long long below_hazy = 0, below_clear = 0, below_synclear = 0;
    long long pixels = 0;  // per population

    double closeness_fraction() const {
        if (rows.empty()) return 0.0;
        long long k = 0;
        for (const auto& r : rows) k += r.closer;
        return static_cast<double>(k) / static_cast<double>(rows.size());
    }
    double below_fraction(long long count) const { return pixels ? static_cast<double>(count) / pixels : 0.0; }
};

/// For each hazy/clear pair builds SynClear (clear amplitude, hazy phase) and compares
/// mean dark channels and pooled dark-channel histograms.
template <typename T>
SwapExperimentReport swap_experiment(const std::vector<Tensor3<T>>& hazy, const std::vector<Tensor3<T>>& clear,
                                     int patch = 15, bool with_synclear = true,
                                     const std::vector<std::string>& names = {}) {
    if (hazy.empty() || clear.empty()) throw DataError("swap_experiment: empty image set");
    if (hazy.size() != clear.size())
        throw DataError(concat("swap_experiment: ", hazy.size(), " hazy vs ", clear.size(), " clear images"));
    SwapExperimentReport rep;
    rep.with_synclear = with_synclear;
    for (std::size_t i = 0; i < hazy.size(); ++i) {
        SwapPairRow row;
        row.name = i < names.size() ? names[i] : concat("pair_", i);
        const Tensor3<double> dh = dark_channel(hazy[i], patch), dcl = dark_channel(clear[i], patch);
        row.dc_hazy = mean(dh);
        row.dc_clear = mean(dcl);
        accumulate_histogram(dh, rep.hist_hazy, rep.below_hazy);
        accumulate_histogram(dcl, rep.hist_clear, rep.below_clear);
        rep.pixels += static_cast<long long>(dh.size());
        if (with_synclear) {
            const Tensor3<double> syn = swap_amplitude(hazy[i].template cast<double>(), clear[i].template cast<double>());
            const Tensor3<double> ds = dark_channel(syn, patch);
            row.dc_synclear = mean(ds);
            accumulate_histogram(ds, rep.hist_synclear, rep.below_synclear);
            const double d_syn = std::abs(row.dc_synclear - row.dc_clear);
            // a SynClear that already matches Clear counts, even when Hazy ties it
            row.closer = d_syn < std::abs(row.dc_hazy - row.dc_clear) || d_syn <= kMatchTolerance;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

inline std::string swap_rows_csv(const SwapExperimentReport& rep) {
    std::ostringstream os;
    os.precision(8);
    os << "pair,dc_hazy,dc_clear" << (rep.with_synclear ? ",dc_synclear,synclear_closer" : "") << "\n";
    for (const auto& r : rep.rows) {
        os << r.name << "," << r.dc_hazy << "," << r.dc_clear;
        if (rep.with_synclear) os << "," << r.dc_synclear << "," << (r.closer ? 1 : 0);
        os << "\n";
    }
    return os.str();
}

inline std::string swap_histogram_csv(const SwapExperimentReport& rep) {
    std::ostringstream os;
    os << "bin,level_lo,level_hi,hazy,clear" << (rep.with_synclear ? ",synclear" : "") << "\n";
    for (int b = 0; b < kHistBins; ++b) {
        os << b << "," << b * 16 << "," << b * 16 + 15 << "," << rep.hist_hazy[b] << "," << rep.hist_clear[b];
        if (rep.with_synclear) os << "," << rep.hist_synclear[b];
        os << "\n";
    }
    return os.str();
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

} // namespace frdiff
