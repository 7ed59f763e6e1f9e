#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "layers.hpp"
#include "spectral.hpp"

namespace frdiff {

// ---------------------------------------------------------------------------
// Amplitude residual encoder (parameter free)
// ---------------------------------------------------------------------------

struct AmplitudeStats {
    double mean = 0.0;
    double std = 0.0;  // population convention
};

/// Lower bound on the hazy amplitude spread accepted by align_amplitude.
inline constexpr double kSigmaFloor = 1e-8;

enum class StatsMode { global, per_channel };

namespace detail {
template <typename T>
AmplitudeStats stats_of(const T* p, std::size_t n) {
    if (n == 0) throw DataError("amplitude_stats: empty amplitude array");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    const double mu = s / static_cast<double>(n);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) q += (p[i] - mu) * (p[i] - mu);
    return {mu, std::sqrt(q / static_cast<double>(n))};
}
} // namespace detail

/// Mean and population standard deviation over every entry of the C x H' x W' array.
template <typename T>
AmplitudeStats amplitude_stats(const Tensor3<T>& a) {
    return detail::stats_of(a.values().data(), a.size());
}

/// Affine distribution alignment sigma_c / sigma_h * (A_h - mu_h) + mu_c.
template <typename T>
Tensor3<T> align_amplitude(const Tensor3<T>& a_h, const AmplitudeStats& sh, const AmplitudeStats& sc) {
    if (!(sh.std > kSigmaFloor))
        throw NumericError(concat("align_amplitude: source std ", sh.std, " below floor ", kSigmaFloor,
                                  " (degenerate constant spectrum)"));
    if (sh.mean == sc.mean && sh.std == sc.std) return a_h;
    const double scale = sc.std / sh.std;
    Tensor3<T> out = a_h;
    for (auto& v : out.values()) v = static_cast<T>(scale * (v - sh.mean) + sc.mean);
    return out;
}

namespace detail {
// Residual over one contiguous block. A degenerate (constant) source maps onto the
// target mean, the sigma_h -> 0 limit of the floored alignment, instead of failing.
template <typename T>
void residual_block(const T* ah, const T* ac, T* z, std::size_t n) {
    const AmplitudeStats sh = stats_of(ah, n);
    const AmplitudeStats sc = stats_of(ac, n);
    if (sh.mean == sc.mean && sh.std == sc.std) {
        std::fill(z, z + n, T(0));
        return;
    }
    const double scale = sh.std > kSigmaFloor ? sc.std / sh.std : 0.0;
    for (std::size_t i = 0; i < n; ++i)
        z[i] = static_cast<T>((scale * (ah[i] - sh.mean) + sc.mean) - ah[i]);
}
} // namespace detail

/// z = align(A_h; stats(A_h); stats(A_c)) - A_h.
template <typename T>
Tensor3<T> amplitude_residual(const Tensor3<T>& a_h, const Tensor3<T>& a_c,
                              StatsMode mode = StatsMode::global) {
    a_h.require_same(a_c, "amplitude_residual");
    Tensor3<T> z(a_h.channels(), a_h.height(), a_h.width());
    if (mode == StatsMode::global) {
        detail::residual_block(a_h.values().data(), a_c.values().data(), z.values().data(), a_h.size());
    } else {
        for (int c = 0; c < a_h.channels(); ++c)
            detail::residual_block(a_h.channel(c), a_c.channel(c), z.channel(c), a_h.plane());
    }
    return z;
}

// ---------------------------------------------------------------------------
// Phase correction module
// ---------------------------------------------------------------------------

/// P_out = P + Conv(softmax(gap(z)) * P) with a 1x1 channel-mixing conv.
template <typename T>
class PhaseCorrection {
public:
    struct Cache {
        std::vector<T> omega;
        Tensor3<T> phase;
        ConvCache<T> conv;
    };

    PhaseCorrection() = default;
    PhaseCorrection(const std::string& name, int channels)
        : conv(name + ".conv", channels, channels, 1, 1, 0, /*with_bias=*/false) {}

    Tensor3<T> forward(const Tensor3<T>& phase, const Tensor3<T>& z, Cache& cache) const {
        if (phase.channels() != z.channels())
            throw ShapeError(concat("pcm: phase ", phase.shape_str(), " vs residual ", z.shape_str()));
        cache.omega = softmax(gap(z));
        cache.phase = phase;
        Tensor3<T> weighted = phase;
        for (int c = 0; c < phase.channels(); ++c) {
            T* p = weighted.channel(c);
            for (std::size_t i = 0; i < weighted.plane(); ++i) p[i] *= cache.omega[c];
        }
        Tensor3<T> out = conv.forward(weighted, cache.conv);
        out += phase;
        return out;
    }

    /// Returns {grad phase, grad z}.
    std::pair<Tensor3<T>, Tensor3<T>> backward(const Tensor3<T>& g, const Cache& cache, int zh, int zw) {
        Tensor3<T> gw = conv.backward(g, cache.conv);
        Tensor3<T> gp = g;
        std::vector<T> gomega(cache.omega.size(), T(0));
        for (int c = 0; c < g.channels(); ++c) {
            const T* a = gw.channel(c);
            const T* p = cache.phase.channel(c);
            T* out = gp.channel(c);
            double s = 0.0;
            for (std::size_t i = 0; i < g.plane(); ++i) {
                out[i] += a[i] * cache.omega[c];
                s += static_cast<double>(a[i]) * p[i];
            }
            gomega[c] = static_cast<T>(s);
        }
        std::vector<T> glogits = softmax_backward(cache.omega, gomega);
        return {std::move(gp), gap_backward(glogits, g.channels(), zh, zw)};
    }

    void collect(ParamList<T>& out) { conv.collect(out); }

    Conv2d<T> conv;
};

// ---------------------------------------------------------------------------
// Frequency compensation layer
// ---------------------------------------------------------------------------

/// Edits a feature map's spectrum: amplitude += z (clamped at 0), phase corrected by
/// PCM, then back to the spatial domain. The edited spectrum is projected onto its
/// conjugate-symmetric part before the inverse transform.
template <typename T>
class FreqCompensation {
public:
    struct Cache {
        ComplexSpectrum<T> spec;
        AmpPhase<T> ap;
        Tensor3<T> amp_sum;  // A + z before clamping
        Tensor3<T> amp_out;
        Tensor3<T> phase_out;
        typename PhaseCorrection<T>::Cache pcm;
        double imag_residue = 0.0;
    };

    FreqCompensation() = default;
    FreqCompensation(const std::string& name, int channels) : pcm(name + ".pcm", channels) {}

    Tensor3<T> forward(const Tensor3<T>& x, const Tensor3<T>& z, Cache& cache) const {
        if (!x.same_shape(z))
            throw ShapeError(concat("fcl: features ", x.shape_str(), " vs residual ", z.shape_str()));
        cache.spec = dft2(x);
        cache.ap = decompose(cache.spec);
        cache.amp_sum = cache.ap.amplitude + z;
        cache.amp_out = cache.amp_sum;
        for (auto& v : cache.amp_out.values()) v = std::max(v, T(0));
        cache.phase_out = pcm.forward(cache.ap.phase, z, cache.pcm);
        ComplexSpectrum<T> edited = recompose(AmpPhase<T>{cache.amp_out, cache.phase_out});
        cache.imag_residue = symmetrize(edited);
        return idft2(edited);
    }

    /// Returns {grad features, grad z}.
    std::pair<Tensor3<T>, Tensor3<T>> backward(const Tensor3<T>& gy, const Cache& cache) {
        const int c = gy.channels(), h = gy.height(), w = gy.width();
        const T inv_n = T(1) / static_cast<T>(gy.plane());
        ComplexSpectrum<T> gg = dft2(gy);
        Tensor3<T> g_amp(c, h, w), g_phase(c, h, w);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const T gr = gg.re[i] * inv_n, gi = gg.im[i] * inv_n;
            const T cp = std::cos(cache.phase_out[i]), sp = std::sin(cache.phase_out[i]);
            g_amp[i] = cache.amp_sum[i] > T(0) ? gr * cp + gi * sp : T(0);
            g_phase[i] = cache.amp_out[i] * (gi * cp - gr * sp);
        }
        auto [g_phase_in, gz] = pcm.backward(g_phase, cache.pcm, h, w);
        gz += g_amp;
        ComplexSpectrum<T> gf(c, h, w);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const T a = cache.ap.amplitude[i];
            if (!(a > T(1e-12))) continue;  // subgradient 0 at zero bins
            const T fr = cache.spec.re[i], fi = cache.spec.im[i];
            gf.re[i] = g_amp[i] * fr / a - g_phase_in[i] * fi / (a * a);
            gf.im[i] = g_amp[i] * fi / a + g_phase_in[i] * fr / (a * a);
        }
        ComplexSpectrum<T> back = idft2_complex(gf);
        Tensor3<T> gx = std::move(back.re);
        gx *= static_cast<T>(gy.plane());
        return {std::move(gx), std::move(gz)};
    }

    void collect(ParamList<T>& out) { pcm.collect(out); }

    PhaseCorrection<T> pcm;
};

// ---------------------------------------------------------------------------
// Dehazing network
// ---------------------------------------------------------------------------

struct NetworkConfig {
    int base_channels = 64;
    std::vector<int> blocks_per_scale{4, 4, 6, 10};
    bool fcl_enabled = true;  // false gives the plain UNet (no spectral edit)

    int scales() const { return static_cast<int>(blocks_per_scale.size()); }
};

/// Spatial adaptive pooling of the full-resolution residual to a coarser spectral grid.
/// The pooled values are scaled by the area ratio so they stay commensurate with the
/// coarser map's amplitudes (a DC bin sums over H*W pixels).
template <typename T>
Tensor3<T> sap(const Tensor3<T>& z, int h, int w) {
    if (h == z.height() && w == z.width()) return z;
    Tensor3<T> out = adaptive_avg_pool(z, h, w);
    out *= static_cast<T>(static_cast<double>(h) * w / (static_cast<double>(z.height()) * z.width()));
    return out;
}

template <typename T>
Tensor3<T> sap_backward(const Tensor3<T>& g, int full_h, int full_w) {
    if (g.height() == full_h && g.width() == full_w) return g;
    Tensor3<T> out = adaptive_avg_pool_backward(g, full_h, full_w);
    out *= static_cast<T>(static_cast<double>(g.height()) * g.width() /
                          (static_cast<double>(full_h) * full_w));
    return out;
}

template <typename T>
struct StemCache {
    ConvCache<T> conv;
    Tensor3<T> conv_out;
    typename ResBlock<T>::Cache block;
};

template <typename T>
class DehazeNet {
public:
    struct Cache {
        Tensor3<T> input;
        StemCache<T> stem;
        std::vector<ConvCache<T>> down;
        std::vector<Tensor3<T>> down_pre;  // pre-activation of each downsample
        std::vector<typename FreqCompensation<T>::Cache> fcl;
        std::vector<std::vector<typename ResBlock<T>::Cache>> enc;
        std::vector<Tensor3<T>> skips;
        std::vector<ConvCache<T>> up;
        std::vector<typename ResBlock<T>::Cache> dec;
        ConvCache<T> head;
        Tensor3<T> pre_clamp;
        int z_h = 0, z_w = 0;
    };

    struct Grads {
        Tensor3<T> image;
        Tensor3<T> z;
    };

    DehazeNet() = default;
    explicit DehazeNet(const NetworkConfig& cfg) : cfg_(cfg) {
        if (cfg.scales() < 1) throw DataError("network config: need at least one scale");
        const int c = cfg.base_channels;
        if (c < 1) throw DataError("network config: base_channels must be >= 1");
        stem_conv = Conv2d<T>("net.stem.conv", 3, c, 3, 1, 1);
        stem_block = ResBlock<T>("net.stem.block", c);
        for (int s = 0; s < cfg.scales(); ++s) {
            if (s > 0) down.emplace_back(concat("net.down", s), c, c, 3, 2, 1);
            fcl.emplace_back(concat("net.fcl", s), c);
            std::vector<ResBlock<T>> stack;
            for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
                stack.emplace_back(concat("net.enc", s, ".block", b), c);
            enc.push_back(std::move(stack));
        }
        for (int s = 0; s + 1 < cfg.scales(); ++s) {
            up.emplace_back(concat("net.up", s), c, c, 1, 1, 0);
            dec.emplace_back(concat("net.dec", s), c);
        }
        head = Conv2d<T>("net.head", c, 3, 3, 1, 1);
    }

    const NetworkConfig& config() const noexcept { return cfg_; }

    /// Kaiming init; PCM convs and the output head start at zero so the untrained
    /// network passes the input straight through.
    void init(Rng& rng) {
        stem_conv.init(rng);
        stem_block.init(rng);
        for (auto& d : down) d.init(rng);
        for (auto& f : fcl) f.pcm.conv.zero_init();
        for (auto& stack : enc)
            for (auto& b : stack) b.init(rng);
        for (auto& u : up) u.init(rng, 0.5);
        for (auto& d : dec) d.init(rng);
        head.zero_init();
    }

    /// Convolution + basic block; the features whose spectrum feeds the residual encoder.
    Tensor3<T> stem(const Tensor3<T>& img, StemCache<T>& cache) const {
        if (img.channels() != 3) throw ShapeError(concat("dehaze net expects 3 channels, got ", img.shape_str()));
        cache.conv_out = stem_conv.forward(img, cache.conv);
        return stem_block.forward(leaky_relu(cache.conv_out), cache.block);
    }

    /// Backward through the stem given gradients on the conv activation and block output.
    Tensor3<T> stem_backward(const Tensor3<T>* g_act, const Tensor3<T>& g_out, const StemCache<T>& cache) {
        Tensor3<T> g = stem_block.backward(g_out, cache.block);
        if (g_act) g += *g_act;
        return stem_conv.backward(leaky_relu_backward(g, cache.conv_out), cache.conv);
    }

    /// Features plus their per-channel amplitude/phase.
    std::pair<Tensor3<T>, AmpPhase<T>> encode_features(const Tensor3<T>& img) const {
        StemCache<T> cache;
        Tensor3<T> f = stem(img, cache);
        AmpPhase<T> ap = amp_phase(f);
        return {std::move(f), std::move(ap)};
    }

    Tensor3<T> forward(const Tensor3<T>& img, const Tensor3<T>& z, Cache& cache) const {
        const int S = cfg_.scales();
        cache = Cache{};
        cache.input = img;
        cache.down.resize(down.size());
        cache.down_pre.resize(down.size());
        cache.fcl.resize(S);
        cache.enc.resize(S);
        cache.up.resize(up.size());
        cache.dec.resize(dec.size());
        Tensor3<T> x = stem(img, cache.stem);
        if (!x.same_shape(z) && cfg_.fcl_enabled)
            throw ShapeError(concat("dehaze: residual ", z.shape_str(), " must match features ", x.shape_str()));
        cache.z_h = z.height();
        cache.z_w = z.width();
        for (int s = 0; s < S; ++s) {
            if (s > 0) {
                cache.down_pre[s - 1] = down[s - 1].forward(x, cache.down[s - 1]);
                x = leaky_relu(cache.down_pre[s - 1]);
            }
            if (cfg_.fcl_enabled) x = fcl[s].forward(x, sap(z, x.height(), x.width()), cache.fcl[s]);
            cache.enc[s].resize(enc[s].size());
            for (std::size_t b = 0; b < enc[s].size(); ++b) x = enc[s][b].forward(x, cache.enc[s][b]);
            cache.skips.push_back(x);
        }
        Tensor3<T> d = x;
        for (int s = S - 2; s >= 0; --s) {
            const Tensor3<T>& skip = cache.skips[s];
            Tensor3<T> u = up[s].forward(upsample_nearest(d, skip.height(), skip.width()), cache.up[s]);
            u += skip;
            d = dec[s].forward(u, cache.dec[s]);
        }
        cache.pre_clamp = head.forward(d, cache.head);
        cache.pre_clamp += img;
        Tensor3<T> out = cache.pre_clamp;
        for (auto& v : out.values()) v = std::clamp(v, T(0), T(1));
        return out;
    }

    Tensor3<T> forward(const Tensor3<T>& img, const Tensor3<T>& z) const {
        Cache cache;
        return forward(img, z, cache);
    }

    Grads backward(const Tensor3<T>& g_out, const Cache& cache) {
        const int S = cfg_.scales();
        Tensor3<T> g = g_out;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (cache.pre_clamp[i] < T(0) || cache.pre_clamp[i] > T(1)) g[i] = T(0);
        Tensor3<T> g_img = g;
        Tensor3<T> gd = head.backward(g, cache.head);
        std::vector<Tensor3<T>> g_skip(S);
        for (int s = 0; s <= S - 2; ++s) {
            Tensor3<T> gu = dec[s].backward(gd, cache.dec[s]);
            g_skip[s] = gu;
            Tensor3<T> gup = up[s].backward(gu, cache.up[s]);
            const Tensor3<T>& below = cache.skips[s + 1];
            gd = upsample_nearest_backward(gup, below.height(), below.width());
        }
        Tensor3<T> gz(cache.fcl.empty() ? 0 : cfg_.base_channels, cache.z_h, cache.z_w);
        Tensor3<T> gx = gd;  // gradient flowing into the deepest scale output
        for (int s = S - 1; s >= 0; --s) {
            if (s < S - 1) gx += g_skip[s];
            for (int b = static_cast<int>(enc[s].size()) - 1; b >= 0; --b)
                gx = enc[s][b].backward(gx, cache.enc[s][b]);
            if (cfg_.fcl_enabled) {
                auto [gf, gzs] = fcl[s].backward(gx, cache.fcl[s]);
                gx = std::move(gf);
                gz += sap_backward(gzs, cache.z_h, cache.z_w);
            }
            if (s > 0) gx = down[s - 1].backward(leaky_relu_backward(gx, cache.down_pre[s - 1]), cache.down[s - 1]);
        }
        g_img += stem_backward(nullptr, gx, cache.stem);
        return {std::move(g_img), std::move(gz)};
    }

    double max_imag_residue(const Cache& cache) const {
        double r = 0.0;
        for (const auto& f : cache.fcl) r = std::max(r, f.imag_residue);
        return r;
    }

    void collect(ParamList<T>& out) {
        stem_conv.collect(out);
        stem_block.collect(out);
        for (auto& d : down) d.collect(out);
        for (auto& f : fcl) f.collect(out);
        for (auto& stack : enc)
            for (auto& b : stack) b.collect(out);
        for (auto& u : up) u.collect(out);
        for (auto& d : dec) d.collect(out);
        head.collect(out);
    }

    Conv2d<T> stem_conv;
    ResBlock<T> stem_block;
    std::vector<Conv2d<T>> down;
    std::vector<FreqCompensation<T>> fcl;
    std::vector<std::vector<ResBlock<T>>> enc;
    std::vector<Conv2d<T>> up;
    std::vector<ResBlock<T>> dec;
    Conv2d<T> head;

private:
    NetworkConfig cfg_;
};

/// Residual z for a hazy/clear image pair, computed from the network's stem features.
template <typename T>
Tensor3<T> residual_from_images(const DehazeNet<T>& net, const Tensor3<T>& hazy, const Tensor3<T>& clear,
                                StatsMode mode = StatsMode::global) {
    auto [fh, aph] = net.encode_features(hazy);
    auto [fc, apc] = net.encode_features(clear);
    return amplitude_residual(aph.amplitude, apc.amplitude, mode);
}

} // namespace frdiff
