#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace frdiff {

/// Leaky-ReLU slope used by every activation in the toolkit.
inline constexpr double kLeakySlope = 0.2;

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Saved forward input of a convolution. Each forward call gets its own cache so
/// one layer can be applied several times per step (e.g. to I_h and to I_out).
template <typename T>
struct ConvCache {
    std::optional<Tensor3<T>> input;
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad,
           bool with_bias = true)
        : weight(name + ".weight", {out_ch, in_ch, kernel, kernel}),
          in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad),
          with_bias_(with_bias) {
        if (in_ch <= 0 || out_ch <= 0 || kernel <= 0)
            throw ShapeError(concat(name, ": invalid conv geometry"));
        if (stride < 1) throw ShapeError(concat(name, ": stride must be >= 1"));
        if (pad < 0) throw ShapeError(concat(name, ": pad must be >= 0"));
        if (with_bias) bias = Param<T>(name + ".bias", {out_ch});
    }

    /// Kaiming fan-in init; biases start at zero.
    void init(Rng& rng, double gain = 1.0) {
        const double fan_in = static_cast<double>(in_ch_) * kernel_ * kernel_;
        std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
        for (auto& w : weight.value) w = static_cast<T>(dist(rng));
        if (with_bias_) std::fill(bias.value.begin(), bias.value.end(), T(0));
    }
    void zero_init() {
        std::fill(weight.value.begin(), weight.value.end(), T(0));
        if (with_bias_) std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    int in_channels() const noexcept { return in_ch_; }
    int out_channels() const noexcept { return out_ch_; }
    int kernel() const noexcept { return kernel_; }
    int stride() const noexcept { return stride_; }
    int pad() const noexcept { return pad_; }
    bool has_bias() const noexcept { return with_bias_; }

    int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

    T& w(int o, int c, int ky, int kx) {
        return weight.value[((o * in_ch_ + c) * kernel_ + ky) * kernel_ + kx];
    }

    Tensor3<T> forward(const Tensor3<T>& x, ConvCache<T>& cache) const {
        Tensor3<T> y = forward(x);
        cache.input = x;
        return y;
    }

    Tensor3<T> forward(const Tensor3<T>& x) const {
        if (x.channels() != in_ch_)
            throw ShapeError(concat(weight.name, ": expected ", in_ch_, " input channels, got ",
                                    x.channels(), " (input ", x.shape_str(), ")"));
        const int oh = out_size(x.height()), ow = out_size(x.width());
        if (oh <= 0 || ow <= 0)
            throw ShapeError(concat(weight.name, ": input ", x.shape_str(), " too small for kernel ",
                                    kernel_));
        Tensor3<T> y(out_ch_, oh, ow);
        for (int o = 0; o < out_ch_; ++o) {
            T* out = y.channel(o);
            if (with_bias_) std::fill(out, out + y.plane(), bias.value[o]);
            for (int c = 0; c < in_ch_; ++c) {
                const T* in = x.channel(c);
                for (int ky = 0; ky < kernel_; ++ky)
                    for (int kx = 0; kx < kernel_; ++kx) {
                        const T wv = weight.value[((o * in_ch_ + c) * kernel_ + ky) * kernel_ + kx];
                        if (wv == T(0)) continue;
                        const auto [x0, x1] = valid_range(kx, x.width(), ow);
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride_ + ky - pad_;
                            if (iy < 0 || iy >= x.height()) continue;
                            const T* irow = in + iy * x.width() + kx - pad_;
                            T* orow = out + oy * ow;
                            if (stride_ == 1) {
                                for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox];
                            } else {
                                for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox * stride_];
                            }
                        }
                    }
            }
        }
        return y;
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    Tensor3<T> backward(const Tensor3<T>& gy, const ConvCache<T>& cache) {
        if (!cache.input) throw DataError(concat(weight.name, ": backward without cached forward"));
        const Tensor3<T>& x = *cache.input;
        const int oh = out_size(x.height()), ow = out_size(x.width());
        if (gy.channels() != out_ch_ || gy.height() != oh || gy.width() != ow)
            throw ShapeError(concat(weight.name, ": grad_out ", gy.shape_str(), " != forward output ",
                                    out_ch_, "x", oh, "x", ow));
        Tensor3<T> gx(x.channels(), x.height(), x.width());
        for (int o = 0; o < out_ch_; ++o) {
            const T* g = gy.channel(o);
            if (with_bias_) {
                double s = 0.0;
                for (std::size_t i = 0; i < gy.plane(); ++i) s += g[i];
                bias.grad[o] += static_cast<T>(s);
            }
            for (int c = 0; c < in_ch_; ++c) {
                const T* in = x.channel(c);
                T* gin = gx.channel(c);
                for (int ky = 0; ky < kernel_; ++ky)
                    for (int kx = 0; kx < kernel_; ++kx) {
                        const std::size_t wi = ((o * in_ch_ + c) * kernel_ + ky) * kernel_ + kx;
                        const T wv = weight.value[wi];
                        const auto [x0, x1] = valid_range(kx, x.width(), ow);
                        T acc = 0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride_ + ky - pad_;
                            if (iy < 0 || iy >= x.height()) continue;
                            const std::ptrdiff_t off = iy * x.width() + kx - pad_;
                            const T* irow = in + off;
                            T* girow = gin + off;
                            const T* grow = g + oy * ow;
                            if (stride_ == 1) {
                                for (int ox = x0; ox < x1; ++ox) {
                                    acc += grow[ox] * irow[ox];
                                    girow[ox] += wv * grow[ox];
                                }
                            } else {
                                for (int ox = x0; ox < x1; ++ox) {
                                    acc += grow[ox] * irow[ox * stride_];
                                    girow[ox * stride_] += wv * grow[ox];
                                }
                            }
                        }
                        weight.grad[wi] += acc;
                    }
            }
        }
        return gx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        if (with_bias_) out.push_back(&bias);
    }

    Param<T> weight;
    Param<T> bias;

private:
    // Output columns whose tap at kernel column kx lands inside [0, in_w).
    std::pair<int, int> valid_range(int kx, int in_w, int ow) const {
        int lo = pad_ - kx;
        int x0 = lo <= 0 ? 0 : (lo + stride_ - 1) / stride_;
        int hi = in_w - 1 + pad_ - kx;
        int x1 = hi < 0 ? 0 : hi / stride_ + 1;
        return {std::min(x0, ow), std::min(x1, ow)};
    }

    int in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
    bool with_bias_ = true;
};

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor3<T> leaky_relu(const Tensor3<T>& x) {
    Tensor3<T> y = x;
    for (auto& v : y.values())
        if (v < T(0)) v *= static_cast<T>(kLeakySlope);
    return y;
}

template <typename T>
Tensor3<T> leaky_relu_backward(const Tensor3<T>& gy, const Tensor3<T>& x) {
    x.require_same(gy, "leaky_relu_backward");
    Tensor3<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i)
        if (x[i] < T(0)) gx[i] *= static_cast<T>(kLeakySlope);
    return gx;
}

// ---------------------------------------------------------------------------
// pooling / softmax
// ---------------------------------------------------------------------------

/// Global average pooling: one mean per channel.
template <typename T>
std::vector<T> gap(const Tensor3<T>& x) {
    if (x.plane() == 0) throw ShapeError("gap: empty spatial extent");
    std::vector<T> out(x.channels());
    for (int c = 0; c < x.channels(); ++c) {
        double s = 0.0;
        const T* p = x.channel(c);
        for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
        out[c] = static_cast<T>(s / static_cast<double>(x.plane()));
    }
    return out;
}

template <typename T>
Tensor3<T> gap_backward(const std::vector<T>& g, int channels, int height, int width) {
    Tensor3<T> gx(channels, height, width);
    const T inv = T(1) / static_cast<T>(gx.plane());
    for (int c = 0; c < channels; ++c) std::fill(gx.channel(c), gx.channel(c) + gx.plane(), g[c] * inv);
    return gx;
}

/// Numerically stable softmax (max subtraction).
template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
    std::vector<T> out(logits.size());
    if (logits.empty()) return out;
    const T m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<T>(std::exp(static_cast<double>(logits[i] - m)));
        s += out[i];
    }
    for (auto& v : out) v = static_cast<T>(v / s);
    return out;
}

/// Gradient w.r.t. logits given the softmax output and upstream gradient.
template <typename T>
std::vector<T> softmax_backward(const std::vector<T>& prob, const std::vector<T>& g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) dot += prob[i] * g[i];
    std::vector<T> out(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) out[i] = static_cast<T>(prob[i] * (g[i] - dot));
    return out;
}

namespace detail {
// Cell i of an n -> m partition covers [floor(i*n/m), ceil((i+1)*n/m)).
inline std::pair<int, int> pool_bounds(int i, int in, int out) {
    const int lo = static_cast<int>((static_cast<long long>(i) * in) / out);
    const int hi = static_cast<int>(((static_cast<long long>(i) + 1) * in + out - 1) / out);
    return {lo, hi};
}
} // namespace detail

template <typename T>
Tensor3<T> adaptive_avg_pool(const Tensor3<T>& x, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0)
        throw ShapeError(concat("adaptive_avg_pool: zero output dims ", out_h, "x", out_w));
    if (out_h > x.height() || out_w > x.width())
        throw ShapeError(concat("adaptive_avg_pool: output ", out_h, "x", out_w,
                                " exceeds input ", x.shape_str()));
    Tensor3<T> y(x.channels(), out_h, out_w);
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            const auto [y0, y1] = detail::pool_bounds(oy, x.height(), out_h);
            for (int ox = 0; ox < out_w; ++ox) {
                const auto [x0, x1] = detail::pool_bounds(ox, x.width(), out_w);
                double s = 0.0;
                for (int iy = y0; iy < y1; ++iy)
                    for (int ix = x0; ix < x1; ++ix) s += x(c, iy, ix);
                y(c, oy, ox) = static_cast<T>(s / ((y1 - y0) * (x1 - x0)));
            }
        }
    return y;
}

template <typename T>
Tensor3<T> adaptive_avg_pool_backward(const Tensor3<T>& gy, int in_h, int in_w) {
    Tensor3<T> gx(gy.channels(), in_h, in_w);
    for (int c = 0; c < gy.channels(); ++c)
        for (int oy = 0; oy < gy.height(); ++oy) {
            const auto [y0, y1] = detail::pool_bounds(oy, in_h, gy.height());
            for (int ox = 0; ox < gy.width(); ++ox) {
                const auto [x0, x1] = detail::pool_bounds(ox, in_w, gy.width());
                const T share = gy(c, oy, ox) / static_cast<T>((y1 - y0) * (x1 - x0));
                for (int iy = y0; iy < y1; ++iy)
                    for (int ix = x0; ix < x1; ++ix) gx(c, iy, ix) += share;
            }
        }
    return gx;
}

/// Nearest-neighbour upsampling to an explicit target size.
template <typename T>
Tensor3<T> upsample_nearest(const Tensor3<T>& x, int out_h, int out_w) {
    Tensor3<T> y(x.channels(), out_h, out_w);
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * x.height() / out_h;
            for (int ox = 0; ox < out_w; ++ox) y(c, oy, ox) = x(c, iy, ox * x.width() / out_w);
        }
    return y;
}

template <typename T>
Tensor3<T> upsample_nearest_backward(const Tensor3<T>& gy, int in_h, int in_w) {
    Tensor3<T> gx(gy.channels(), in_h, in_w);
    for (int c = 0; c < gy.channels(); ++c)
        for (int oy = 0; oy < gy.height(); ++oy) {
            const int iy = oy * in_h / gy.height();
            for (int ox = 0; ox < gy.width(); ++ox) gx(c, iy, ox * in_w / gy.width()) += gy(c, oy, ox);
        }
    return gx;
}

// ---------------------------------------------------------------------------
// dense layer
// ---------------------------------------------------------------------------

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out)
        : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

    void init(Rng& rng, double gain = 1.0) {
        std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / in_));
        for (auto& w : weight.value) w = static_cast<T>(dist(rng));
        std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }

    std::vector<T> forward(std::span<const T> x) const {
        if (static_cast<int>(x.size()) != in_)
            throw ShapeError(concat(weight.name, ": expected ", in_, " features, got ", x.size()));
        std::vector<T> y(bias.value);
        for (int o = 0; o < out_; ++o) {
            const T* row = weight.value.data() + static_cast<std::size_t>(o) * in_;
            T acc = 0;
            for (int i = 0; i < in_; ++i) acc += row[i] * x[i];
            y[o] += acc;
        }
        return y;
    }

    std::vector<T> backward(std::span<const T> gy, std::span<const T> x) {
        std::vector<T> gx(in_, T(0));
        for (int o = 0; o < out_; ++o) {
            const T* row = weight.value.data() + static_cast<std::size_t>(o) * in_;
            T* grow = weight.grad.data() + static_cast<std::size_t>(o) * in_;
            bias.grad[o] += gy[o];
            for (int i = 0; i < in_; ++i) {
                grow[i] += gy[o] * x[i];
                gx[i] += gy[o] * row[i];
            }
        }
        return gx;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param<T> weight;
    Param<T> bias;

private:
    int in_ = 0, out_ = 0;
};

// ---------------------------------------------------------------------------
// residual block
// ---------------------------------------------------------------------------

/// x + conv2(lrelu(conv1(x) + shift)), 3x3 same-size convs. `shift` is an optional
/// per-channel additive term (the denoiser injects its timestep embedding there).
template <typename T>
class ResBlock {
public:
    struct Cache {
        ConvCache<T> c1, c2;
        Tensor3<T> pre;  // conv1 output + shift, pre-activation
    };

    ResBlock() = default;
    ResBlock(const std::string& name, int channels)
        : conv1(name + ".conv1", channels, channels, 3, 1, 1),
          conv2(name + ".conv2", channels, channels, 3, 1, 1), channels_(channels) {}

    void init(Rng& rng, double residual_gain = 0.5) {
        conv1.init(rng);
        conv2.init(rng, residual_gain);
    }

    int channels() const noexcept { return channels_; }

    Tensor3<T> forward(const Tensor3<T>& x, Cache& cache, const std::vector<T>* shift = nullptr) const {
        cache.pre = conv1.forward(x, cache.c1);
        if (shift) {
            for (int c = 0; c < channels_; ++c) {
                T* p = cache.pre.channel(c);
                for (std::size_t i = 0; i < cache.pre.plane(); ++i) p[i] += (*shift)[c];
            }
        }
        Tensor3<T> y = conv2.forward(leaky_relu(cache.pre), cache.c2);
        y += x;
        return y;
    }

    /// Returns grad w.r.t. x; if `shift_grad` is non-null it receives the shift gradient.
    Tensor3<T> backward(const Tensor3<T>& gy, const Cache& cache, std::vector<T>* shift_grad = nullptr) {
        Tensor3<T> ga = conv2.backward(gy, cache.c2);
        Tensor3<T> gpre = leaky_relu_backward(ga, cache.pre);
        if (shift_grad) {
            shift_grad->assign(channels_, T(0));
            for (int c = 0; c < channels_; ++c) {
                double s = 0.0;
                const T* p = gpre.channel(c);
                for (std::size_t i = 0; i < gpre.plane(); ++i) s += p[i];
                (*shift_grad)[c] = static_cast<T>(s);
            }
        }
        Tensor3<T> gx = conv1.backward(gpre, cache.c1);
        gx += gy;
        return gx;
    }

    void collect(ParamList<T>& out) {
        conv1.collect(out);
        conv2.collect(out);
    }

    Conv2d<T> conv1, conv2;

private:
    int channels_ = 0;
};

} // namespace frdiff
