#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace frdiff {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Linear beta schedule. Steps are 1-based; alpha_bar(0) = 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(int steps, double beta_start, double beta_end) {
        if (steps < 1) throw DataError(concat("schedule: T must be >= 1, got ", steps));
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
            throw DataError(concat("schedule: need 0 < beta_start <= beta_end < 1, got ", beta_start, ", ", beta_end));
        beta_start_ = beta_start;
        beta_end_ = beta_end;
        double prod = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double b = steps == 1 ? beta_start
                                        : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(steps - 1);
            beta_.push_back(b);
            alpha_.push_back(1.0 - b);
            prod *= 1.0 - b;
            alpha_bar_.push_back(prod);
        }
    }

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > steps()) throw DataError(concat("schedule: step ", t, " outside [1, ", steps(), "]"));
        return static_cast<std::size_t>(t - 1);
    }
    std::vector<double> beta_, alpha_, alpha_bar_;
    double beta_start_ = 0, beta_end_ = 0;
};

inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
    return NoiseSchedule(steps, beta_start, beta_end);
}

/// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps; t defaults to T.
template <typename T>
Tensor3<T> forward_diffuse(const Tensor3<T>& z, const NoiseSchedule& s, const Tensor3<T>& noise, int t = -1) {
    z.require_same(noise, "forward_diffuse");
    if (t < 0) t = s.steps();
    const double ab = s.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor3<T> out(z.channels(), z.height(), z.width());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * noise[i];
    return out;
}

/// Reverse-step coefficients: z_{t-1} = a (z_t - b eps_hat) + sigma eps_t.
struct StepCoefficients {
    double a, b, sigma;
};

inline StepCoefficients step_coefficients(const NoiseSchedule& s, int t) {
    const double alpha = s.alpha(t);
    return {1.0 / std::sqrt(alpha), (1.0 - alpha) / std::sqrt(1.0 - s.alpha_bar(t)), t == 1 ? 0.0 : std::sqrt(1.0 - alpha)};
}

/// One reverse step given an estimated noise; at t = 1 the step noise is ignored.
template <typename T>
Tensor3<T> denoise_step(const Tensor3<T>& z_t, const Tensor3<T>& eps_hat, int t, const NoiseSchedule& s,
                        const Tensor3<T>* step_noise = nullptr) {
    z_t.require_same(eps_hat, "denoise_step");
    if (step_noise) z_t.require_same(*step_noise, "denoise_step noise");
    const StepCoefficients k = step_coefficients(s, t);
    Tensor3<T> out(z_t.channels(), z_t.height(), z_t.width());
    for (std::size_t i = 0; i < z_t.size(); ++i) {
        double v = k.a * (static_cast<double>(z_t[i]) - k.b * static_cast<double>(eps_hat[i]));
        if (step_noise && t > 1) v += k.sigma * static_cast<double>((*step_noise)[i]);
        out[i] = static_cast<T>(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser eps_theta(z_t, A_h, t)
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int width = 32;
    int blocks = 5;
    int embed_dim = 16;
};

/// Sinusoidal timestep embedding.
template <typename T>
std::vector<T> timestep_embedding(int t, int dim) {
    std::vector<T> e(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half));
        e[2 * i] = static_cast<T>(std::sin(t * freq));
        e[2 * i + 1] = static_cast<T>(std::cos(t * freq));
    }
    if (dim % 2) e[dim - 1] = static_cast<T>(t);
    return e;
}

/// Conditioning derived from the hazy amplitude; log1p tames the DC bin.
template <typename T>
Tensor3<T> amplitude_condition(const Tensor3<T>& a_h) {
    Tensor3<T> c(a_h.channels(), a_h.height(), a_h.width());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<T>(std::log1p(std::max(0.0, static_cast<double>(a_h[i]))));
    return c;
}

/// in_conv(concat(z_t, cond)) -> lrelu -> ResBlocks with per-block timestep shift ->
/// out_conv (zero-initialized).
template <typename T>
class DenoiserNet {
public:
    struct Cache {
        ConvCache<T> in;
        Tensor3<T> in_pre;
        std::vector<typename ResBlock<T>::Cache> blocks;
        std::vector<T> embedding;
        ConvCache<T> out;
        int t = 0;
    };

    DenoiserNet() = default;
    DenoiserNet(int channels, const DenoiserConfig& cfg) : cfg_(cfg), channels_(channels) {
        if (channels < 1 || cfg.width < 1 || cfg.blocks < 0 || cfg.embed_dim < 2)
            throw DataError("denoiser: invalid configuration");
        in_conv = Conv2d<T>("den.in", 2 * channels, cfg.width, 3, 1, 1);
        for (int b = 0; b < cfg.blocks; ++b) {
            blocks.emplace_back(concat("den.block", b), cfg.width);
            time_proj.emplace_back(concat("den.time", b), cfg.embed_dim, cfg.width);
        }
        out_conv = Conv2d<T>("den.out", cfg.width, channels, 3, 1, 1);
    }

    int channels() const noexcept { return channels_; }
    const DenoiserConfig& config() const noexcept { return cfg_; }

    void init(Rng& rng) {
        in_conv.init(rng);
        for (auto& b : blocks) b.init(rng);
        for (auto& p : time_proj) p.init(rng, 0.5);
        out_conv.zero_init();
    }

    Tensor3<T> forward(const Tensor3<T>& z_t, const Tensor3<T>& cond, int t, int max_t, Cache& cache) const {
        if (t < 1 || t > max_t) throw DataError(concat("denoiser: step ", t, " outside [1, ", max_t, "]"));
        z_t.require_same(cond, "denoiser condition");
        if (z_t.channels() != channels_)
            throw ShapeError(concat("denoiser: expected ", channels_, " channels, got ", z_t.shape_str()));
        cache.t = t;
        cache.embedding = timestep_embedding<T>(t, cfg_.embed_dim);
        cache.blocks.resize(blocks.size());
        cache.in_pre = in_conv.forward(concat_channels(z_t, cond), cache.in);
        Tensor3<T> h = leaky_relu(cache.in_pre);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::vector<T> shift = time_proj[b].forward(cache.embedding);
            h = blocks[b].forward(h, cache.blocks[b], &shift);
        }
        return out_conv.forward(h, cache.out);
    }

    Tensor3<T> forward(const Tensor3<T>& z_t, const Tensor3<T>& cond, int t, int max_t) const {
        Cache cache;
        return forward(z_t, cond, t, max_t, cache);
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. z_t (the condition is
    /// treated as a constant).
    Tensor3<T> backward(const Tensor3<T>& g_eps, const Cache& cache) {
        Tensor3<T> g = out_conv.backward(g_eps, cache.out);
        for (int b = static_cast<int>(blocks.size()) - 1; b >= 0; --b) {
            std::vector<T> g_shift;
            g = blocks[b].backward(g, cache.blocks[b], &g_shift);
            time_proj[b].backward(g_shift, cache.embedding);
        }
        Tensor3<T> g_in = in_conv.backward(leaky_relu_backward(g, cache.in_pre), cache.in);
        return split_channels(g_in, channels_).first;
    }

    void collect(ParamList<T>& out) {
        in_conv.collect(out);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            blocks[b].collect(out);
            time_proj[b].collect(out);
        }
        out_conv.collect(out);
    }

    Conv2d<T> in_conv;
    std::vector<ResBlock<T>> blocks;
    std::vector<Linear<T>> time_proj;
    Conv2d<T> out_conv;

private:
    DenoiserConfig cfg_;
    int channels_ = 0;
};

// ---------------------------------------------------------------------------
// Reverse chain
// ---------------------------------------------------------------------------

/// Step noises for t = T..2 (t = 1 is deterministic), drawn in that order.
template <typename T>
std::vector<Tensor3<T>> draw_step_noises(const Tensor3<T>& like, const NoiseSchedule& s, Rng& rng) {
    std::vector<Tensor3<T>> noises(static_cast<std::size_t>(s.steps()) + 1);
    for (int t = s.steps(); t >= 2; --t) noises[static_cast<std::size_t>(t)] = normal_like(like, rng);
    return noises;
}

template <typename T>
struct ChainCache {
    std::vector<typename DenoiserNet<T>::Cache> steps;  // indexed by t
};

/// Runs T reverse steps from z_T with an arbitrary noise estimator eps(z_t, t).
template <typename T, typename EpsFn>
Tensor3<T> reverse_chain(const Tensor3<T>& z_T, const NoiseSchedule& s, EpsFn&& eps,
                         const std::vector<Tensor3<T>>& step_noises) {
    if (static_cast<int>(step_noises.size()) != s.steps() + 1)
        throw DataError(concat("chain: expected ", s.steps() + 1, " step-noise slots, got ", step_noises.size()));
    Tensor3<T> z = z_T;
    for (int t = s.steps(); t >= 1; --t) {
        const Tensor3<T> eps_hat = eps(z, t);
        const Tensor3<T>& slot = step_noises[static_cast<std::size_t>(t)];
        const Tensor3<T>* noise = t >= 2 && slot.size() ? &slot : nullptr;  // empty slot = zero noise
        z = denoise_step(z, eps_hat, t, s, noise);
    }
    return z;
}

/// Runs T reverse steps from z_T; `step_noises[t]` (t >= 2) supplies the stochastic term.
template <typename T>
Tensor3<T> run_chain(const Tensor3<T>& z_T, const Tensor3<T>& cond, const NoiseSchedule& s, const DenoiserNet<T>& net,
                     const std::vector<Tensor3<T>>& step_noises, ChainCache<T>* cache = nullptr) {
    if (cache) cache->steps.assign(static_cast<std::size_t>(s.steps()) + 1, {});
    return reverse_chain(
        z_T, s,
        [&](const Tensor3<T>& z, int t) {
            typename DenoiserNet<T>::Cache local;
            auto& c = cache ? cache->steps[static_cast<std::size_t>(t)] : local;
            return net.forward(z, cond, t, s.steps(), c);
        },
        step_noises);
}

/// Backward through the unrolled chain; accumulates denoiser gradients and returns the
/// gradient w.r.t. z_T.
template <typename T>
Tensor3<T> chain_backward(const Tensor3<T>& g_z0, const NoiseSchedule& s, DenoiserNet<T>& net,
                          const ChainCache<T>& cache) {
    Tensor3<T> g = g_z0;
    for (int t = 1; t <= s.steps(); ++t) {
        const StepCoefficients k = step_coefficients(s, t);
        Tensor3<T> g_eps = g;
        g_eps *= static_cast<T>(-k.a * k.b);
        Tensor3<T> g_prev = net.backward(g_eps, cache.steps[static_cast<std::size_t>(t)]);
        g *= static_cast<T>(k.a);
        g += g_prev;
    }
    return g;
}

/// Draws z_T ~ N(0, I) and the step noises, then runs the reverse chain.
template <typename T>
Tensor3<T> sample(const Tensor3<T>& cond, const NoiseSchedule& s, const DenoiserNet<T>& net, Rng& rng) {
    Tensor3<T> z_T = normal_like(cond, rng);
    const auto noises = draw_step_noises(cond, s, rng);
    return run_chain(z_T, cond, s, net, noises);
}

/// Mean absolute error; gradient sign(z_hat - z) / N with 0 at ties.
template <typename T>
double diffusion_loss(const Tensor3<T>& z, const Tensor3<T>& z_hat, Tensor3<T>* grad_z_hat = nullptr) {
    z.require_same(z_hat, "diffusion_loss");
    if (z.size() == 0) return 0.0;
    const double n = static_cast<double>(z.size());
    if (grad_z_hat) *grad_z_hat = Tensor3<T>(z.channels(), z.height(), z.width());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = static_cast<double>(z_hat[i]) - static_cast<double>(z[i]);
        s += std::abs(d);
        if (grad_z_hat) (*grad_z_hat)[i] = static_cast<T>(d > 0 ? 1.0 / n : d < 0 ? -1.0 / n : 0.0);
    }
    return s / n;
}

} // namespace frdiff
