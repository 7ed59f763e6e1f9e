#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "freqdehaze.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace frdiff {

// ---------------------------------------------------------------------------
// Least-squares adversarial loss
// ---------------------------------------------------------------------------

/// mean((real - 1)^2) + mean(fake^2)
template <typename T>
double lsgan_d_loss(const Tensor3<T>& real, const Tensor3<T>& fake, Tensor3<T>* g_real = nullptr,
                    Tensor3<T>* g_fake = nullptr) {
    if (real.size() == 0 || fake.size() == 0) throw DataError("lsgan: empty logits");
    double lr = 0.0, lf = 0.0;
    const double nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
    if (g_real) *g_real = Tensor3<T>(real.channels(), real.height(), real.width());
    if (g_fake) *g_fake = Tensor3<T>(fake.channels(), fake.height(), fake.width());
    for (std::size_t i = 0; i < real.size(); ++i) {
        const double d = static_cast<double>(real[i]) - 1.0;
        lr += d * d;
        if (g_real) (*g_real)[i] = static_cast<T>(2.0 * d / nr);
    }
    for (std::size_t i = 0; i < fake.size(); ++i) {
        const double d = fake[i];
        lf += d * d;
        if (g_fake) (*g_fake)[i] = static_cast<T>(2.0 * d / nf);
    }
    return lr / nr + lf / nf;
}

/// mean((fake - 1)^2)
template <typename T>
double lsgan_g_loss(const Tensor3<T>& fake, Tensor3<T>* g_fake = nullptr) {
    if (fake.size() == 0) throw DataError("lsgan: empty logits");
    const double n = static_cast<double>(fake.size());
    if (g_fake) *g_fake = Tensor3<T>(fake.channels(), fake.height(), fake.width());
    double l = 0.0;
    for (std::size_t i = 0; i < fake.size(); ++i) {
        const double d = static_cast<double>(fake[i]) - 1.0;
        l += d * d;
        if (g_fake) (*g_fake)[i] = static_cast<T>(2.0 * d / n);
    }
    return l / n;
}

/// Patch discriminator: three stride-2 3x3 convs with leaky ReLU, then a 3x3 conv to one
/// logit channel.
template <typename T>
class Discriminator {
public:
    struct Cache {
        std::vector<ConvCache<T>> conv;
        std::vector<Tensor3<T>> pre;
    };

    Discriminator() = default;
    explicit Discriminator(int width) {
        if (width < 1) throw DataError("discriminator: width must be >= 1");
        convs.emplace_back("disc.conv0", 3, width, 3, 2, 1);
        convs.emplace_back("disc.conv1", width, 2 * width, 3, 2, 1);
        convs.emplace_back("disc.conv2", 2 * width, 2 * width, 3, 2, 1);
        convs.emplace_back("disc.out", 2 * width, 1, 3, 1, 1);
    }

    void init(Rng& rng) {
        for (auto& c : convs) c.init(rng);
    }

    Tensor3<T> forward(const Tensor3<T>& img, Cache& cache) const {
        cache.conv.assign(convs.size(), {});
        cache.pre.assign(convs.size(), {});
        Tensor3<T> x = img;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            cache.pre[i] = convs[i].forward(x, cache.conv[i]);
            x = i + 1 < convs.size() ? leaky_relu(cache.pre[i]) : cache.pre[i];
        }
        return x;
    }

    Tensor3<T> forward(const Tensor3<T>& img) const {
        Cache c;
        return forward(img, c);
    }

    /// Accumulates parameter gradients; returns the image gradient.
    Tensor3<T> backward(const Tensor3<T>& g_logits, const Cache& cache) {
        Tensor3<T> g = g_logits;
        for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
            if (i + 1 < static_cast<int>(convs.size())) g = leaky_relu_backward(g, cache.pre[i]);
            g = convs[i].backward(g, cache.conv[i]);
        }
        return g;
    }

    void collect(ParamList<T>& out) {
        for (auto& c : convs) c.collect(out);
    }

    std::vector<Conv2d<T>> convs;
};

// ---------------------------------------------------------------------------
// Patch-wise contrastive loss
// ---------------------------------------------------------------------------

struct NceConfig {
    double tau = 0.07;
    int patches = 256;
    int head_dim = 64;
};

/// -log(exp(s+/tau) / (exp(s+/tau) + sum exp(s-/tau))), evaluated stably.
inline double nce_from_similarities(double s_pos, const std::vector<double>& s_neg, double tau) {
    if (s_neg.empty()) throw DataError("patch_nce: need at least one negative");
    if (!(tau > 0.0)) throw DataError("patch_nce: temperature must be > 0");
    // loss = log(1 + sum exp(d_j)), d_j = (s_j - s+) / tau
    double m = 0.0;
    for (double s : s_neg) m = std::max(m, (s - s_pos) / tau);
    double z = 0.0;
    for (double s : s_neg) z += std::exp((s - s_pos) / tau - m);
    return m == 0.0 ? std::log1p(z) : m + std::log(std::exp(-m) + z);
}

/// Row-major P x D embedding matrix.
template <typename T>
struct Embeddings {
    int rows = 0, dim = 0;
    std::vector<T> data;

    Embeddings() = default;
    Embeddings(int r, int d) : rows(r), dim(d), data(static_cast<std::size_t>(r) * d, T(0)) {}
    T* row(int i) { return data.data() + static_cast<std::size_t>(i) * dim; }
    const T* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

/// InfoNCE where query i's positive is key i and every other key is a negative
/// (K = P - 1). Embeddings are expected L2-normalized, so dot products are cosines.
template <typename T>
double patch_nce_loss(const Embeddings<T>& q, const Embeddings<T>& k, double tau, Embeddings<T>* g_q = nullptr,
                      Embeddings<T>* g_k = nullptr) {
    if (q.rows != k.rows || q.dim != k.dim) throw ShapeError("patch_nce: query/key shape mismatch");
    if (q.rows < 2) throw DataError("patch_nce: need at least one negative (>= 2 patches)");
    if (!(tau > 0.0)) throw DataError("patch_nce: temperature must be > 0");
    const int p = q.rows, d = q.dim;
    if (g_q) *g_q = Embeddings<T>(p, d);
    if (g_k) *g_k = Embeddings<T>(p, d);
    double total = 0.0;
    std::vector<double> logits(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        double m = -1e300;
        for (int j = 0; j < p; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += static_cast<double>(q.row(i)[c]) * k.row(j)[c];
            logits[j] = s / tau;
            m = std::max(m, logits[j]);
        }
        double z = 0.0;
        for (int j = 0; j < p; ++j) z += std::exp(logits[j] - m);
        total += -(logits[i] - m - std::log(z));
        if (!g_q && !g_k) continue;
        for (int j = 0; j < p; ++j) {
            const double gs = (std::exp(logits[j] - m) / z - (i == j ? 1.0 : 0.0)) / (tau * p);
            if (gs == 0.0) continue;
            for (int c = 0; c < d; ++c) {
                if (g_q) g_q->row(i)[c] += static_cast<T>(gs * k.row(j)[c]);
                if (g_k) g_k->row(j)[c] += static_cast<T>(gs * q.row(i)[c]);
            }
        }
    }
    return total / p;
}

/// Two-layer projection head followed by L2 normalization, applied per patch vector.
template <typename T>
class NceHead {
public:
    struct Cache {
        Embeddings<T> input, hidden_pre, projected;
        std::vector<double> norms;
    };

    NceHead() = default;
    NceHead(const std::string& name, int in, int dim) : fc1(name + ".fc1", in, dim), fc2(name + ".fc2", dim, dim) {}

    void init(Rng& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }

    Embeddings<T> forward(const Embeddings<T>& x, Cache& cache) const {
        cache.input = x;
        cache.hidden_pre = Embeddings<T>(x.rows, fc1.out_features());
        cache.projected = Embeddings<T>(x.rows, fc2.out_features());
        cache.norms.assign(static_cast<std::size_t>(x.rows), 0.0);
        Embeddings<T> out(x.rows, fc2.out_features());
        for (int i = 0; i < x.rows; ++i) {
            const auto h = fc1.forward(std::span<const T>(x.row(i), static_cast<std::size_t>(x.dim)));
            std::copy(h.begin(), h.end(), cache.hidden_pre.row(i));
            std::vector<T> a(h);
            for (auto& v : a) v = v > T(0) ? v : static_cast<T>(kLeakySlope) * v;
            const auto u = fc2.forward(a);
            std::copy(u.begin(), u.end(), cache.projected.row(i));
            double n = 0.0;
            for (T v : u) n += static_cast<double>(v) * v;
            n = std::sqrt(n) + 1e-12;
            cache.norms[static_cast<std::size_t>(i)] = n;
            for (int c = 0; c < out.dim; ++c) out.row(i)[c] = static_cast<T>(u[c] / n);
        }
        return out;
    }

    /// Accumulates head gradients; returns gradients w.r.t. the input patch vectors.
    Embeddings<T> backward(const Embeddings<T>& g_out, const Cache& cache) {
        Embeddings<T> g_in(cache.input.rows, cache.input.dim);
        const int dim = cache.projected.dim;
        for (int i = 0; i < g_out.rows; ++i) {
            const double n = cache.norms[static_cast<std::size_t>(i)];
            const T* u = cache.projected.row(i);
            double dotp = 0.0;
            for (int c = 0; c < dim; ++c) dotp += static_cast<double>(g_out.row(i)[c]) * u[c] / n;
            std::vector<T> gu(static_cast<std::size_t>(dim));
            for (int c = 0; c < dim; ++c) gu[c] = static_cast<T>((g_out.row(i)[c] - (u[c] / n) * dotp) / n);
            const T* hp = cache.hidden_pre.row(i);
            std::vector<T> a(hp, hp + cache.hidden_pre.dim);
            for (auto& v : a) v = v > T(0) ? v : static_cast<T>(kLeakySlope) * v;
            std::vector<T> ga = fc2.backward(gu, a);
            for (std::size_t c = 0; c < ga.size(); ++c)
                if (!(hp[c] > T(0))) ga[c] *= static_cast<T>(kLeakySlope);
            const auto gx = fc1.backward(ga, std::span<const T>(cache.input.row(i), static_cast<std::size_t>(cache.input.dim)));
            std::copy(gx.begin(), gx.end(), g_in.row(i));
        }
        return g_in;
    }

    void collect(ParamList<T>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }

    Linear<T> fc1, fc2;
};

/// Random distinct spatial locations (flat indices) on an h x w map.
inline std::vector<int> sample_locations(int h, int w, int count, Rng& rng) {
    std::vector<int> all(static_cast<std::size_t>(h) * w);
    std::iota(all.begin(), all.end(), 0);
    const int n = std::min<int>(count, static_cast<int>(all.size()));
    for (int i = 0; i < n; ++i) {
        const int j = std::uniform_int_distribution<int>(i, static_cast<int>(all.size()) - 1)(rng);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    all.resize(static_cast<std::size_t>(n));
    return all;
}

template <typename T>
Embeddings<T> gather_patches(const Tensor3<T>& f, const std::vector<int>& locs) {
    Embeddings<T> e(static_cast<int>(locs.size()), f.channels());
    for (std::size_t i = 0; i < locs.size(); ++i)
        for (int c = 0; c < f.channels(); ++c) e.row(static_cast<int>(i))[c] = f.channel(c)[locs[i]];
    return e;
}

template <typename T>
void scatter_patches(const Embeddings<T>& g, const std::vector<int>& locs, Tensor3<T>& out) {
    for (std::size_t i = 0; i < locs.size(); ++i)
        for (int c = 0; c < out.channels(); ++c) out.channel(c)[locs[i]] += g.row(static_cast<int>(i))[c];
}

/// PatchNCE between the output image and the hazy input, using the dehazing network's
/// stem activations (conv activation and stem block output) as the two feature layers.
/// Queries come from I_out, keys from I_h at the same locations; gradients flow through
/// both paths.
template <typename T>
struct PatchNce {
    NceConfig cfg;
    std::vector<NceHead<T>> heads;

    PatchNce() = default;
    PatchNce(int feature_channels, const NceConfig& c) : cfg(c) {
        if (!(c.tau > 0.0)) throw DataError("patch_nce: temperature must be > 0");
        if (c.patches < 2) throw DataError("patch_nce: need at least 2 patches per image");
        for (int l = 0; l < 2; ++l) heads.emplace_back(concat("nce.head", l), feature_channels, c.head_dim);
    }

    void init(Rng& rng) {
        for (auto& h : heads) h.init(rng);
    }

    void collect(ParamList<T>& out) {
        for (auto& h : heads) h.collect(out);
    }

    static std::pair<Tensor3<T>, Tensor3<T>> layers(const DehazeNet<T>& net, const Tensor3<T>& img, StemCache<T>& cache) {
        Tensor3<T> out = net.stem(img, cache);
        return {leaky_relu(cache.conv_out), std::move(out)};
    }

    /// Loss averaged over the two layers. With `g_out` non-null, accumulates head and
    /// stem gradients (times `scale`) and adds d loss / d I_out into *g_out.
    double loss(DehazeNet<T>& net, const Tensor3<T>& out_img, const Tensor3<T>& hazy, Rng& rng,
                Tensor3<T>* g_out = nullptr, double scale = 1.0) {
        StemCache<T> qc, kc;
        const auto [q0, q1] = layers(net, out_img, qc);
        const auto [k0, k1] = layers(net, hazy, kc);
        const std::vector<int> locs = sample_locations(q0.height(), q0.width(), cfg.patches, rng);
        const Tensor3<T>* qs[2] = {&q0, &q1};
        const Tensor3<T>* ks[2] = {&k0, &k1};
        Tensor3<T> gq_layer[2], gk_layer[2];
        double total = 0.0;
        for (int l = 0; l < 2; ++l) {
            typename NceHead<T>::Cache hq, hk;
            const Embeddings<T> eq = heads[l].forward(gather_patches(*qs[l], locs), hq);
            const Embeddings<T> ek = heads[l].forward(gather_patches(*ks[l], locs), hk);
            Embeddings<T> geq, gek;
            total += 0.5 * patch_nce_loss(eq, ek, cfg.tau, g_out ? &geq : nullptr, g_out ? &gek : nullptr);
            if (!g_out) continue;
            for (auto& v : geq.data) v *= static_cast<T>(0.5 * scale);
            for (auto& v : gek.data) v *= static_cast<T>(0.5 * scale);
            gq_layer[l] = Tensor3<T>(qs[l]->channels(), qs[l]->height(), qs[l]->width());
            gk_layer[l] = Tensor3<T>(ks[l]->channels(), ks[l]->height(), ks[l]->width());
            scatter_patches(heads[l].backward(geq, hq), locs, gq_layer[l]);
            scatter_patches(heads[l].backward(gek, hk), locs, gk_layer[l]);
        }
        if (g_out) {
            *g_out += net.stem_backward(&gq_layer[0], gq_layer[1], qc);
            net.stem_backward(&gk_layer[0], gk_layer[1], kc);
        }
        return total;
    }
};

// ---------------------------------------------------------------------------
// Stage losses
// ---------------------------------------------------------------------------

struct LossWeights {
    double gan = 1.0;
    double nce = 1.0;
    double diff = 1.0;
};

struct LossTerms {
    double gan = 0.0;
    double nce = 0.0;
    double diff = 0.0;

    double stage1(const LossWeights& w) const { return w.gan * gan + w.nce * nce; }
    double stage2(const LossWeights& w) const { return stage1(w) + w.diff * diff; }
};

} // namespace frdiff
