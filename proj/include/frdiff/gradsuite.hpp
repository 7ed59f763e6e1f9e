#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "freqdehaze.hpp"
#include "gradcheck.hpp"
#include "layers.hpp"
#include "objectives.hpp"

namespace frdiff {

struct GradSuiteEntry {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t checked = 0;
    std::string worst;
    std::size_t skipped = 0;
    // kink skips must stay rare, or a broken gradient could hide behind them
    bool pass() const { return max_rel_error < tolerance && checked > 0 && skipped * 20 <= checked; }
};

namespace gradsuite {

using D = double;
using Tensor = Tensor3<D>;

inline Tensor rand_t(int c, int h, int w, Rng& rng, double lo = -1, double hi = 1) {
    Tensor t(c, h, w);
    fill_uniform(t, rng, lo, hi);
    return t;
}

inline void randomize(const ParamList<D>& ps, Rng& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto* p : ps)
        for (auto& v : p->value) v = n(rng);
}

inline GradSuiteEntry finish(const std::string& name, std::vector<GradProbe>& ps, const std::function<double()>& loss,
                             double tol, std::size_t per_probe = 48) {
    const auto r = grad_check(ps, loss, 1e-6, per_probe);
    return {name, r.max_rel_error, tol, r.checked, r.worst, r.skipped};
}

inline GradSuiteEntry conv(Rng& rng) {
    Conv2d<D> c("conv", 3, 4, 3, 2, 1);
    c.init(rng);
    randomize({&c.bias}, rng, 0.1);
    Tensor x = rand_t(3, 7, 6, rng);
    ConvCache<D> cache;
    Tensor r = random_weights_like(c.forward(x, cache), rng);
    Tensor gx = c.backward(r, cache);
    std::vector<GradProbe> ps{probe(c.weight), probe(c.bias), probe("x", x, gx)};
    return finish("conv2d (stride 2)", ps, [&] { return dot(c.forward(x), r); }, 1e-5);
}

inline GradSuiteEntry resblock(Rng& rng) {
    ResBlock<D> b("rb", 4);
    b.init(rng, 1.0);
    std::vector<D> shift{0.1, -0.2, 0.3, 0.05};
    Tensor x = rand_t(4, 6, 5, rng);
    ResBlock<D>::Cache cache;
    Tensor r = random_weights_like(b.forward(x, cache, &shift), rng);
    std::vector<D> gs;
    Tensor gx = b.backward(r, cache, &gs);
    ParamList<D> params;
    b.collect(params);
    auto ps = probes(params);
    ps.push_back(probe("x", x, gx));
    ps.push_back({"shift", std::span<double>(shift), gs});
    return finish("resblock + lrelu + shift", ps, [&] {
        ResBlock<D>::Cache c;
        return dot(b.forward(x, c, &shift), r);
    }, 1e-5);
}

inline GradSuiteEntry pooling(Rng& rng) {
    Tensor x = rand_t(2, 7, 9, rng);
    Tensor r1 = rand_t(2, 3, 4, rng), r2 = rand_t(2, 11, 13, rng);
    std::vector<D> rg{0.3, -0.7};
    auto f = [&] {
        const auto g = gap(x);
        return dot(adaptive_avg_pool(x, 3, 4), r1) + dot(upsample_nearest(x, 11, 13), r2) + g[0] * rg[0] + g[1] * rg[1];
    };
    Tensor gx = adaptive_avg_pool_backward(r1, 7, 9);
    gx += upsample_nearest_backward(r2, 7, 9);
    gx += gap_backward(rg, 2, 7, 9);
    std::vector<GradProbe> ps{probe("x", x, gx)};
    return finish("gap / adaptive pool / upsample", ps, f, 1e-5, 128);
}

inline GradSuiteEntry softmax_linear(Rng& rng) {
    Linear<D> l("lin", 5, 4);
    l.init(rng);
    randomize({&l.bias}, rng, 0.2);
    std::vector<D> x{0.3, -0.1, 0.8, -0.5, 0.2}, r{0.5, -1.0, 0.25, 0.7};
    auto f = [&] {
        const auto p = softmax(l.forward(x));
        double s = 0;
        for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * r[i];
        return s;
    };
    const auto logits = l.forward(x);
    const auto p = softmax(logits);
    const auto gl = softmax_backward(p, r);
    const auto gx = l.backward(gl, x);
    std::vector<GradProbe> ps{probe(l.weight), probe(l.bias), {"x", std::span<double>(x), gx}};
    return finish("linear + softmax", ps, f, 1e-5);
}

inline GradSuiteEntry pcm(Rng& rng) {
    PhaseCorrection<D> m("pcm", 3);
    m.conv.init(rng);
    Tensor phase = rand_t(3, 5, 4, rng, -3, 3), z = rand_t(3, 5, 4, rng);
    PhaseCorrection<D>::Cache cache;
    Tensor r = random_weights_like(m.forward(phase, z, cache), rng);
    m.conv.weight.zero_grad();
    auto [gp, gz] = m.backward(r, cache, 5, 4);
    std::vector<GradProbe> ps{probe(m.conv.weight), probe("phase", phase, gp), probe("z", z, gz)};
    return finish("phase correction module", ps, [&] {
        PhaseCorrection<D>::Cache c;
        return dot(m.forward(phase, z, c), r);
    }, 1e-5);
}

inline GradSuiteEntry fcl(Rng& rng) {
    FreqCompensation<D> f("fcl", 3);
    f.pcm.conv.init(rng);
    Tensor x = rand_t(3, 7, 5, rng, 0, 1), z = rand_t(3, 7, 5, rng, 0.05, 0.5);
    FreqCompensation<D>::Cache cache;
    Tensor r = random_weights_like(f.forward(x, z, cache), rng);
    f.pcm.conv.weight.zero_grad();
    auto [gx, gz] = f.backward(r, cache);
    std::vector<GradProbe> ps{probe(f.pcm.conv.weight), probe("x", x, gx), probe("z", z, gz)};
    return finish("frequency compensation layer", ps, [&] {
        FreqCompensation<D>::Cache c;
        return dot(f.forward(x, z, c), r);
    }, 1e-5, 105);
}

inline NetworkConfig tiny_net() {
    NetworkConfig n;
    n.base_channels = 4;
    n.blocks_per_scale = {1, 1};
    return n;
}

inline void wake(DehazeNet<D>& net, Rng& rng) {
    net.init(rng);
    for (auto& f : net.fcl) f.pcm.conv.init(rng);
    std::normal_distribution<double> n(0.0, 0.05);
    for (auto& v : net.head.weight.value) v = n(rng);
}

inline GradSuiteEntry dehaze_net(Rng& rng) {
    DehazeNet<D> net(tiny_net());
    wake(net, rng);
    Tensor img = rand_t(3, 9, 9, rng, 0.3, 0.7), z = rand_t(4, 9, 9, rng, 0.05, 0.3);
    DehazeNet<D>::Cache cache;
    Tensor r = random_weights_like(net.forward(img, z, cache), rng);
    ParamList<D> params;
    net.collect(params);
    zero_grads(params);
    auto g = net.backward(r, cache);
    auto ps = probes(params);
    ps.push_back(probe("image", img, g.image));
    ps.push_back(probe("z", z, g.z));
    return finish("dehazing network (UNet + FCL)", ps, [&] { return dot(net.forward(img, z), r); }, 1e-5, 16);
}

inline GradSuiteEntry discriminator(Rng& rng) {
    Discriminator<D> d(3);
    d.init(rng);
    Tensor img = rand_t(3, 12, 10, rng, 0, 1);
    Discriminator<D>::Cache cache;
    Tensor r = random_weights_like(d.forward(img, cache), rng);
    ParamList<D> params;
    d.collect(params);
    zero_grads(params);
    Tensor gi = d.backward(r, cache);
    auto ps = probes(params);
    ps.push_back(probe("image", img, gi));
    return finish("patch discriminator", ps, [&] { return dot(d.forward(img), r); }, 1e-5, 32);
}

inline GradSuiteEntry lsgan(Rng& rng) {
    Tensor real = rand_t(1, 3, 3, rng), fake = rand_t(1, 3, 3, rng);
    Tensor gr, gf, gg;
    lsgan_d_loss(real, fake, &gr, &gf);
    lsgan_g_loss(fake, &gg);
    std::vector<GradProbe> ps{probe("real", real, gr), probe("fake", fake, gf)};
    auto e1 = finish("lsgan", ps, [&] { return lsgan_d_loss(real, fake); }, 1e-6);
    std::vector<GradProbe> ps2{probe("fake", fake, gg)};
    auto e2 = finish("lsgan", ps2, [&] { return lsgan_g_loss(fake); }, 1e-6);
    e1.name = "lsgan D and G losses";
    e1.checked += e2.checked;
    e1.skipped += e2.skipped;
    if (e2.max_rel_error > e1.max_rel_error) e1.max_rel_error = e2.max_rel_error, e1.worst = e2.worst;
    return e1;
}

inline GradSuiteEntry patch_nce(Rng& rng) {
    NceHead<D> head("head", 4, 6);
    head.init(rng);
    Embeddings<D> fq(5, 4), fk(5, 4);
    std::normal_distribution<double> n(0, 1);
    for (auto& v : fq.data) v = n(rng);
    for (auto& v : fk.data) v = n(rng);
    const double tau = 0.07;
    auto f = [&] {
        NceHead<D>::Cache a, b;
        return patch_nce_loss(head.forward(fq, a), head.forward(fk, b), tau);
    };
    NceHead<D>::Cache cq, ck;
    const auto eq = head.forward(fq, cq);
    const auto ek = head.forward(fk, ck);
    Embeddings<D> gq, gk;
    patch_nce_loss(eq, ek, tau, &gq, &gk);
    ParamList<D> params;
    head.collect(params);
    zero_grads(params);
    const auto gfq = head.backward(gq, cq);
    const auto gfk = head.backward(gk, ck);
    auto ps = probes(params);
    ps.push_back({"query_feats", std::span<double>(fq.data), gfq.data});
    ps.push_back({"key_feats", std::span<double>(fk.data), gfk.data});
    return finish("patchnce + projection head", ps, f, 1e-5);
}

inline GradSuiteEntry stage1_generator(Rng& rng) {
    DehazeNet<D> net(tiny_net());
    wake(net, rng);
    Discriminator<D> disc(3);
    disc.init(rng);
    PatchNce<D> nce(4, NceConfig{0.07, 6, 5});
    nce.init(rng);
    Tensor img = rand_t(3, 9, 9, rng, 0.3, 0.7), z = rand_t(4, 9, 9, rng, 0.05, 0.3);
    const Rng nce_rng = rng;
    auto loss = [&](bool grad, ParamList<D>* params) {
        Rng local = nce_rng;
        DehazeNet<D>::Cache cache;
        Tensor out = net.forward(img, z, cache);
        Discriminator<D>::Cache dc;
        Tensor logits = disc.forward(out, dc);
        Tensor gl;
        double l = lsgan_g_loss(logits, grad ? &gl : nullptr);
        if (!grad) return l + nce.loss(net, out, img, local);
        if (params) zero_grads(*params);
        Tensor g_out = disc.backward(gl, dc);
        l += nce.loss(net, out, img, local, &g_out, 1.0);
        net.backward(g_out, cache);
        return l;
    };
    ParamList<D> params;
    net.collect(params);
    nce.collect(params);
    ParamList<D> dparams;
    disc.collect(dparams);
    zero_grads(dparams);
    loss(true, &params);
    auto ps = probes(params);
    return finish("stage-1 loss (GAN + PatchNCE) through network", ps, [&] { return loss(false, nullptr); }, 1e-5, 12);
}

inline GradSuiteEntry denoiser(Rng& rng) {
    DenoiserNet<D> den(2, DenoiserConfig{4, 2, 6});
    den.init(rng);
    den.out_conv.init(rng);
    Tensor zt = rand_t(2, 5, 4, rng), cond = rand_t(2, 5, 4, rng, 0, 2), eps = rand_t(2, 5, 4, rng);
    DenoiserNet<D>::Cache cache;
    Tensor g;
    Tensor e = den.forward(zt, cond, 3, 4, cache);
    diffusion_loss(eps, e, &g);
    ParamList<D> params;
    den.collect(params);
    zero_grads(params);
    Tensor gz = den.backward(g, cache);
    auto ps = probes(params);
    ps.push_back(probe("z_t", zt, gz));
    return finish("denoiser + L1 diffusion loss", ps, [&] { return diffusion_loss(eps, den.forward(zt, cond, 3, 4)); }, 1e-5, 24);
}

inline GradSuiteEntry unrolled_chain(Rng& rng) {
    const NoiseSchedule sched(2, 0.1, 0.4);
    DenoiserNet<D> den(1, DenoiserConfig{4, 1, 4});
    den.init(rng);
    den.out_conv.init(rng, 0.5);
    Tensor z = rand_t(1, 2, 2, rng), cond = rand_t(1, 2, 2, rng, 0, 1);
    Tensor z_T = forward_diffuse(z, sched, normal_like(z, rng));
    const auto noises = draw_step_noises(z, sched, rng);
    ChainCache<D> chain;
    Tensor g;
    diffusion_loss(z, run_chain(z_T, cond, sched, den, noises, &chain), &g);
    ParamList<D> params;
    den.collect(params);
    zero_grads(params);
    Tensor gzT = chain_backward(g, sched, den, chain);
    auto ps = probes(params);
    ps.push_back(probe("z_T", z_T, gzT));
    return finish("unrolled T=2 stage-2 chain", ps, [&] {
        return diffusion_loss(z, run_chain(z_T, cond, sched, den, noises));
    }, 1e-4, 24);
}

} // namespace gradsuite

/// Double-precision central-difference checks over every layer and loss.
inline std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 20240611) {
    Rng rng(seed);
    using namespace gradsuite;
    std::vector<GradSuiteEntry> out;
    for (auto* f : {conv, resblock, pooling, softmax_linear, pcm, fcl, dehaze_net, discriminator, lsgan, patch_nce,
                    stage1_generator, denoiser, unrolled_chain})
        out.push_back(f(rng));
    return out;
}

} // namespace frdiff
