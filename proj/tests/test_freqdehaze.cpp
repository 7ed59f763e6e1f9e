#include "test_util.hpp"

#include <algorithm>
#include <numeric>

#include <frdiff/freqdehaze.hpp>
#include <frdiff/gradcheck.hpp>

using namespace frdiff;
using frdiff::test::random_tensor;
using Catch::Approx;

namespace {

Tensor3<double> from_values(std::initializer_list<double> v) {
    Tensor3<double> t(1, 1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), t.values().begin());
    return t;
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(b), 1e-12); }

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.blocks_per_scale = {1, 1};
    return cfg;
}

} // namespace

TEST_CASE("amplitude_stats examples", "[freqdehaze][are]") {
    auto s = amplitude_stats(Tensor3<double>(2, 3, 3, 1.75));
    CHECK(s.mean == 1.75);
    CHECK(s.std == 0.0);
    auto h = amplitude_stats(from_values({1, 2, 3, 4}));
    CHECK(h.mean == Approx(2.5));
    CHECK(h.std == Approx(std::sqrt(1.25)));
    auto p = amplitude_stats(from_values({4, 1, 3, 2}));
    CHECK(p.mean == h.mean);
    CHECK(p.std == Approx(h.std).epsilon(1e-15));
    CHECK_THROWS_AS(amplitude_stats(Tensor3<double>()), DataError);
}

TEST_CASE("align_amplitude examples", "[freqdehaze][are]") {
    Rng rng(1);
    SECTION("self alignment is exact and gives a zero residual") {
        Tensor3<double> a = random_tensor(3, 5, 5, rng, 0, 10);
        auto st = amplitude_stats(a);
        CHECK(max_abs_diff(align_amplitude(a, st, st), a) == 0.0);
        Tensor3<double> z = amplitude_residual(a, a);
        for (double v : z.values()) CHECK(v == 0.0);
    }
    SECTION("hand case onto zero mean, unit std") {
        Tensor3<double> a = from_values({1, 2, 3, 4});
        Tensor3<double> out = align_amplitude(a, amplitude_stats(a), AmplitudeStats{0.0, 1.0});
        const double expect[] = {-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865};
        for (int i = 0; i < 4; ++i) CHECK(out[i] == Approx(expect[i]).margin(1e-9));
        Tensor3<double> z = amplitude_residual(a, out);
        for (int i = 0; i < 4; ++i) CHECK(z[i] == Approx(expect[i] - a[i]).margin(1e-9));
    }
    SECTION("degenerate source spread is rejected") {
        Tensor3<double> flat(1, 2, 2, 3.0);
        CHECK_THROWS_AS(align_amplitude(flat, amplitude_stats(flat), AmplitudeStats{1, 1}), NumericError);
        // The residual path survives: a constant source lands on the target mean.
        Tensor3<double> target = from_values({1, 2, 3, 4});
        Tensor3<double> z = amplitude_residual(flat, Tensor3<double>(1, 2, 2, 5.0));
        for (double v : z.values()) CHECK(v == Approx(2.0));
        (void)target;
    }
}

TEST_CASE("ARE properties on random spectra", "[freqdehaze][are][property]") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor3<double> ah = amp_phase(random_tensor(3, 6 + trial % 5, 7, rng)).amplitude;
        Tensor3<double> ac = amp_phase(random_tensor(3, 6 + trial % 5, 7, rng, 0, 2)).amplitude;
        const auto sh = amplitude_stats(ah), sc = amplitude_stats(ac);
        Tensor3<double> aligned = align_amplitude(ah, sh, sc);
        const auto sa = amplitude_stats(aligned);
        CHECK(close_rel(sa.mean, sc.mean, 1e-6));
        CHECK(close_rel(sa.std, sc.std, 1e-6));
        // Second application with the same target changes nothing.
        CHECK(max_abs_diff(align_amplitude(aligned, sa, sc), aligned) < 1e-6 * (1 + sc.mean));
        // Residual closes the distribution gap exactly.
        Tensor3<double> z = amplitude_residual(ah, ac);
        const auto sz = amplitude_stats(ah + z);
        CHECK(close_rel(sz.mean, sc.mean, 1e-6));
        CHECK(close_rel(sz.std, sc.std, 1e-6));
        // Positive-slope affine map keeps the rank order.
        std::vector<std::size_t> order(ah.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto i, auto j) { return ah[i] < ah[j]; });
        bool monotone = true;
        for (std::size_t k = 1; k < order.size(); ++k)
            monotone &= aligned[order[k]] >= aligned[order[k - 1]] - 1e-9;
        CHECK(monotone);
    }
}

TEST_CASE("per-channel statistics switch aligns each channel", "[freqdehaze][are]") {
    Rng rng(3);
    Tensor3<double> ah = random_tensor(2, 4, 4, rng, 0, 3), ac = random_tensor(2, 4, 4, rng, 1, 9);
    Tensor3<double> out = ah + amplitude_residual(ah, ac, StatsMode::per_channel);
    for (int c = 0; c < 2; ++c) {
        auto so = detail::stats_of(out.channel(c), out.plane());
        auto sc = detail::stats_of(ac.channel(c), ac.plane());
        CHECK(close_rel(so.mean, sc.mean, 1e-9));
        CHECK(close_rel(so.std, sc.std, 1e-9));
    }
}

TEST_CASE("pcm_forward examples", "[freqdehaze][pcm]") {
    Rng rng(4);
    SECTION("zero conv leaves the phase untouched") {
        PhaseCorrection<double> pcm("p", 3);
        Tensor3<double> phase = random_tensor(3, 4, 5, rng, -3, 3), z = random_tensor(3, 4, 5, rng);
        PhaseCorrection<double>::Cache cache;
        CHECK(max_abs_diff(pcm.forward(phase, z, cache), phase) == 0.0);
    }
    SECTION("channel-constant residual gives uniform weights") {
        PhaseCorrection<double> pcm("p", 4);
        PhaseCorrection<double>::Cache cache;
        pcm.forward(random_tensor(4, 3, 3, rng), Tensor3<double>(4, 3, 3, 0.8), cache);
        for (double w : cache.omega) CHECK(w == Approx(0.25));
    }
    SECTION("single channel with 1x1 weight w scales phase by 1 + w") {
        PhaseCorrection<double> pcm("p", 1);
        pcm.conv.weight.value[0] = 0.3;
        Tensor3<double> phase = random_tensor(1, 3, 4, rng, -3, 3);
        PhaseCorrection<double>::Cache cache;
        Tensor3<double> out = pcm.forward(phase, random_tensor(1, 3, 4, rng), cache);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == Approx(phase[i] * 1.3).margin(1e-12));
    }
}

TEST_CASE("fcl_forward examples", "[freqdehaze][fcl]") {
    Rng rng(5);
    FreqCompensation<double> fcl("f", 3);
    SECTION("zero residual and zero PCM pass the features through") {
        Tensor3<double> x = random_tensor(3, 8, 6, rng);
        FreqCompensation<double>::Cache cache;
        CHECK(max_abs_diff(fcl.forward(x, Tensor3<double>(3, 8, 6), cache), x) < 1e-5);
    }
    SECTION("residual from ARE sets the output amplitude to the aligned amplitude") {
        Tensor3<double> x = random_tensor(3, 9, 7, rng, 0, 1);
        Tensor3<double> donor = random_tensor(3, 9, 7, rng, 0, 2);
        Tensor3<double> ax = amp_phase(x).amplitude;
        Tensor3<double> z = amplitude_residual(ax, amp_phase(donor).amplitude);
        Tensor3<double> aligned = ax + z;
        bool nonneg = std::all_of(aligned.values().begin(), aligned.values().end(), [](double v) { return v >= 0; });
        REQUIRE(nonneg);
        FreqCompensation<double>::Cache cache;
        Tensor3<double> out = fcl.forward(x, z, cache);
        CHECK(max_abs_diff(amp_phase(out).amplitude, aligned) < 1e-5);
        CHECK(cache.imag_residue < 1e-5);
    }
    SECTION("arbitrary edits are symmetrized and stay real") {
        fcl.pcm.conv.init(rng);
        Tensor3<double> x = random_tensor(3, 8, 8, rng);
        Tensor3<double> z = random_tensor(3, 8, 8, rng, 0, 2);
        FreqCompensation<double>::Cache cache;
        Tensor3<double> out = fcl.forward(x, z, cache);
        CHECK(out.all_finite());
        CHECK(conjugate_symmetry_error(dft2(out)) < 1e-5);
    }
    SECTION("mismatched residual is rejected") {
        FreqCompensation<double>::Cache cache;
        CHECK_THROWS_AS(fcl.forward(Tensor3<double>(3, 4, 4), Tensor3<double>(3, 4, 5), cache), ShapeError);
    }
}

TEST_CASE("FCL gradient check", "[freqdehaze][gradcheck]") {
    Rng rng(6);
    for (auto [h, w] : {std::pair{5, 7}, {6, 8}}) {
        FreqCompensation<double> fcl("f", 3);
        fcl.pcm.conv.init(rng);
        Tensor3<double> x = random_tensor(3, h, w, rng, 0, 1);
        Tensor3<double> z = random_tensor(3, h, w, rng, 0.05, 0.5);
        FreqCompensation<double>::Cache cache;
        Tensor3<double> y = fcl.forward(x, z, cache);
        Tensor3<double> r = random_weights_like(y, rng);
        fcl.pcm.conv.weight.zero_grad();
        auto [gx, gz] = fcl.backward(r, cache);
        std::vector<GradProbe> ps{probe(fcl.pcm.conv.weight), probe("x", x, gx), probe("z", z, gz)};
        auto loss = [&] {
            FreqCompensation<double>::Cache c;
            return dot(fcl.forward(x, z, c), r);
        };
        auto res = grad_check(ps, loss, 1e-6, 100);
        INFO(res.worst);
        CHECK(res.max_rel_error < 1e-5);
    }
}

TEST_CASE("dehaze network contracts", "[freqdehaze][net]") {
    Rng rng(7);
    DehazeNet<double> net(tiny_config());
    net.init(rng);
    Tensor3<double> img = random_tensor(3, 12, 10, rng, 0, 1);

    SECTION("encode_features shape, zero propagation and spectral round trip") {
        auto [f, ap] = net.encode_features(img);
        CHECK(f.channels() == 4);
        CHECK(f.height() == 12);
        CHECK(max_abs_diff(idft2(recompose(ap)), f) < 1e-5);

        DehazeNet<double> zero(tiny_config());
        auto [fz, apz] = zero.encode_features(Tensor3<double>(3, 6, 6));
        for (double v : fz.values()) CHECK(v == 0.0);
        for (double v : apz.amplitude.values()) CHECK(v == 0.0);
    }
    SECTION("output matches input shape, stays in [0,1], and is deterministic") {
        for (auto& p : net.head.weight.value) p = std::normal_distribution<double>(0, 0.1)(rng);
        Tensor3<double> z = random_tensor(4, 12, 10, rng, 0, 0.5);
        Tensor3<double> a = net.forward(img, z), b = net.forward(img, z);
        CHECK(a.same_shape(img));
        CHECK(max_abs_diff(a, b) == 0.0);
        for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
    SECTION("zero residual and zero PCM reduce to the plain UNet") {
        for (auto& p : net.head.weight.value) p = std::normal_distribution<double>(0, 0.1)(rng);
        NetworkConfig plain_cfg = tiny_config();
        plain_cfg.fcl_enabled = false;
        DehazeNet<double> plain(plain_cfg);
        ParamList<double> a, b;
        net.collect(a);
        plain.collect(b);
        copy_values(b, a);
        Tensor3<double> with = net.forward(img, Tensor3<double>(4, 12, 10));
        Tensor3<double> without = plain.forward(img, Tensor3<double>(4, 12, 10));
        CHECK(max_abs_diff(with, without) < 1e-5);
    }
    SECTION("wrong input channel count is rejected") {
        CHECK_THROWS_AS(net.forward(Tensor3<double>(1, 8, 8), Tensor3<double>(4, 8, 8)), ShapeError);
    }
}

TEST_CASE("dehaze network gradient check", "[freqdehaze][gradcheck]") {
    Rng rng(8);
    DehazeNet<double> net(tiny_config());
    net.init(rng);
    for (auto& f : net.fcl) f.pcm.conv.init(rng);
    for (auto& p : net.head.weight.value) p = std::normal_distribution<double>(0, 0.05)(rng);
    Tensor3<double> img = random_tensor(3, 9, 9, rng, 0.3, 0.7);
    Tensor3<double> z = random_tensor(4, 9, 9, rng, 0.05, 0.3);
    DehazeNet<double>::Cache cache;
    Tensor3<double> y = net.forward(img, z, cache);
    Tensor3<double> r = random_weights_like(y, rng);
    ParamList<double> params;
    net.collect(params);
    zero_grads(params);
    auto grads = net.backward(r, cache);
    auto ps = probes(params);
    ps.push_back(probe("image", img, grads.image));
    ps.push_back(probe("z", z, grads.z));
    auto res = grad_check(ps, [&] { return dot(net.forward(img, z), r); }, 1e-6, 24);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("SAP rescales pooled residuals by the area ratio", "[freqdehaze][sap]") {
    Tensor3<double> z(2, 8, 8, 1.0);
    Tensor3<double> p = sap(z, 4, 4);
    for (double v : p.values()) CHECK(v == Approx(0.25));
    CHECK(max_abs_diff(sap(z, 8, 8), z) == 0.0);
}
