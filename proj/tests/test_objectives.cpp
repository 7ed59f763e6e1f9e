#include "test_util.hpp"

#include <frdiff/gradsuite.hpp>
#include <frdiff/objectives.hpp>

using namespace frdiff;
using frdiff::test::random_tensor;
using Catch::Approx;

namespace {

Embeddings<double> unit_rows(int rows, int dim, Rng& rng) {
    Embeddings<double> e(rows, dim);
    std::normal_distribution<double> g;
    for (int i = 0; i < rows; ++i) {
        double n = 0.0;
        for (int c = 0; c < dim; ++c) n += (e.row(i)[c] = g(rng)) * e.row(i)[c];
        for (int c = 0; c < dim; ++c) e.row(i)[c] /= std::sqrt(n);
    }
    return e;
}

NetworkConfig tiny_net() {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.blocks_per_scale = {1, 1};
    return cfg;
}

} // namespace

TEST_CASE("lsgan losses", "[objectives][gan]") {
    const Tensor3<double> ones(1, 2, 3, 1.0), zeros(1, 2, 3, 0.0), half(1, 2, 3, 0.5);
    CHECK(lsgan_d_loss(ones, zeros) == 0.0);
    CHECK(lsgan_d_loss(half, half) == Approx(0.5));
    CHECK(lsgan_g_loss(ones) == 0.0);
    CHECK(lsgan_g_loss(zeros) == 1.0);
    // a perfect discriminator leaves the generator at loss 1
    CHECK(lsgan_g_loss(zeros) == 1.0);

    Rng rng(1);
    for (int k = 0; k < 20; ++k) {
        const auto a = random_tensor(1, 3, 3, rng, -2, 2), b = random_tensor(1, 3, 3, rng, -2, 2);
        Tensor3<double> mid = a;
        for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (a[i] + b[i]);
        CHECK(lsgan_g_loss(mid) <= 0.5 * (lsgan_g_loss(a) + lsgan_g_loss(b)) + 1e-15);
        CHECK(lsgan_d_loss(a, b) >= 0.0);
    }

    const auto real = random_tensor(1, 3, 4, rng), fake = random_tensor(1, 2, 2, rng);
    Tensor3<double> gr, gf, gg;
    lsgan_d_loss(real, fake, &gr, &gf);
    lsgan_g_loss(fake, &gg);
    auto fd = [](auto f, Tensor3<double> x, std::size_t i) {
        const double h = 1e-6, keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        return (up - f(x)) / (2 * h);
    };
    for (std::size_t i = 0; i < real.size(); ++i)
        CHECK(std::abs(fd([&](const Tensor3<double>& r) { return lsgan_d_loss(r, fake); }, real, i) - gr[i]) < 1e-6);
    for (std::size_t i = 0; i < fake.size(); ++i) {
        CHECK(std::abs(fd([&](const Tensor3<double>& f) { return lsgan_d_loss(real, f); }, fake, i) - gf[i]) < 1e-6);
        CHECK(std::abs(fd([&](const Tensor3<double>& f) { return lsgan_g_loss(f); }, fake, i) - gg[i]) < 1e-6);
    }
    CHECK_THROWS_AS(lsgan_g_loss(Tensor3<double>()), DataError);
}

TEST_CASE("discriminator shapes", "[objectives][gan]") {
    Rng rng(2);
    Discriminator<double> d(4);
    d.init(rng);
    for (int s : {8, 16, 32}) {
        const auto logits = d.forward(random_tensor(3, s, s, rng, 0, 1));
        CHECK(logits.channels() == 1);
        CHECK(logits.height() == s / 8);
        CHECK(logits.width() == s / 8);
        for (double v : logits.values()) CHECK(std::isfinite(v));
    }
    CHECK_THROWS_AS(Discriminator<double>(0), DataError);
}

TEST_CASE("patch nce scalar cases", "[objectives][nce]") {
    SECTION("equal similarities give ln(K + 1)") {
        for (int k : {1, 5, 255}) {
            CHECK(nce_from_similarities(0.3, std::vector<double>(static_cast<std::size_t>(k), 0.3), 0.07) ==
                  Approx(std::log(k + 1.0)).epsilon(1e-12));
        }
    }
    SECTION("separated similarities give near-zero loss") {
        for (int k : {1, 100, 1000000}) {
            // -log(e^a / (e^a + K e^-a)) = log1p(K e^-2a)
            const double expect = std::log1p(k * std::exp(-2 / 0.07));
            const double got = nce_from_similarities(1.0, std::vector<double>(static_cast<std::size_t>(k), -1.0), 0.07);
            CHECK(got == Approx(expect).epsilon(1e-9));
            CHECK(got < 1e-6);
        }
    }
    SECTION("monotone in the positive similarity") {
        const std::vector<double> neg{0.1, -0.3, 0.5};
        double prev = 1e300;
        for (double sp = -1.0; sp <= 1.0; sp += 0.1) {
            const double l = nce_from_similarities(sp, neg, 0.07);
            CHECK(l < prev);
            prev = l;
        }
    }
    SECTION("invalid") {
        CHECK_THROWS_AS(nce_from_similarities(0.1, {}, 0.07), DataError);
        CHECK_THROWS_AS(nce_from_similarities(0.1, {0.1}, 0.0), DataError);
    }
}

TEST_CASE("patch nce over embeddings", "[objectives][nce]") {
    Rng rng(3);
    SECTION("identical embeddings everywhere give ln(P)") {
        Embeddings<double> e(6, 4);
        for (auto& v : e.data) v = 0.5;
        CHECK(patch_nce_loss(e, e, 0.07) == Approx(std::log(6.0)).epsilon(1e-6));
    }
    SECTION("matches the per-query scalar form") {
        const auto q = unit_rows(5, 3, rng), k = unit_rows(5, 3, rng);
        double expect = 0.0;
        for (int i = 0; i < 5; ++i) {
            auto dot = [&](int j) {
                double s = 0;
                for (int c = 0; c < 3; ++c) s += q.row(i)[c] * k.row(j)[c];
                return s;
            };
            std::vector<double> neg;
            for (int j = 0; j < 5; ++j)
                if (j != i) neg.push_back(dot(j));
            expect += nce_from_similarities(dot(i), neg, 0.2) / 5;
        }
        CHECK(patch_nce_loss(q, k, 0.2) == Approx(expect).epsilon(1e-12));
    }
    SECTION("gradients match central differences") {
        auto q = unit_rows(4, 3, rng), k = unit_rows(4, 3, rng);
        Embeddings<double> gq, gk;
        patch_nce_loss(q, k, 0.5, &gq, &gk);
        for (auto* pair : {&q, &k}) {
            auto& grad = pair == &q ? gq : gk;
            for (std::size_t i = 0; i < pair->data.size(); ++i) {
                const double keep = pair->data[i];
                pair->data[i] = keep + 1e-6;
                const double up = patch_nce_loss(q, k, 0.5);
                pair->data[i] = keep - 1e-6;
                const double dn = patch_nce_loss(q, k, 0.5);
                pair->data[i] = keep;
                CHECK(std::abs((up - dn) / 2e-6 - grad.data[i]) < 1e-6);
            }
        }
    }
    SECTION("invalid") {
        CHECK_THROWS_AS(patch_nce_loss(Embeddings<double>(1, 3), Embeddings<double>(1, 3), 0.07), DataError);
        CHECK_THROWS_AS(patch_nce_loss(Embeddings<double>(3, 3), Embeddings<double>(3, 2), 0.07), ShapeError);
    }
}

TEST_CASE("projection head normalises", "[objectives][nce]") {
    Rng rng(4);
    NceHead<double> head("h", 5, 7);
    head.init(rng);
    Embeddings<double> x(3, 5);
    for (auto& v : x.data) v = std::normal_distribution<double>()(rng);
    NceHead<double>::Cache c;
    const auto e = head.forward(x, c);
    CHECK(e.dim == 7);
    for (int i = 0; i < 3; ++i) {
        double n = 0;
        for (int d = 0; d < 7; ++d) n += e.row(i)[d] * e.row(i)[d];
        CHECK(n == Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("patch locations are distinct and seeded", "[objectives][nce]") {
    Rng a(5), b(5);
    const auto la = sample_locations(6, 7, 20, a), lb = sample_locations(6, 7, 20, b);
    CHECK(la == lb);
    auto sorted = la;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(sample_locations(2, 2, 50, a).size() == 4);
}

TEST_CASE("patch nce through the network", "[objectives][nce]") {
    Rng rng(6);
    DehazeNet<double> net(tiny_net());
    net.init(rng);
    PatchNce<double> nce(4, NceConfig{0.07, 16, 8});
    nce.init(rng);
    const auto img = random_tensor(3, 8, 8, rng, 0, 1);
    Rng r1(9), r2(9);
    const double l1 = nce.loss(net, img, img, r1), l2 = nce.loss(net, img, img, r2);
    CHECK(l1 == l2);
    CHECK(l1 >= 0.0);
    CHECK_THROWS_AS(PatchNce<double>(4, NceConfig{0.0, 16, 8}), DataError);
    CHECK_THROWS_AS(PatchNce<double>(4, NceConfig{0.07, 1, 8}), DataError);
}

TEST_CASE("stage losses are weighted sums", "[objectives][stage]") {
    const LossTerms t{0.7, 2.5, 0.3};
    CHECK(t.stage1({1, 1, 1}) == Approx(3.2));
    CHECK(t.stage1({0, 0, 1}) == 0.0);
    CHECK(t.stage1({0.1, 10, 1}) == Approx(0.07 + 25.0).epsilon(1e-12));
    CHECK(t.stage2({1, 1, 0}) == t.stage1({1, 1, 0}));
    CHECK(t.stage2({2, 3, 4}) == Approx(2 * 0.7 + 3 * 2.5 + 4 * 0.3).epsilon(1e-12));
    const LossTerms exact{0.7, 2.5, 0.0};
    CHECK(exact.stage2({1, 1, 5}) == exact.stage1({1, 1, 5}));
}

TEST_CASE("double-precision gradient suite", "[objectives][gradsuite]") {
    for (const auto& e : run_gradient_suite()) {
        INFO(e.name << " rel err " << e.max_rel_error);
        CHECK(e.checked > 0);
        CHECK(e.pass());
    }
}
