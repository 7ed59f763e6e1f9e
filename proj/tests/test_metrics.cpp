#include "test_util.hpp"

#include <limits>

#include <frdiff/metrics.hpp>

using namespace frdiff;
using frdiff::test::random_tensor;
using Catch::Approx;

namespace {

Tensor3<double> brute_dark_channel(const Tensor3<double>& img, int patch) {
    const int r = patch / 2, h = img.height(), w = img.width();
    Tensor3<double> out(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = std::numeric_limits<double>::infinity();
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
                    for (int c = 0; c < img.channels(); ++c) m = std::min(m, img(c, yy, xx));
                }
            out(0, y, x) = m;
        }
    return out;
}

} // namespace

TEST_CASE("psnr analytic cases", "[metrics][psnr]") {
    Rng rng(1);
    const auto x = random_tensor(3, 8, 8, rng, 0, 1);
    CHECK(std::isinf(psnr(x, x)));
    CHECK(psnr(x, x) > 0);

    const Tensor3<double> zeros(3, 8, 8, 0.0), ones(3, 8, 8, 1.0);
    CHECK(std::abs(psnr(zeros, ones)) <= 1e-9);
    Tensor3<double> shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i % 2 ? 0.1 : -0.1);
    CHECK(std::abs(psnr(x, shifted) - 20.0) <= 1e-9);

    Tensor3<double> big(3, 8, 8, 0.0), big2(3, 8, 8, 25.5);
    CHECK(std::abs(psnr(big, big2, 255.0) - 20.0) <= 1e-9);

    CHECK_THROWS_AS(psnr(x, Tensor3<double>(3, 8, 7)), ShapeError);
}

TEST_CASE("psnr falls as uniform noise grows", "[metrics][psnr][property]") {
    Rng rng(2);
    const auto x = random_tensor(3, 16, 16, rng, 0, 1);
    const auto n = random_tensor(3, 16, 16, rng, -1, 1);
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.001, 0.01, 0.05, 0.1, 0.3}) {
        Tensor3<double> y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += amp * n[i];
        const double p = psnr(x, y);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim examples", "[metrics][ssim]") {
    Rng rng(3);
    SECTION("identity") {
        for (int k = 0; k < 5; ++k) {
            const auto x = random_tensor(3, 16, 20, rng, 0, 1);
            CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
        }
        const auto g = random_tensor(1, 11, 11, rng, -3, 3);
        CHECK(std::abs(ssim(g, g) - 1.0) <= 1e-9);
    }
    SECTION("constant images reduce to the luminance term") {
        const double a = 0.3, b = 0.7, c1 = 0.01 * 0.01;
        const Tensor3<double> x(3, 12, 12, a), y(3, 12, 12, b);
        CHECK(ssim(x, y) == Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-9));
    }
    SECTION("symmetry and range") {
        const auto x = random_tensor(3, 16, 16, rng, 0, 1), y = random_tensor(3, 16, 16, rng, 0, 1);
        CHECK(std::abs(ssim(x, y) - ssim(y, x)) <= 1e-9);
        CHECK(ssim(x, y) < 1.0);
        CHECK(ssim(x, y) >= -1.0);
    }
    SECTION("too small for the window") {
        CHECK_THROWS_AS(ssim(Tensor3<double>(3, 10, 16), Tensor3<double>(3, 10, 16)), DataError);
    }
}

TEST_CASE("dark channel examples", "[metrics][dark_channel]") {
    Rng rng(4);
    SECTION("white image") {
        const auto dc = dark_channel(Tensor3<double>(3, 9, 9, 1.0), 3);
        for (double v : dc.values()) CHECK(v == 1.0);
    }
    SECTION("one zero channel") {
        auto x = random_tensor(3, 9, 9, rng, 0, 1);
        for (int i = 0; i < 81; ++i) x.channel(1)[i] = 0.0;
        const auto dc = dark_channel(x, 5);
        for (double v : dc.values()) CHECK(v == 0.0);
    }
    SECTION("hand-built 3x3") {
        Tensor3<double> x(3, 3, 3, 1.0);
        x(0, 0, 0) = 0.9;
        x(1, 2, 2) = 0.1;
        x(2, 1, 0) = 0.4;
        const auto dc = dark_channel(x, 3);
        CHECK(dc(0, 0, 0) == 0.4);
        CHECK(dc(0, 0, 2) == 1.0);
        CHECK(dc(0, 1, 1) == 0.1);
        CHECK(dc(0, 2, 0) == 0.4);
        CHECK(dc(0, 2, 2) == 0.1);
        const auto bf = brute_dark_channel(x, 3);
        for (std::size_t i = 0; i < dc.size(); ++i) CHECK(dc[i] == bf[i]);
    }
    SECTION("brute-force oracle on random images") {
        for (int k = 0; k < 50; ++k) {
            const auto x = random_tensor(3, 8, 8, rng, 0, 1);
            for (int patch : {1, 3, 5, 7}) {
                const auto dc = dark_channel(x, patch), bf = brute_dark_channel(x, patch);
                for (std::size_t i = 0; i < dc.size(); ++i) REQUIRE(dc[i] == bf[i]);
            }
        }
    }
    SECTION("monotone in brightness") {
        const auto x = random_tensor(3, 12, 12, rng, 0, 0.8);
        const auto lift = random_tensor(3, 12, 12, rng, 0, 0.2);
        Tensor3<double> y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += lift[i];
        const auto dx = dark_channel(x, 5), dy = dark_channel(y, 5);
        for (std::size_t i = 0; i < dx.size(); ++i) CHECK(dy[i] >= dx[i]);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(dark_channel(Tensor3<double>(3, 8, 8), 4), DataError);
        CHECK_THROWS_AS(dark_channel(Tensor3<double>(3, 8, 8), 9), DataError);
        CHECK_THROWS_AS(dark_channel(Tensor3<double>(3, 8, 8), 0), DataError);
    }
}

TEST_CASE("swap experiment report", "[metrics][swap]") {
    Rng rng(5);
    std::vector<Tensor3<double>> hazy, clear;
    for (int i = 0; i < 4; ++i) {
        clear.push_back(random_tensor(3, 20, 20, rng, 0, 0.6));
        Tensor3<double> h = clear.back();
        for (auto& v : h.values()) v = 0.5 * v + 0.45;
        hazy.push_back(h);
    }
    SECTION("identical sets are all closer") {
        const auto rep = swap_experiment(clear, clear, 15);
        CHECK(rep.closeness_fraction() == 1.0);
        for (const auto& r : rep.rows) CHECK(r.dc_synclear == Approx(r.dc_clear).margin(1e-12));
    }
    SECTION("histograms conserve pixel counts") {
        const auto rep = swap_experiment(hazy, clear, 15);
        CHECK(rep.rows.size() == 4);
        CHECK(rep.pixels == 4 * 400);
        for (const Histogram* hist : {&rep.hist_hazy, &rep.hist_clear, &rep.hist_synclear}) {
            long long s = 0;
            for (auto c : *hist) s += c;
            CHECK(s == rep.pixels);
        }
        CHECK(rep.below_hazy <= rep.pixels);
        CHECK(rep.below_synclear > rep.below_hazy);
        CHECK(rep.closeness_fraction() == 1.0);
    }
    SECTION("without SynClear") {
        const auto rep = swap_experiment(hazy, clear, 15, false);
        long long s = 0;
        for (auto c : rep.hist_synclear) s += c;
        CHECK(s == 0);
        CHECK(swap_rows_csv(rep).find("synclear") == std::string::npos);
    }
    SECTION("csv shapes") {
        const auto rep = swap_experiment(hazy, clear, 15, true, {"a", "b", "c", "d"});
        const std::string rows = swap_rows_csv(rep), hist = swap_histogram_csv(rep);
        CHECK(std::count(rows.begin(), rows.end(), '\n') == 5);
        CHECK(rows.rfind("pair,dc_hazy,dc_clear,dc_synclear,synclear_closer\n", 0) == 0);
        CHECK(rows.find("\nc,") != std::string::npos);
        CHECK(std::count(hist.begin(), hist.end(), '\n') == kHistBins + 1);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(swap_experiment(std::vector<Tensor3<double>>{}, clear), DataError);
        CHECK_THROWS_AS(swap_experiment(hazy, std::vector<Tensor3<double>>{clear[0]}), DataError);
    }
}

TEST_CASE("histogram binning uses 8-bit levels", "[metrics][swap]") {
    CHECK(to_level(0.0) == 0);
    CHECK(to_level(1.0) == 255);
    CHECK(to_level(25.0 / 255.0) == 25);
    CHECK(to_level(2.0) == 255);
    Histogram h{};
    long long below = 0;
    Tensor3<double> dc(1, 1, 4);
    dc[0] = 0.0;
    dc[1] = 24.0 / 255;
    dc[2] = 25.0 / 255;
    dc[3] = 1.0;
    accumulate_histogram(dc, h, below);
    CHECK(below == 2);
    CHECK(h[0] == 1);
    CHECK(h[1] == 2);
    CHECK(h[15] == 1);
    CHECK(format_metric(std::numeric_limits<double>::infinity()) == "inf");
}
