#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "velsplat/errors.hpp"
#include "velsplat/metrics.hpp"

using namespace velsplat;

namespace {

Frame random_frame(std::mt19937_64& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Frame f(w, h);
    for (double& v : f.rgb) v = u(rng);
    return f;
}

// Direct sliding-window SSIM: explicit 2D weights, one window at a time.
// Deliberately avoids the separable formulation used by the library.
double ssim_direct(const Frame& a, const Frame& b, const LossConfig& cfg) {
    const int k = cfg.ssim_window;
    const int half = k / 2;
    std::vector<double> w2(static_cast<std::size_t>(k) * k);
    double wsum = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double di = i - half;
            const double dj = j - half;
            const double v = std::exp(-(di * di + dj * dj) / (2.0 * cfg.ssim_sigma * cfg.ssim_sigma));
            w2[static_cast<std::size_t>(i) * k + j] = v;
            wsum += v;
        }
    for (double& v : w2) v /= wsum;

    double total = 0.0;
    int count = 0;
    for (int c = 0; c < 3; ++c)
        for (int cy = half; cy < a.height - half; ++cy)
            for (int cx = half; cx < a.width - half; ++cx) {
                double mx = 0.0, my = 0.0, exx = 0.0, eyy = 0.0, exy = 0.0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        const double wv = w2[static_cast<std::size_t>(i) * k + j];
                        const double xv = a.at(cx + j - half, cy + i - half, c);
                        const double yv = b.at(cx + j - half, cy + i - half, c);
                        mx += wv * xv;
                        my += wv * yv;
                        exx += wv * xv * xv;
                        eyy += wv * yv * yv;
                        exy += wv * xv * yv;
                    }
                const double vx = exx - mx * mx;
                const double vy = eyy - my * my;
                const double vxy = exy - mx * my;
                const double s = ((2.0 * mx * my + cfg.ssim_c1) * (2.0 * vxy + cfg.ssim_c2)) /
                                 ((mx * mx + my * my + cfg.ssim_c1) * (vx + vy + cfg.ssim_c2));
                total += s;
                ++count;
            }
    return total / count;
}

} // namespace

TEST_CASE("l1 loss matches hand values and a reversed-order summation oracle") {
    Frame a(6, 4), b(6, 4);
    CHECK(l1_loss(a, b) == 0.0);
    for (double& v : b.rgb) v = 0.5;
    CHECK(l1_loss(a, b) == doctest::Approx(0.5).epsilon(1e-15));

    std::mt19937_64 rng(3);
    a = random_frame(rng, 9, 7);
    b = random_frame(rng, 9, 7);
    double acc = 0.0;
    for (std::size_t i = a.rgb.size(); i-- > 0;) acc += std::abs(a.rgb[i] - b.rgb[i]);
    acc /= static_cast<double>(a.rgb.size());
    CHECK(l1_loss(a, b) == doctest::Approx(acc).epsilon(1e-12));

    Frame c(5, 4);
    CHECK_THROWS_AS(l1_loss(a, c), ConfigError);
}

TEST_CASE("ssim of identical frames is exactly one") {
    std::mt19937_64 rng(5);
    const Frame a = random_frame(rng, 16, 13);
    CHECK(ssim(a, a) == 1.0);
}

TEST_CASE("ssim of constant frames follows the zero-variance closed form") {
    const double mu1 = 0.3, mu2 = 0.55;
    const Frame a = Frame::filled(14, 14, {mu1, mu1, mu1});
    const Frame b = Frame::filled(14, 14, {mu2, mu2, mu2});
    LossConfig cfg;
    const double expected =
        (2.0 * mu1 * mu2 + cfg.ssim_c1) / (mu1 * mu1 + mu2 * mu2 + cfg.ssim_c1);
    CHECK(ssim(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ssim matches the direct sliding-window oracle and is symmetric") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        const int w = 11 + 3 * trial;
        const int h = 12 + 2 * trial;
        const Frame a = random_frame(rng, w, h);
        Frame b = random_frame(rng, w, h);
        // correlate b with a so the structural term is nontrivial
        for (std::size_t i = 0; i < b.rgb.size(); ++i) b.rgb[i] = 0.6 * a.rgb[i] + 0.4 * b.rgb[i];

        LossConfig cfg;
        const double lib = ssim(a, b, cfg);
        CHECK(lib == doctest::Approx(ssim_direct(a, b, cfg)).epsilon(1e-10));
        CHECK(ssim(b, a, cfg) == lib);
        CHECK(lib > -1.0);
        CHECK(lib < 1.0);
    }
}

TEST_CASE("ssim rejects bad configurations") {
    const Frame a = Frame::filled(8, 8, {0.5, 0.5, 0.5});
    CHECK_THROWS_AS(ssim(a, a), ConfigError); // smaller than the default window
    LossConfig even;
    even.ssim_window = 10;
    const Frame big = Frame::filled(16, 16, {0.5, 0.5, 0.5});
    CHECK_THROWS_AS(ssim(big, big, even), ConfigError);
    LossConfig tiny;
    tiny.ssim_window = 5;
    CHECK_NOTHROW(ssim(a, a, tiny));
}

TEST_CASE("psnr matches hand values, caps at 100, and agrees with a direct oracle") {
    Frame a(10, 10);
    Frame b(10, 10);
    for (double& v : b.rgb) v = 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr(a, a) == 100.0);

    std::mt19937_64 rng(11);
    a = random_frame(rng, 12, 9);
    b = random_frame(rng, 12, 9);
    double mse = 0.0;
    for (std::size_t i = a.rgb.size(); i-- > 0;) {
        const double d = a.rgb[i] - b.rgb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
}

TEST_CASE("combined loss reduces to l1 at lambda one and to zero on identical frames") {
    std::mt19937_64 rng(13);
    const Frame a = random_frame(rng, 16, 16);
    const Frame b = random_frame(rng, 16, 16);

    LossConfig pure;
    pure.lambda = 1.0;
    const LossResult r = loss(a, b, pure);
    CHECK(r.value == doctest::Approx(l1_loss(a, b)).epsilon(1e-14));

    for (double lambda : {0.0, 0.3, 0.8, 1.0}) {
        LossConfig cfg;
        cfg.lambda = lambda;
        CHECK(loss(a, a, cfg).value == doctest::Approx(0.0).epsilon(1e-14));
    }
}

TEST_CASE("loss gradients match central finite differences") {
    std::mt19937_64 rng(17);
    Frame a = random_frame(rng, 14, 13);
    const Frame b = random_frame(rng, 14, 13);
    LossConfig cfg;
    cfg.lambda = 0.37;

    const LossResult r = loss(a, b, cfg);
    REQUIRE(r.dframe.rgb.size() == a.rgb.size());

    std::uniform_int_distribution<std::size_t> pick(0, a.rgb.size() - 1);
    const double h = 1e-6;
    double worst = 0.0;
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t i = pick(rng);
        const double orig = a.rgb[i];
        a.rgb[i] = orig + h;
        const double lp = loss(a, b, cfg).value;
        a.rgb[i] = orig - h;
        const double lm = loss(a, b, cfg).value;
        a.rgb[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = r.dframe.rgb[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)}));
    }
    CHECK(worst < 1e-5);
}
