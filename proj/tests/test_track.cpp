#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "velsplat/errors.hpp"
#include "velsplat/velocity_track.hpp"

using namespace velsplat;

namespace {

VelocityTrack random_track(std::mt19937_64& rng, int n, double t0, double t1) {
    std::uniform_real_distribution<double> a(-2.0, 2.0);
    VelocityTrack track = VelocityTrack::zeros(n, t0, t1);
    for (auto& anchor : track.anchors) anchor = {a(rng), a(rng), a(rng)};
    rebuild_prefix(track);
    return track;
}

// Midpoint Riemann sum of the clamped interpolant; independent of the
// prefix-sum machinery.
Vec3 riemann_displacement(const VelocityTrack& track, double a, double b, int steps) {
    const double h = (b - a) / steps;
    Vec3 acc{};
    for (int i = 0; i < steps; ++i) acc += velocity_at(track, a + (i + 0.5) * h);
    return h * acc;
}

} // namespace

TEST_CASE("construction guards") {
    CHECK_THROWS_AS(VelocityTrack::zeros(1, 0.0, 1.0), InvalidParameterError);
    CHECK_THROWS_AS(VelocityTrack::zeros(4, 1.0, 1.0), InvalidParameterError);
    const VelocityTrack t = VelocityTrack::zeros(6, 0.0, 1.0);
    CHECK(t.anchor_count() == 6);
    CHECK(t.stride() == doctest::Approx(0.2));
}

TEST_CASE("velocity_at interpolates and clamps") {
    std::mt19937_64 rng(21);
    VelocityTrack track = random_track(rng, 5, 0.0, 1.0);

    for (int k = 0; k < track.anchor_count(); ++k) {
        const Vec3 v = velocity_at(track, track.anchor_time(k));
        CHECK(norm(v - track.anchors[static_cast<std::size_t>(k)]) < 1e-15);
    }
    const Vec3 mid = velocity_at(track, 0.5 * (track.anchor_time(1) + track.anchor_time(2)));
    CHECK(norm(mid - 0.5 * (track.anchors[1] + track.anchors[2])) < 1e-15);

    CHECK(norm(velocity_at(track, -5.0) - track.anchors.front()) == 0.0);
    CHECK(norm(velocity_at(track, 99.0) - track.anchors.back()) == 0.0);
}

TEST_CASE("rebuild_prefix matches direct summation") {
    VelocityTrack track = VelocityTrack::zeros(2, 0.0, 1.0);
    track.anchors[0] = {1, 1, 1};
    track.anchors[1] = {3, 3, 3};
    rebuild_prefix(track);
    CHECK(norm(track.prefix[0]) == 0.0);
    CHECK(track.prefix[1].x == doctest::Approx(2.0)); // one trapezoid, 0.5 * (1 + 3) * 1

    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        VelocityTrack t = random_track(rng, 2 + static_cast<int>(rng() % 9), -0.5, 2.0);
        const double dt = t.stride();
        Vec3 direct{};
        for (int k = 0; k < t.anchor_count(); ++k) {
            CHECK(norm(t.prefix[static_cast<std::size_t>(k)] - direct) < 1e-14);
            if (k + 1 < t.anchor_count())
                direct += 0.5 * dt * (t.anchors[static_cast<std::size_t>(k)] +
                                      t.anchors[static_cast<std::size_t>(k) + 1]);
        }
    }
}

TEST_CASE("displacement closed forms") {
    VelocityTrack constant = VelocityTrack::zeros(6, 0.0, 1.0);
    for (auto& a : constant.anchors) a = {1, 1, 1};
    rebuild_prefix(constant);
    const Vec3 d = displacement(constant, 0.1, 0.9);
    CHECK(d.x == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(d.y == doctest::Approx(0.8).epsilon(1e-14));

    // anchors sampling v_x(tau) = tau: trapezoid rule is exact on linear integrands
    VelocityTrack ramp = VelocityTrack::zeros(6, 0.0, 1.0);
    for (int k = 0; k < 6; ++k) ramp.anchors[static_cast<std::size_t>(k)] = {ramp.anchor_time(k), 0, 0};
    rebuild_prefix(ramp);
    CHECK(displacement(ramp, 0.0, 1.0).x == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("displacement matches dense quadrature") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> tdist(-0.6, 1.6);
    for (int trial = 0; trial < 40; ++trial) {
        const VelocityTrack track = random_track(rng, 2 + static_cast<int>(rng() % 9), 0.0, 1.0);
        const double a = tdist(rng);
        const double b = tdist(rng);
        const Vec3 exact = displacement(track, a, b);
        const Vec3 approx = riemann_displacement(track, a, b, 1'000'000);
        CHECK(norm(exact - approx) < 1e-8);
    }
}

TEST_CASE("displacement is antisymmetric and additive") {
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> tdist(-0.5, 1.5);
    for (int trial = 0; trial < 100; ++trial) {
        const VelocityTrack track = random_track(rng, 6, 0.0, 1.0);
        const double a = tdist(rng), b = tdist(rng), c = tdist(rng);
        CHECK(norm(displacement(track, a, b) + displacement(track, b, a)) == 0.0);
        const Vec3 whole = displacement(track, a, c);
        const Vec3 split = displacement(track, a, b) + displacement(track, b, c);
        CHECK(norm(whole - split) < 1e-12);
    }
}

TEST_CASE("intra-anchor path equals the general formula evaluated degenerately") {
    std::mt19937_64 rng(25);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const VelocityTrack track = random_track(rng, 6, 0.0, 1.0);
        const double dt = track.stride();
        const int k = static_cast<int>(rng() % 5);
        double a = track.anchor_time(k) + u(rng) * dt;
        double b = track.anchor_time(k) + u(rng) * dt;
        if (a > b) std::swap(a, b);

        const Vec3 intra = displacement(track, a, b);
        // general cross-anchor decomposition with zero interior evaluated by hand
        const Vec3 left = 0.5 * (track.anchor_time(k + 1) - a) *
                          (velocity_at(track, a) + track.anchors[static_cast<std::size_t>(k) + 1]);
        const Vec3 interior = track.prefix[static_cast<std::size_t>(k)] -
                              track.prefix[static_cast<std::size_t>(k) + 1];
        const Vec3 right = 0.5 * (b - track.anchor_time(k)) *
                           (track.anchors[static_cast<std::size_t>(k)] + velocity_at(track, b));
        CHECK(norm(intra - (left + interior + right)) < 1e-13);
    }
}

TEST_CASE("clamped extrapolation uses boundary anchors") {
    std::mt19937_64 rng(26);
    const VelocityTrack track = random_track(rng, 4, 0.0, 1.0);
    const Vec3 below = displacement(track, -2.0, -0.5);
    CHECK(norm(below - 1.5 * track.anchors.front()) < 1e-14);
    const Vec3 above = displacement(track, 1.25, 3.25);
    CHECK(norm(above - 2.0 * track.anchors.back()) < 1e-14);
}

TEST_CASE("anchor weights reproduce displacement and its gradient") {
    std::mt19937_64 rng(27);
    std::uniform_real_distribution<double> tdist(-0.4, 1.4);
    for (int trial = 0; trial < 60; ++trial) {
        VelocityTrack track = random_track(rng, 6, 0.0, 1.0);
        const double a = tdist(rng), b = tdist(rng);

        std::vector<double> w(6, 0.0);
        accumulate_displacement_anchor_weights(track, a, b, 1.0, w);
        Vec3 weighted{};
        for (int k = 0; k < 6; ++k) weighted += w[static_cast<std::size_t>(k)] * track.anchors[static_cast<std::size_t>(k)];
        CHECK(norm(weighted - displacement(track, a, b)) < 1e-13);

        // central differences on each anchor component (linear, so exact up to rounding)
        const double h = 1e-6;
        for (int k = 0; k < 6; ++k) {
            const double saved = track.anchors[static_cast<std::size_t>(k)].x;
            track.anchors[static_cast<std::size_t>(k)].x = saved + h;
            rebuild_prefix(track);
            const double up = displacement(track, a, b).x;
            track.anchors[static_cast<std::size_t>(k)].x = saved - h;
            rebuild_prefix(track);
            const double dn = displacement(track, a, b).x;
            track.anchors[static_cast<std::size_t>(k)].x = saved;
            rebuild_prefix(track);
            const double fd = (up - dn) / (2.0 * h);
            CHECK(std::abs(fd - w[static_cast<std::size_t>(k)]) <
                  1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("total_mean_at composes displacement with the intrinsic drift") {
    std::mt19937_64 rng(28);
    const Sym4 cov = oracles::sym4_from_eigen(oracles::random_spsd4(rng, 0.5, 2.0));
    const Vec4 mean4{0.3, -0.2, 1.0, 0.4};

    // zero anchors: reduces to the plain conditional mean
    VelocityTrack zeros = VelocityTrack::zeros(6, 0.0, 1.0);
    const Vec3 m = total_mean_at(mean4, cov, zeros, 0.9);
    const Vec3 plain = conditional_moments(mean4, cov, 0.9).mean;
    CHECK(norm(m - plain) < 1e-15);

    // zero cross-covariance, constant anchors
    Sym4 diag = Sym4::identity();
    VelocityTrack constant = VelocityTrack::zeros(6, 0.0, 1.0);
    for (auto& a : constant.anchors) a = {2, 0, -1};
    rebuild_prefix(constant);
    const Vec3 moved = total_mean_at(mean4, diag, constant, 0.9);
    CHECK(moved.x == doctest::Approx(0.3 + 2.0 * 0.5));
    CHECK(moved.y == doctest::Approx(-0.2));
    CHECK(moved.z == doctest::Approx(1.0 - 0.5));

    // random setup: conditional mean plus quadrature displacement
    VelocityTrack track = random_track(rng, 7, 0.0, 1.0);
    const Vec3 total = total_mean_at(mean4, cov, track, 0.85);
    const Vec3 expect = conditional_moments(mean4, cov, 0.85).mean +
                        riemann_displacement(track, 0.4, 0.85, 1'000'000);
    CHECK(norm(total - expect) < 1e-8);

    Sym4 degenerate = cov;
    degenerate.tt() = 0.0;
    CHECK_THROWS_AS(total_mean_at(mean4, degenerate, track, 0.5), DegenerateTemporalError);
}
