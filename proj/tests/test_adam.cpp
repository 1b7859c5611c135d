#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "velsplat/adam.hpp"
#include "velsplat/errors.hpp"

using namespace velsplat;

namespace {

SceneModel tiny_model(int n_gaussians = 1, int anchors = 3) {
    SceneModel m;
    m.tracks.push_back(VelocityTrack::zeros(anchors, 0.0, 1.0));
    for (int i = 0; i < n_gaussians; ++i) {
        Gaussian4D g;
        g.mean4 = {0.1 * i, 0.0, 3.0, 0.5};
        g.rgb = {0.5, 0.5, 0.5};
        m.gaussians.push_back(g);
    }
    DeformNetConfig cfg;
    cfg.enc = {1, 1, 1, 0};
    cfg.anchor_count = anchors;
    cfg.hidden_width = 4;
    cfg.hidden_layers = 1;
    m.net = DeformNetParams::init(cfg, 9);
    return m;
}

ModelGrads zero_grads(const SceneModel& m) { return ModelGrads::zeros_like(m); }

// Textbook Adam, written independently: returns the parameter trajectory.
std::vector<double> reference_adam_trace(double x0, double lr, double beta1, double beta2,
                                         double eps, int steps,
                                         const std::vector<double>& grads) {
    std::vector<double> xs;
    double x = x0, m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        const double g = grads[static_cast<std::size_t>(t - 1)];
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(beta1, t));
        const double vhat = v / (1.0 - std::pow(beta2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
        xs.push_back(x);
    }
    return xs;
}

} // namespace

TEST_CASE("adam matches a hand-rolled reference trace over 100 quadratic steps") {
    SceneModel m = tiny_model();
    OptimState state = OptimState::init(m, {});

    // optimize rgb[0] against f(x) = 0.5 (x - 0.9)^2; every other grad is zero
    const double target = 0.9;
    std::vector<double> grad_seq;
    std::vector<double> lib_trace;
    for (int t = 0; t < 100; ++t) {
        ModelGrads g = zero_grads(m);
        const double gval = m.gaussians[0].rgb[0] - target;
        g.gaussians[0].rgb[0] = gval;
        grad_seq.push_back(gval);
        adam_step(state, m, g);
        lib_trace.push_back(m.gaussians[0].rgb[0]);
    }

    const std::vector<double> ref =
        reference_adam_trace(0.5, state.config.lr_rgb, 0.9, 0.999, 1e-15, 100, grad_seq);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) worst = std::max(worst, std::abs(lib_trace[t] - ref[t]));
    CHECK(worst < 1e-10);
    // Adam with a sensible rate descends toward the target
    CHECK(std::abs(m.gaussians[0].rgb[0] - target) < std::abs(0.5 - target));
}

TEST_CASE("the first bias-corrected step moves each group by its own learning rate") {
    SceneModel m = tiny_model(2, 4);
    OptimState state = OptimState::init(m, {});
    const SceneModel before = m;

    ModelGrads g = zero_grads(m);
    for (auto& gg : g.gaussians) {
        gg.mean4 = {1.0, 1.0, 1.0, 1.0};
        gg.q_l = {1.0, 1.0, 1.0, 1.0};
        gg.q_r = {1.0, 1.0, 1.0, 1.0};
        gg.log_scales = {1.0, 1.0, 1.0, 1.0};
        gg.opacity_logit = 1.0;
        gg.rgb = {1.0, 1.0, 1.0};
    }
    for (auto& tr : g.track_anchors)
        for (auto& a : tr) a = {1.0, 1.0, 1.0};
    visit_params(g.net, [](double& v) { v = 1.0; });

    adam_step(state, m, g);
    const AdamConfig& cfg = state.config;
    const double tol = 1e-12;

    for (std::size_t i = 0; i < m.gaussians.size(); ++i) {
        for (int c = 0; c < 4; ++c) {
            CHECK(std::abs(before.gaussians[i].mean4[c] - m.gaussians[i].mean4[c] -
                           cfg.lr_position) < tol);
            CHECK(std::abs(before.gaussians[i].log_scales[c] - m.gaussians[i].log_scales[c] -
                           cfg.lr_scales) < tol);
        }
        CHECK(std::abs(before.gaussians[i].q_l.x - m.gaussians[i].q_l.x - cfg.lr_quats) < tol);
        CHECK(std::abs(before.gaussians[i].q_r.z - m.gaussians[i].q_r.z - cfg.lr_quats) < tol);
        CHECK(std::abs(before.gaussians[i].opacity_logit - m.gaussians[i].opacity_logit -
                       cfg.lr_opacity) < tol);
        CHECK(std::abs(before.gaussians[i].rgb[1] - m.gaussians[i].rgb[1] - cfg.lr_rgb) < tol);
    }
    for (std::size_t a = 0; a < m.tracks[0].anchors.size(); ++a)
        CHECK(std::abs(before.tracks[0].anchors[a].y - m.tracks[0].anchors[a].y -
                       cfg.lr_anchors) < tol);

    // first-step network rate: one step into the exponential decay
    const double lr_net = cfg.lr_net_start *
                          std::pow(cfg.lr_net_end / cfg.lr_net_start,
                                   1.0 / static_cast<double>(cfg.total_iterations));
    // biases carry no weight decay, so the move is purely the Adam step
    const double got = before.net.linear[0].b[0] - m.net.linear[0].b[0];
    CHECK(std::abs(got - lr_net) < tol);
}

TEST_CASE("zero gradients leave every parameter untouched") {
    SceneModel m = tiny_model(2, 3);
    // make values distinctive, including network weights
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    visit_params(m.net, [&](double& v) { v = u(rng); });
    const SceneModel before = m;

    OptimState state = OptimState::init(m, {});
    state.config.net_weight_decay = 0.0; // isolate the moment update
    for (int t = 0; t < 50; ++t) adam_step(state, m, zero_grads(m));

    for (std::size_t i = 0; i < m.gaussians.size(); ++i) {
        for (int c = 0; c < 4; ++c) {
            CHECK(m.gaussians[i].mean4[c] == before.gaussians[i].mean4[c]);
            CHECK(m.gaussians[i].log_scales[c] == before.gaussians[i].log_scales[c]);
        }
        CHECK(m.gaussians[i].opacity_logit == before.gaussians[i].opacity_logit);
    }
    std::vector<double> now, then;
    visit_params(m.net, [&](double& v) { now.push_back(v); });
    SceneModel b2 = before;
    visit_params(b2.net, [&](double& v) { then.push_back(v); });
    CHECK(now == then);
    CHECK(state.step == 50);
}

TEST_CASE("decoupled weight decay shrinks weight matrices and spares biases") {
    SceneModel m = tiny_model();
    OptimState state = OptimState::init(m, {});
    state.config.net_weight_decay = 1e-2; // exaggerated so the effect is visible
    m.net.linear[0].w[0] = 2.0;
    m.net.linear[0].b[0] = 2.0;

    adam_step(state, m, zero_grads(m));
    const double lr_net = state.config.lr_net_start *
                          std::pow(state.config.lr_net_end / state.config.lr_net_start,
                                   1.0 / static_cast<double>(state.config.total_iterations));
    CHECK(m.net.linear[0].w[0] ==
          doctest::Approx(2.0 * (1.0 - lr_net * 1e-2)).epsilon(1e-14));
    CHECK(m.net.linear[0].b[0] == 2.0);
}

TEST_CASE("the network learning rate decays exponentially to its floor") {
    SceneModel m = tiny_model();
    AdamConfig cfg;
    cfg.total_iterations = 100;
    cfg.net_weight_decay = 0.0;

    auto probe_rate = [&](long preset_step) {
        SceneModel mm = tiny_model();
        OptimState st = OptimState::init(mm, cfg);
        st.step = preset_step;
        ModelGrads g = zero_grads(mm);
        g.net.linear[0].w[0] = 1.0;
        const double before = mm.net.linear[0].w[0];
        adam_step(st, mm, g);
        return before - mm.net.linear[0].w[0];
    };
    // fresh moments with a unit gradient at step s move by lr(s) times this
    // bias-correction factor
    auto factor = [&](long s) {
        const double mhat = 0.1 / (1.0 - std::pow(0.9, static_cast<double>(s)));
        const double vhat = 0.001 / (1.0 - std::pow(0.999, static_cast<double>(s)));
        return mhat / (std::sqrt(vhat) + 1e-15);
    };
    auto schedule = [&](long s) {
        const double frac = std::min(1.0, static_cast<double>(s) / cfg.total_iterations);
        return cfg.lr_net_start * std::pow(cfg.lr_net_end / cfg.lr_net_start, frac);
    };

    for (long preset : {0L, 49L, 99L, 500L}) {
        const double got = probe_rate(preset);
        const double expected = schedule(preset + 1) * factor(preset + 1);
        CHECK(got == doctest::Approx(expected).epsilon(1e-10));
    }
    // the schedule itself decays monotonically and clamps at the floor
    CHECK(schedule(1) > schedule(50));
    CHECK(schedule(50) > schedule(100));
    CHECK(schedule(100) == doctest::Approx(cfg.lr_net_end).epsilon(1e-12));
    CHECK(schedule(501) == doctest::Approx(cfg.lr_net_end).epsilon(1e-12));
}

TEST_CASE("moment blocks follow gaussians through erase and append") {
    SceneModel m = tiny_model(3, 3);
    OptimState state = OptimState::init(m, {});
    REQUIRE(state.gauss_m.size() == 3 * OptimState::kGaussianSlots);
    for (std::size_t i = 0; i < state.gauss_m.size(); ++i)
        state.gauss_m[i] = static_cast<double>(i);

    optim_erase_gaussian(state, 1);
    REQUIRE(state.gauss_m.size() == 2 * OptimState::kGaussianSlots);
    CHECK(state.gauss_m[0] == 0.0);
    // the block that used to belong to gaussian 2 now sits at index 1
    CHECK(state.gauss_m[OptimState::kGaussianSlots] == 2.0 * OptimState::kGaussianSlots);

    optim_append_gaussian(state);
    REQUIRE(state.gauss_m.size() == 3 * OptimState::kGaussianSlots);
    CHECK(state.gauss_m.back() == 0.0);
    CHECK(state.gauss_v.size() == state.gauss_m.size());
}

TEST_CASE("adam rejects mismatched shapes") {
    SceneModel m = tiny_model(2, 3);
    OptimState state = OptimState::init(m, {});
    ModelGrads g = zero_grads(m);

    SceneModel bigger = tiny_model(3, 3);
    ModelGrads g3 = zero_grads(bigger);
    CHECK_THROWS_AS(adam_step(state, bigger, g3), ConfigError);
    CHECK_THROWS_AS(adam_step(state, m, g3), ConfigError);
}
