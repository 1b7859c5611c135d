#include "velsplat/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "velsplat/checkpoint.hpp"
#include "velsplat/renderer.hpp"

namespace velsplat {

void Dataset::validate() const {
    if (cameras.empty()) throw ConfigError("dataset has no cameras");
    if (timestamps.empty()) throw ConfigError("dataset has no timestamps");
    if (items.empty()) throw ConfigError("dataset has no training items");
    auto check = [&](const Item& item, const char* kind) {
        if (item.camera < 0 || item.camera >= static_cast<int>(cameras.size()))
            throw ConfigError(std::string(kind) + " item references a camera out of range");
        if (item.time < 0 || item.time >= static_cast<int>(timestamps.size()))
            throw ConfigError(std::string(kind) + " item references a timestamp out of range");
        const Camera& cam = cameras[item.camera];
        if (item.image.width != cam.width || item.image.height != cam.height)
            throw ConfigError(std::string(kind) + " image size does not match its camera");
    };
    for (const Item& item : items) check(item, "training");
    for (const Item& item : holdout) check(item, "holdout");
}

TrainState TrainState::init(const SceneModel& model, const TrainConfig& cfg) {
    TrainState s;
    AdamConfig adam = cfg.adam;
    if (adam.total_iterations <= 0) adam.total_iterations = cfg.iterations;
    s.optim = OptimState::init(model, adam);
    s.rng.seed(cfg.seed);
    s.grad_accum.assign(model.gaussians.size(), 0.0);
    s.grad_count.assign(model.gaussians.size(), 0);
    s.live_any.assign(model.gaussians.size(), 0);
    return s;
}

std::string MetricsLog::to_tsv() const {
    std::string out = "iteration\twall_s\ttrain_loss\tholdout_psnr\tholdout_ssim\tgaussians\n";
    char line[192];
    for (const MetricsRow& r : rows) {
        std::snprintf(line, sizeof line, "%d\t%.3f\t%.9g\t%.6f\t%.6f\t%zu\n", r.iteration,
                      r.wall_s, r.train_loss, r.holdout_psnr, r.holdout_ssim, r.gaussians);
        out += line;
    }
    return out;
}

namespace {

std::size_t anchor_offset_of_track(const SceneModel& model, std::size_t track_idx) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < track_idx; ++t) off += model.tracks[t].anchors.size() * 3;
    return off;
}

// Drops gaussian `i` (and, for per-gaussian track models, its track) from the
// model, the optimizer moments, and the densify statistics.
void erase_one(SceneModel& model, TrainState& state, std::size_t i) {
    if (model.per_gaussian_tracks) {
        const std::size_t off = anchor_offset_of_track(model, i);
        const std::size_t n = model.tracks[i].anchors.size() * 3;
        auto& m = state.optim.anchor_m;
        auto& v = state.optim.anchor_v;
        m.erase(m.begin() + static_cast<std::ptrdiff_t>(off),
                m.begin() + static_cast<std::ptrdiff_t>(off + n));
        v.erase(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + n));
        model.tracks.erase(model.tracks.begin() + static_cast<std::ptrdiff_t>(i));
    }
    model.gaussians.erase(model.gaussians.begin() + static_cast<std::ptrdiff_t>(i));
    optim_erase_gaussian(state.optim, i);
    state.grad_accum.erase(state.grad_accum.begin() + static_cast<std::ptrdiff_t>(i));
    state.grad_count.erase(state.grad_count.begin() + static_cast<std::ptrdiff_t>(i));
    state.live_any.erase(state.live_any.begin() + static_cast<std::ptrdiff_t>(i));
}

} // namespace

void densify_prune(SceneModel& model, TrainState& state, const TrainConfig& cfg) {
    model.validate();
    const std::size_t n = model.gaussians.size();
    if (state.grad_accum.size() != n || state.grad_count.size() != n || state.live_any.size() != n)
        throw ConfigError("densify statistics out of sync with the model");

    // Prune: weak opacity, or never rendered at any sampled timestamp since
    // the last call. Training never empties the model, so when everything
    // qualifies the strongest gaussian survives.
    std::vector<char> drop(n, 0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        drop[i] = opacity(model.gaussians[i]) < cfg.prune_opacity || !state.live_any[i];
        kept += drop[i] ? 0u : 1u;
    }
    if (kept == 0 && n > 0) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (model.gaussians[i].opacity_logit > model.gaussians[best].opacity_logit) best = i;
        drop[best] = 0;
    }
    for (std::size_t i = n; i-- > 0;)
        if (drop[i]) erase_one(model, state, i);

    // Clone: split a high-gradient survivor along its widest principal axis.
    // Children sit at +-0.6 sigma along that axis with all scales shrunk by
    // 0.8; the parent keeps its optimizer moments, the child starts fresh.
    const std::size_t survivors = model.gaussians.size();
    const double log_shrink = std::log(0.8);
    for (std::size_t i = 0; i < survivors; ++i) {
        if (model.gaussians.size() >= cfg.max_gaussians) break;
        const double mean_grad =
            state.grad_count[i] > 0 ? state.grad_accum[i] / state.grad_count[i] : 0.0;
        if (!(mean_grad > cfg.clone_grad_threshold)) continue;

        const Gaussian4D parent = model.gaussians[i];
        const Vec4 s4 = scales(parent);
        int k = 0;
        for (int c = 1; c < 4; ++c)
            if (s4[c] > s4[k]) k = c;
        const Mat4 r4 = quat_pair_to_rot4(parent.q_l, parent.q_r);
        const Vec4 axis{r4(0, k), r4(1, k), r4(2, k), r4(3, k)};
        const Vec4 offset = (0.6 * s4[k]) * axis;

        Gaussian4D child = parent;
        child.mean4 += offset;
        Gaussian4D& orig = model.gaussians[i];
        orig.mean4 = orig.mean4 - offset;
        for (int c = 0; c < 4; ++c) {
            child.log_scales[c] += log_shrink;
            orig.log_scales[c] += log_shrink;
        }
        model.gaussians.push_back(child);
        optim_append_gaussian(state.optim);
        if (model.per_gaussian_tracks) {
            model.tracks.push_back(model.tracks[i]); // child inherits the velocity curve
            const std::size_t add = model.tracks.back().anchors.size() * 3;
            state.optim.anchor_m.insert(state.optim.anchor_m.end(), add, 0.0);
            state.optim.anchor_v.insert(state.optim.anchor_v.end(), add, 0.0);
        }
    }

    state.grad_accum.assign(model.gaussians.size(), 0.0);
    state.grad_count.assign(model.gaussians.size(), 0);
    state.live_any.assign(model.gaussians.size(), 0);
}

MetricsLog fit(SceneModel& model, const Dataset& data, const TrainConfig& cfg,
               TrainState* state) {
    model.validate();
    data.validate();
    if (cfg.iterations < 0) throw ConfigError("iterations must be non-negative");
    if (cfg.eval_interval <= 0) throw ConfigError("eval_interval must be positive");
    if (cfg.densify_interval < 0) throw ConfigError("densify_interval must be non-negative");
    if (cfg.max_gaussians == 0) throw ConfigError("max_gaussians must be at least 1");
    if (cfg.threads < 1) throw ConfigError("threads must be at least 1");

    TrainState local;
    if (!state) {
        local = TrainState::init(model, cfg);
        state = &local;
    }
    if (state->iteration > cfg.iterations)
        throw ConfigError("resume state is already past the iteration schedule");
    if (state->grad_accum.size() != model.gaussians.size() ||
        state->grad_count.size() != model.gaussians.size() ||
        state->live_any.size() != model.gaussians.size())
        throw ConfigError("train state does not match the model");

    const int densify_end = cfg.densify_end >= 0 ? cfg.densify_end : cfg.iterations / 2;
    const auto t_begin = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    };

    MetricsLog log;
    const double log_scale_floor = std::log(kScaleFloor);
    for (int it = state->iteration + 1; it <= cfg.iterations; ++it) {
        std::uniform_int_distribution<std::size_t> pick(0, data.items.size() - 1);
        const Dataset::Item& item = data.items[pick(state->rng)];
        const Camera& cam = data.cameras[item.camera];
        const double t = data.timestamps[item.time];

        RenderCache cache;
        const Frame pred = render(model, cam, t, data.background, &cache, cfg.threads);
        const LossResult l = loss(pred, item.image, cfg.loss);
        if (!std::isfinite(l.value)) {
            if (!cfg.diagnostic_path.empty()) write_checkpoint(cfg.diagnostic_path, model, state);
            throw DivergenceError("training loss is not finite at iteration " +
                                  std::to_string(it));
        }
        const ModelGrads grads = render_backward(model, cam, t, l.dframe, cache, cfg.threads);

        for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
            state->grad_accum[i] += norm(grads.gaussians[i].mean4.xyz());
            if (cache.gaussians[i].splat_index >= 0) {
                state->grad_count[i] += 1;
                state->live_any[i] = 1;
            }
        }

        adam_step(state->optim, model, grads);
        // Project runaway scales back into the renderable domain: below
        // kScaleFloor the 4D covariance turns temporally degenerate and
        // slicing refuses the model. Matches the deformation path's floor.
        for (Gaussian4D& g : model.gaussians)
            for (int c = 0; c < 4; ++c)
                g.log_scales[c] = std::max(g.log_scales[c], log_scale_floor);
        state->iteration = it;
        state->loss_accum += l.value;
        state->loss_count += 1;

        if (it % cfg.eval_interval == 0 || it == cfg.iterations) {
            MetricsRow row;
            row.iteration = it;
            row.wall_s = cfg.log_wallclock ? elapsed() : 0.0;
            row.train_loss = state->loss_count > 0 ? state->loss_accum / state->loss_count : 0.0;
            row.gaussians = model.gaussians.size();
            for (const Dataset::Item& h : data.holdout) {
                const Frame view = render(model, data.cameras[h.camera],
                                          data.timestamps[h.time], data.background, nullptr,
                                          cfg.threads);
                row.holdout_psnr += psnr(view, h.image);
                row.holdout_ssim += ssim(view, h.image, cfg.loss);
            }
            if (!data.holdout.empty()) {
                row.holdout_psnr /= static_cast<double>(data.holdout.size());
                row.holdout_ssim /= static_cast<double>(data.holdout.size());
            }
            log.rows.push_back(row);
            state->loss_accum = 0.0;
            state->loss_count = 0;
        }

        if (cfg.densify_interval > 0 && it % cfg.densify_interval == 0 && it <= densify_end)
            densify_prune(model, *state, cfg);
    }
    return log;
}

} // namespace velsplat
