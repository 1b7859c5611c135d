#include "velsplat/adam.hpp"

#include <cmath>

#include "velsplat/errors.hpp"

namespace velsplat {

namespace {

std::size_t anchor_slot_count(const SceneModel& model) {
    std::size_t n = 0;
    for (const auto& tr : model.tracks) n += tr.anchors.size() * 3;
    return n;
}

struct StepCtx {
    double beta1, beta2, eps;
    double inv_bc1; // 1 / (1 - beta1^step)
    double inv_bc2;
};

inline void update_one(double& p, double g, double& m, double& v, double lr, const StepCtx& c) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double mhat = m * c.inv_bc1;
    const double vhat = v * c.inv_bc2;
    p -= lr * mhat / (std::sqrt(vhat) + c.eps);
}

} // namespace

OptimState OptimState::init(const SceneModel& model, const AdamConfig& config) {
    OptimState s;
    s.config = config;
    s.gauss_m.assign(model.gaussians.size() * kGaussianSlots, 0.0);
    s.gauss_v.assign(model.gaussians.size() * kGaussianSlots, 0.0);
    s.anchor_m.assign(anchor_slot_count(model), 0.0);
    s.anchor_v.assign(anchor_slot_count(model), 0.0);
    s.net_m.assign(model.net.param_count(), 0.0);
    s.net_v.assign(model.net.param_count(), 0.0);
    return s;
}

void adam_step(OptimState& state, SceneModel& model, const ModelGrads& grads) {
    if (state.gauss_m.size() != model.gaussians.size() * OptimState::kGaussianSlots ||
        state.anchor_m.size() != anchor_slot_count(model) ||
        state.net_m.size() != model.net.param_count())
        throw ConfigError("optimizer state does not match the model");
    if (grads.gaussians.size() != model.gaussians.size() ||
        grads.track_anchors.size() != model.tracks.size())
        throw ConfigError("gradients do not match the model");

    const AdamConfig& cfg = state.config;
    ++state.step;
    StepCtx ctx{cfg.beta1, cfg.beta2, cfg.eps,
                1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(state.step))),
                1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)))};

    std::size_t k = 0;
    auto pull = [&](double& p, double g, double lr) {
        update_one(p, g, state.gauss_m[k], state.gauss_v[k], lr, ctx);
        ++k;
    };
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        Gaussian4D& g = model.gaussians[i];
        const GaussianGrads& gg = grads.gaussians[i];
        for (int c = 0; c < 4; ++c) pull(g.mean4[c], gg.mean4[c], cfg.lr_position);
        pull(g.q_l.w, gg.q_l.w, cfg.lr_quats);
        pull(g.q_l.x, gg.q_l.x, cfg.lr_quats);
        pull(g.q_l.y, gg.q_l.y, cfg.lr_quats);
        pull(g.q_l.z, gg.q_l.z, cfg.lr_quats);
        pull(g.q_r.w, gg.q_r.w, cfg.lr_quats);
        pull(g.q_r.x, gg.q_r.x, cfg.lr_quats);
        pull(g.q_r.y, gg.q_r.y, cfg.lr_quats);
        pull(g.q_r.z, gg.q_r.z, cfg.lr_quats);
        for (int c = 0; c < 4; ++c) pull(g.log_scales[c], gg.log_scales[c], cfg.lr_scales);
        pull(g.opacity_logit, gg.opacity_logit, cfg.lr_opacity);
        for (int c = 0; c < 3; ++c) pull(g.rgb[c], gg.rgb[c], cfg.lr_rgb);
    }

    k = 0;
    for (std::size_t ti = 0; ti < model.tracks.size(); ++ti) {
        auto& anchors = model.tracks[ti].anchors;
        const auto& ga = grads.track_anchors[ti];
        if (ga.size() != anchors.size()) throw ConfigError("anchor gradient shape mismatch");
        for (std::size_t ai = 0; ai < anchors.size(); ++ai)
            for (int c = 0; c < 3; ++c) {
                update_one(anchors[ai][c], ga[ai][c], state.anchor_m[k], state.anchor_v[k],
                           cfg.lr_anchors, ctx);
                ++k;
            }
    }
    for (auto& tr : model.tracks) rebuild_prefix(tr);

    // exponential decay reaches lr_net_end exactly at the final iteration
    const double frac =
        cfg.total_iterations > 0
            ? std::min(1.0, static_cast<double>(state.step) / cfg.total_iterations)
            : 1.0;
    const double lr_net = cfg.lr_net_start * std::pow(cfg.lr_net_end / cfg.lr_net_start, frac);

    // explicit loops in visit_params order; decay applies to weight matrices only
    k = 0;
    std::vector<const std::vector<double>*> grad_blocks;
    for (const auto& layer : grads.net.linear) {
        grad_blocks.push_back(&layer.w);
        grad_blocks.push_back(&layer.b);
    }
    for (const auto& g : grads.net.gain) grad_blocks.push_back(&g);
    for (const auto& o : grads.net.offset) grad_blocks.push_back(&o);
    std::vector<std::vector<double>*> param_blocks;
    std::vector<bool> decayed;
    for (auto& layer : model.net.linear) {
        param_blocks.push_back(&layer.w);
        decayed.push_back(true);
        param_blocks.push_back(&layer.b);
        decayed.push_back(false);
    }
    for (auto& g : model.net.gain) {
        param_blocks.push_back(&g);
        decayed.push_back(false);
    }
    for (auto& o : model.net.offset) {
        param_blocks.push_back(&o);
        decayed.push_back(false);
    }
    if (param_blocks.size() != grad_blocks.size()) throw ConfigError("network gradient shape mismatch");
    for (std::size_t bi = 0; bi < param_blocks.size(); ++bi) {
        auto& params = *param_blocks[bi];
        const auto& gvals = *grad_blocks[bi];
        if (params.size() != gvals.size()) throw ConfigError("network gradient shape mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (decayed[bi]) params[i] -= lr_net * cfg.net_weight_decay * params[i];
            update_one(params[i], gvals[i], state.net_m[k], state.net_v[k], lr_net, ctx);
            ++k;
        }
    }
}

void optim_erase_gaussian(OptimState& state, std::size_t index) {
    const std::size_t begin = index * OptimState::kGaussianSlots;
    state.gauss_m.erase(state.gauss_m.begin() + static_cast<std::ptrdiff_t>(begin),
                        state.gauss_m.begin() +
                            static_cast<std::ptrdiff_t>(begin + OptimState::kGaussianSlots));
    state.gauss_v.erase(state.gauss_v.begin() + static_cast<std::ptrdiff_t>(begin),
                        state.gauss_v.begin() +
                            static_cast<std::ptrdiff_t>(begin + OptimState::kGaussianSlots));
}

void optim_append_gaussian(OptimState& state) {
    state.gauss_m.insert(state.gauss_m.end(), OptimState::kGaussianSlots, 0.0);
    state.gauss_v.insert(state.gauss_v.end(), OptimState::kGaussianSlots, 0.0);
}

} // namespace velsplat
