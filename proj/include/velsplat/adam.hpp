#pragma once

#include <vector>

#include "velsplat/scene_model.hpp"

namespace velsplat {

/// Adam hyperparameters with one learning rate per parameter group. The
/// network group decays exponentially from lr_net_start to lr_net_end over
/// total_iterations and is the only group with (decoupled) weight decay.
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;

    double lr_position = 1.6e-4;
    double lr_scales = 5e-3;
    double lr_quats = 1e-3;
    double lr_opacity = 5e-2;
    double lr_rgb = 2.5e-3;
    double lr_anchors = 2e-3;
    double lr_net_start = 8e-4;
    double lr_net_end = 1.6e-6;
    double net_weight_decay = 1e-6;
    int total_iterations = 3000;

    bool operator==(const AdamConfig&) const = default;
};

/// First/second moment buffers mirroring SceneModel's parameters: a fixed
/// 20-slot block per Gaussian (mean4, q_l, q_r, log_scales, opacity, rgb),
/// then anchor components across all tracks, then the network in its
/// canonical visit order.
struct OptimState {
    static constexpr int kGaussianSlots = 20;

    AdamConfig config;
    std::vector<double> gauss_m, gauss_v;
    std::vector<double> anchor_m, anchor_v;
    std::vector<double> net_m, net_v;
    long step = 0;

    static OptimState init(const SceneModel& model, const AdamConfig& config);
};

/// One bias-corrected Adam update over every learnable parameter; rebuilds the
/// velocity prefix sums afterwards. Throws ConfigError on shape mismatch.
void adam_step(OptimState& state, SceneModel& model, const ModelGrads& grads);

/// Drops the moment block of a removed Gaussian, keeping alignment.
void optim_erase_gaussian(OptimState& state, std::size_t index);

/// Appends a zero moment block for a newly created Gaussian.
void optim_append_gaussian(OptimState& state);

} // namespace velsplat
