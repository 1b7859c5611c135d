#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "velsplat/adam.hpp"
#include "velsplat/camera.hpp"
#include "velsplat/frame.hpp"
#include "velsplat/metrics.hpp"
#include "velsplat/scene_model.hpp"

namespace velsplat {

/// Multi-view, multi-time image collection. Items reference cameras and
/// timestamps by index so a view can appear at many times and vice versa.
struct Dataset {
    struct Item {
        int camera = 0;
        int time = 0;
        Frame image;
    };

    std::vector<Camera> cameras;
    std::vector<double> timestamps;
    std::vector<Item> items;   // training views
    std::vector<Item> holdout; // evaluation views, never trained on
    Vec3 background{};

    void validate() const;
};

/// For interrupted runs, set adam.total_iterations and densify_end to the
/// full planned length explicitly: the defaults derive from `iterations` of
/// the current call, which differs between the partial runs.
struct TrainConfig {
    int iterations = 3000;
    LossConfig loss;
    AdamConfig adam; // total_iterations <= 0 means "use `iterations`"

    int densify_interval = 200; // 0 disables densification entirely
    int densify_end = -1;       // < 0 means iterations / 2
    double prune_opacity = 0.005;
    double clone_grad_threshold = 2e-4;
    std::size_t max_gaussians = 4000;

    int eval_interval = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    // Wall-clock timing is real output but breaks byte-identical logs; off by
    // default so repeated runs produce identical metrics files.
    bool log_wallclock = false;
    std::string diagnostic_path; // checkpoint dumped here when the loss diverges

    bool operator==(const TrainConfig&) const = default;
};

/// Mutable training-loop state. Holding it outside fit() makes checkpointed
/// resumes exactly equivalent to an uninterrupted run.
struct TrainState {
    OptimState optim;
    std::mt19937_64 rng{1};
    int iteration = 0;

    // densification bookkeeping since the last densify event
    std::vector<double> grad_accum;       // per gaussian: summed positional gradient norm
    std::vector<int> grad_count;
    std::vector<unsigned char> live_any;  // rendered non-culled at least once

    // train-loss window since the last metrics record
    double loss_accum = 0.0;
    int loss_count = 0;

    static TrainState init(const SceneModel& model, const TrainConfig& cfg);
};

struct MetricsRow {
    int iteration = 0;
    double wall_s = 0.0;
    double train_loss = 0.0;
    double holdout_psnr = 0.0; // most recent evaluation; 0 before the first
    double holdout_ssim = 0.0;
    std::size_t gaussians = 0;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    std::string to_tsv() const;
};

/// Prune weak or never-rendered Gaussians and split high-gradient ones along
/// their largest scale axis (children shrink by 0.8). Keeps per-Gaussian
/// tracks and optimizer moments aligned. Resets the gradient statistics.
void densify_prune(SceneModel& model, TrainState& state, const TrainConfig& cfg);

/// Runs the fitting loop from state->iteration (fresh state when null) up to
/// cfg.iterations: sample a training item, render, loss, backward, Adam step,
/// periodic holdout evaluation and densification. Throws DivergenceError on a
/// non-finite loss, writing cfg.diagnostic_path first when set.
MetricsLog fit(SceneModel& model, const Dataset& data, const TrainConfig& cfg,
               TrainState* state = nullptr);

} // namespace velsplat
