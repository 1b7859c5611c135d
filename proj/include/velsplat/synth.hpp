#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velsplat/camera.hpp"
#include "velsplat/quat.hpp"
#include "velsplat/scene_model.hpp"
#include "velsplat/trainer.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// One analytically moving ground-truth blob. The trajectory is exact closed
/// form, so recovered motion can be scored against it without any fitting in
/// the oracle itself.
struct MoverSpec {
    enum class Kind { kConstant, kQuadratic, kSinusoidal };

    Kind kind = Kind::kConstant;
    Vec3 start{};
    Vec3 velocity{};        // linear term, all kinds
    Vec3 accel{};           // quadratic: position += 0.5 * accel * t^2
    Vec3 amplitude{};       // sinusoidal: position += amplitude * sin(2 pi f t + phase)
    double frequency = 1.0; // cycles per unit time
    double phase = 0.0;     // radians

    Vec3 scales{0.08, 0.08, 0.08};
    Quat q_l = Quat::identity();
    Quat q_r = Quat::identity();
    double pulse = 0.0;      // relative scale modulation: scales *= 1 + pulse * sin(2 pi pf t)
    double pulse_freq = 1.0; // cycles per unit time
    Vec3 rgb{0.8, 0.8, 0.8};
    double opacity = 0.95;
    double t_center = 0.5;
    double t_extent = 10.0; // temporal sigma; default is wide enough to never fade
};

Vec3 mover_position(const MoverSpec& m, double t);

struct SceneSpec {
    int width = 64;
    int height = 64;
    int time_count = 60;
    double t0 = 0.0;
    double t1 = 1.0;
    Vec3 background{0.05, 0.05, 0.08};
    int holdout_camera = -1; // index into cameras, -1 holds out nothing
    std::uint64_t seed = 1;
    std::vector<Camera> cameras;
    std::vector<MoverSpec> movers;

    void validate() const; // ConfigError naming the offending field
};

/// Pinhole camera at `eye` with +z toward `target`; fov_deg is the horizontal
/// field of view. Throws ConfigError when eye == target or forward || up.
Camera look_at_camera(Vec3 eye, Vec3 target, double fov_deg, int width, int height,
                      Vec3 up = {0.0, 1.0, 0.0});

/// One [scene] section plus repeatable [camera] (eye/look_at/fov_deg),
/// [orbit] (center/radius/height/span_deg/count/fov_deg, expanded into
/// `count` cameras on an arc), and [mover] sections.
SceneSpec parse_scene_spec(const std::string& text);

struct SynthResult {
    Dataset data;                          // holdout camera's items land in data.holdout
    std::vector<std::vector<Vec3>> oracle; // [mover][time index], aligned with data.timestamps
    Vec3 scene_min{};                      // oracle bounding box plus a 3-sigma margin
    Vec3 scene_max{};
    int holdout_camera = -1;

    void validate() const;
};

/// Renders every (camera, timestamp) pair with the truncation-free reference
/// renderer from per-timestamp analytically posed Gaussians. The posing
/// cancels the intrinsic covariance velocity, so each sliced center equals
/// mover_position exactly even for rotated anisotropic movers.
SynthResult synth_scene(const SceneSpec& spec);

/// Directory layout: dataset.txt manifest, cameras.txt (one camera per line),
/// times.txt, frame_c{c}_t{i}.ppm, and oracle_traj.tsv when movers exist.
void save_dataset(const std::string& dir, const SynthResult& result);
SynthResult load_dataset(const std::string& dir);

inline double scene_extent(Vec3 scene_min, Vec3 scene_max) {
    return norm(scene_max - scene_min);
}

/// Motion-recovery error: each mover is matched to the fitted Gaussian whose
/// sliced center tracks it best (mean distance over the times where the
/// Gaussian is live), then scored as the RMS distance over those times; the
/// result is the mean over movers. Unnormalized; divide by scene_extent for a
/// relative figure.
double trajectory_rmse(const SceneModel& model, const std::vector<double>& timestamps,
                       const std::vector<std::vector<Vec3>>& oracle);

} // namespace velsplat
