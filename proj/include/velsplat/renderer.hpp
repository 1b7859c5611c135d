#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "velsplat/camera.hpp"
#include "velsplat/deform_net.hpp"
#include "velsplat/frame.hpp"
#include "velsplat/gaussian.hpp"
#include "velsplat/scene_model.hpp"
#include "velsplat/sym4.hpp"
#include "velsplat/velocity_track.hpp"

namespace velsplat {

inline constexpr double kTemporalCullThreshold = 0.05;
inline constexpr double kCovDilation = 0.3;
inline constexpr double kAlphaClamp = 0.999;
// exp(-4.5), the Gaussian falloff at the 3-sigma boundary. Skipping weaker
// contributions makes the bounding-box truncation exact for opacities <= 1:
// everything outside the box is below this threshold anyway.
inline constexpr double kAlphaSkip = 0.011108996538242306;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kTruncationSigmas = 3.0;
inline constexpr int kTileSize = 16;

struct SlicedGaussian {
    Vec3 mean3;
    Mat3 cov3;
    double eff_opacity = 0.0;
    Vec3 rgb; // clamped to [0,1]
};

/// Conditions a 4D Gaussian at time t: deformed geometry, velocity-shifted
/// mean, Schur-complement covariance, temporally modulated opacity. Returns
/// nothing when the temporal kernel falls below the cull threshold. Passing
/// net == nullptr disables the deformation path; velocity_enabled == false
/// ignores the track (and zeroes the network's velocity feature).
std::optional<SlicedGaussian> slice_gaussian(const Gaussian4D& g, const VelocityTrack& track,
                                             const DeformNetParams* net, double t,
                                             bool velocity_enabled = true,
                                             bool modulated_opacity = true);

struct ProjectedSplat {
    Vec2 mean2;
    Sym2 cov2; // includes the anti-aliasing dilation
    double depth = 0.0;
};

/// Perspective EWA projection; returns nothing when the camera-space depth is
/// in front of the near plane.
std::optional<ProjectedSplat> project(Vec3 mean3, const Mat3& cov3, const Camera& cam);

struct RenderSplat {
    Vec2 mean2;
    Sym2 cov2;
    double depth = 0.0;
    double eff_opacity = 0.0;
    Vec3 rgb;
};

/// Per-pixel compositing state captured by the forward pass so the backward
/// pass can replay each pixel's contributor list exactly.
struct RasterCache {
    std::vector<int> order;           // splat indices sorted by (depth, index)
    std::vector<double> final_t;      // per pixel
    std::vector<int> n_contrib;       // per pixel: list positions consumed
    std::uint64_t decision_hash = 0;  // all discrete branch outcomes
};

Frame rasterize(const std::vector<RenderSplat>& splats, const Camera& cam, Vec3 background,
                RasterCache* cache = nullptr, double truncation_sigmas = kTruncationSigmas,
                int threads = 1);

struct SplatGrads {
    Vec2 mean2{};
    Sym2 cov2{};       // full-matrix symmetric gradient
    double eff_opacity = 0.0;
    Vec3 rgb{};
};

std::vector<SplatGrads> rasterize_backward(const std::vector<RenderSplat>& splats,
                                           const Camera& cam, Vec3 background,
                                           const RasterCache& cache, const Frame& dframe,
                                           double truncation_sigmas = kTruncationSigmas,
                                           int threads = 1);

/// Everything render() caches for render_backward(): per-Gaussian slice and
/// projection intermediates plus the rasterizer's replay state.
struct RenderCache {
    struct PerGaussian {
        bool culled = true;
        bool projected = false;
        DeformOut residuals;
        DeformCache net_cache;
        Vec4 scales4;
        Quat q_l_def, q_r_def; // post-residual, pre-normalization
        Sym4 cov4;
        double kernel = 0.0;
        SlicedGaussian sliced;
        Vec3 p_cam;
        ProjectedSplat splat;
        int splat_index = -1; // position in the compact splat list
    };
    std::vector<PerGaussian> gaussians;
    std::vector<RenderSplat> splats;
    std::vector<int> splat_to_gaussian;
    Vec3 background;
    RasterCache raster;
    std::uint64_t decision_hash = 0;
};

Frame render(const SceneModel& model, const Camera& cam, double t, Vec3 background = {},
             RenderCache* cache = nullptr, int threads = 1);

ModelGrads render_backward(const SceneModel& model, const Camera& cam, double t,
                           const Frame& dframe, const RenderCache& cache, int threads = 1);

/// Truncation-free renderer: evaluates every splat at every pixel with no
/// bounding boxes, no alpha skip, and no early termination. Slow and simple;
/// the fast rasterizer is validated against it.
Frame render_reference(const SceneModel& model, const Camera& cam, double t,
                       Vec3 background = {});

} // namespace velsplat
