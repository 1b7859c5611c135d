#pragma once

#include <vector>

#include "velsplat/deform_net.hpp"
#include "velsplat/errors.hpp"
#include "velsplat/gaussian.hpp"
#include "velsplat/velocity_track.hpp"

namespace velsplat {

/// The full learnable state of a dynamic scene: Gaussians, velocity track(s),
/// and the deformation network, plus the ablation flags that switch each
/// motion pathway on or off.
struct SceneModel {
    std::vector<Gaussian4D> gaussians;
    std::vector<VelocityTrack> tracks;   // one shared track, or one per Gaussian
    DeformNetParams net;
    bool per_gaussian_tracks = false;
    bool velocity_enabled = true;
    bool net_enabled = false;
    bool modulated_opacity = true;

    const VelocityTrack& track_for(std::size_t gaussian_index) const {
        return tracks[per_gaussian_tracks ? gaussian_index : 0];
    }
    VelocityTrack& track_for(std::size_t gaussian_index) {
        return tracks[per_gaussian_tracks ? gaussian_index : 0];
    }

    void validate() const {
        if (tracks.empty()) throw ConfigError("model has no velocity track");
        if (per_gaussian_tracks && tracks.size() != gaussians.size())
            throw ConfigError("per-Gaussian tracks require one track per Gaussian");
        if (!per_gaussian_tracks && tracks.size() != 1)
            throw ConfigError("shared-track model must hold exactly one track");
    }
};

/// Gradients mirroring SceneModel's learnable parameters.
struct GaussianGrads {
    Vec4 mean4{};
    Quat q_l{0, 0, 0, 0};
    Quat q_r{0, 0, 0, 0};
    Vec4 log_scales{};
    double opacity_logit = 0.0;
    Vec3 rgb{};
};

struct ModelGrads {
    std::vector<GaussianGrads> gaussians;
    std::vector<std::vector<Vec3>> track_anchors; // matches model.tracks layout
    DeformNetParams net;                          // zero-shaped container

    static ModelGrads zeros_like(const SceneModel& model);
    void accumulate(const ModelGrads& other);
};

} // namespace velsplat
