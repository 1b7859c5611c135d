#include "velsplat/scene_model.hpp"

namespace velsplat {

ModelGrads ModelGrads::zeros_like(const SceneModel& model) {
    ModelGrads g;
    g.gaussians.resize(model.gaussians.size());
    g.track_anchors.reserve(model.tracks.size());
    for (const auto& track : model.tracks)
        g.track_anchors.emplace_back(track.anchors.size(), Vec3{});
    g.net = DeformNetParams::zeros_like(model.net);
    return g;
}

void ModelGrads::accumulate(const ModelGrads& other) {
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        GaussianGrads& a = gaussians[i];
        const GaussianGrads& b = other.gaussians[i];
        a.mean4 += b.mean4;
        a.q_l = a.q_l + b.q_l;
        a.q_r = a.q_r + b.q_r;
        a.log_scales += b.log_scales;
        a.opacity_logit += b.opacity_logit;
        a.rgb += b.rgb;
    }
    for (std::size_t t = 0; t < track_anchors.size(); ++t)
        for (std::size_t k = 0; k < track_anchors[t].size(); ++k)
            track_anchors[t][k] += other.track_anchors[t][k];

    for (std::size_t l = 0; l < net.linear.size(); ++l) {
        for (std::size_t i = 0; i < net.linear[l].w.size(); ++i)
            net.linear[l].w[i] += other.net.linear[l].w[i];
        for (std::size_t i = 0; i < net.linear[l].b.size(); ++i)
            net.linear[l].b[i] += other.net.linear[l].b[i];
    }
    for (std::size_t l = 0; l < net.gain.size(); ++l)
        for (std::size_t i = 0; i < net.gain[l].size(); ++i) {
            net.gain[l][i] += other.net.gain[l][i];
            net.offset[l][i] += other.net.offset[l][i];
        }
}

} // namespace velsplat
