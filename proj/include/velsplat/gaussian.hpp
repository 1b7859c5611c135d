#pragma once

#include <cmath>

#include "velsplat/quat.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// One 4D Gaussian primitive. Scales are stored as logs so the optimizer can
/// roam freely; opacity is stored as a logit for the same reason.
struct Gaussian4D {
    Vec4 mean4{};                    // (x, y, z, t)
    Quat q_l = Quat::identity();
    Quat q_r = Quat::identity();
    Vec4 log_scales{};               // log of (s_x, s_y, s_z, s_t)
    double opacity_logit = 0.0;
    Vec3 rgb{};                      // clamped to [0,1] at render time
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double opacity(const Gaussian4D& g) { return sigmoid(g.opacity_logit); }

inline Vec4 scales(const Gaussian4D& g) {
    return {std::exp(g.log_scales.x), std::exp(g.log_scales.y), std::exp(g.log_scales.z),
            std::exp(g.log_scales.w)};
}

} // namespace velsplat
