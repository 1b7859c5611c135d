#pragma once

#include <vector>

#include "velsplat/sym4.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// Piecewise-linear velocity field v(t) over [t_start, t_end], parameterized
/// by equidistant anchors. `prefix[k]` caches the exact trapezoid integral of
/// v from anchor 0 to anchor k, so whole-interval spans cost O(1).
///
/// Outside the domain v(t) clamps to the boundary anchor, which keeps the
/// displacement integral defined for temporal means that drift past the ends.
struct VelocityTrack {
    std::vector<Vec3> anchors;
    double t_start = 0.0;
    double t_end = 1.0;
    std::vector<Vec3> prefix;

    int anchor_count() const { return static_cast<int>(anchors.size()); }
    double stride() const { return (t_end - t_start) / (anchor_count() - 1); }
    double anchor_time(int k) const { return t_start + k * stride(); }

    /// All-zero track with n >= 2 anchors; prefix already consistent.
    static VelocityTrack zeros(int n, double t_start, double t_end);
};

/// Recompute prefix sums; must run after every anchor mutation.
void rebuild_prefix(VelocityTrack& track);

/// Clamped piecewise-linear interpolation of the anchors.
Vec3 velocity_at(const VelocityTrack& track, double t);

/// Exact integral of the interpolated velocity from mu_t to t (signed).
/// Intra-anchor spans use a single trapezoid; cross-anchor spans use boundary
/// trapezoids plus the prefix-sum interior.
Vec3 displacement(const VelocityTrack& track, double mu_t, double t);

/// Weights w such that displacement(mu_t, t) == sum_k w[k] * anchors[k],
/// i.e. the integrals of the clamped hat basis over [mu_t, t]. The exact
/// anchor gradient of displacement. `w` must have anchor_count() entries and
/// is accumulated into (not cleared).
void accumulate_displacement_anchor_weights(const VelocityTrack& track, double mu_t, double t,
                                            double scale, std::vector<double>& w);

/// Moved spatial mean at time t: mu_xyz + integral of v + intrinsic linear
/// drift xt/tt * (t - mu_t).
Vec3 total_mean_at(Vec4 mean4, const Sym4& cov, const VelocityTrack& track, double t);

} // namespace velsplat
