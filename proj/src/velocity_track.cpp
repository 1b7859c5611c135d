#include "velsplat/velocity_track.hpp"

#include <algorithm>
#include <cmath>

#include "velsplat/errors.hpp"

namespace velsplat {

namespace {

// Interval index such that t lies in [t_k, t_{k+1}], clamped to valid range.
int interval_index(const VelocityTrack& track, double t) {
    const int n = track.anchor_count();
    const double u = (t - track.t_start) / track.stride();
    int k = static_cast<int>(std::floor(u));
    return std::clamp(k, 0, n - 2);
}

} // namespace

VelocityTrack VelocityTrack::zeros(int n, double t_start, double t_end) {
    if (n < 2) throw InvalidParameterError("VelocityTrack: need at least 2 anchors");
    if (!(t_end > t_start)) throw InvalidParameterError("VelocityTrack: empty temporal domain");
    VelocityTrack track;
    track.anchors.assign(static_cast<std::size_t>(n), Vec3{});
    track.t_start = t_start;
    track.t_end = t_end;
    track.prefix.assign(static_cast<std::size_t>(n), Vec3{});
    return track;
}

void rebuild_prefix(VelocityTrack& track) {
    const int n = track.anchor_count();
    track.prefix.resize(static_cast<std::size_t>(n));
    track.prefix[0] = Vec3{};
    const double dt = track.stride();
    for (int k = 0; k + 1 < n; ++k)
        track.prefix[k + 1] = track.prefix[k] + 0.5 * dt * (track.anchors[k] + track.anchors[k + 1]);
}

Vec3 velocity_at(const VelocityTrack& track, double t) {
    if (t <= track.t_start) return track.anchors.front();
    if (t >= track.t_end) return track.anchors.back();
    const int k = interval_index(track, t);
    const double u = (t - track.anchor_time(k)) / track.stride();
    return (1.0 - u) * track.anchors[k] + u * track.anchors[k + 1];
}

Vec3 displacement(const VelocityTrack& track, double mu_t, double t) {
    if (t == mu_t) return {};
    if (t < mu_t) return -displacement(track, t, mu_t);

    double a = mu_t;
    double b = t;
    Vec3 acc{};

    // Clamped region left of the domain.
    if (a < track.t_start) {
        const double hi = std::min(b, track.t_start);
        acc += (hi - a) * track.anchors.front();
        a = hi;
    }
    // Clamped region right of the domain.
    if (b > track.t_end) {
        const double lo = std::max(a, track.t_end);
        acc += (b - lo) * track.anchors.back();
        b = lo;
    }
    if (!(b > a)) return acc;

    const int ka = interval_index(track, a);
    const int kb = interval_index(track, b);
    if (ka == kb) {
        acc += 0.5 * (b - a) * (velocity_at(track, a) + velocity_at(track, b));
    } else {
        const double ta1 = track.anchor_time(ka + 1);
        acc += 0.5 * (ta1 - a) * (velocity_at(track, a) + track.anchors[ka + 1]);
        acc += track.prefix[kb] - track.prefix[ka + 1];
        acc += 0.5 * (b - track.anchor_time(kb)) * (track.anchors[kb] + velocity_at(track, b));
    }
    return acc;
}

void accumulate_displacement_anchor_weights(const VelocityTrack& track, double mu_t, double t,
                                            double scale, std::vector<double>& w) {
    if (t == mu_t) return;
    if (t < mu_t) {
        accumulate_displacement_anchor_weights(track, t, mu_t, -scale, w);
        return;
    }

    const int n = track.anchor_count();
    double a = mu_t;
    double b = t;
    if (a < track.t_start) {
        const double hi = std::min(b, track.t_start);
        w[0] += scale * (hi - a);
        a = hi;
    }
    if (b > track.t_end) {
        const double lo = std::max(a, track.t_end);
        w[static_cast<std::size_t>(n - 1)] += scale * (b - lo);
        b = lo;
    }
    if (!(b > a)) return;

    const double dt = track.stride();
    const int ka = interval_index(track, a);
    const int kb = interval_index(track, b);
    for (int k = ka; k <= kb; ++k) {
        const double tk = track.anchor_time(k);
        const double lo = std::max(a, tk);
        const double hi = std::min(b, tk + dt);
        if (!(hi > lo)) continue;
        // On interval k, v = (1-u) anchors[k] + u anchors[k+1] with u linear in tau.
        const double u0 = (lo - tk) / dt;
        const double u1 = (hi - tk) / dt;
        const double du2 = 0.5 * (u1 * u1 - u0 * u0);
        w[static_cast<std::size_t>(k)] += scale * dt * ((u1 - u0) - du2);
        w[static_cast<std::size_t>(k + 1)] += scale * dt * du2;
    }
}

Vec3 total_mean_at(Vec4 mean4, const Sym4& cov, const VelocityTrack& track, double t) {
    const double tt = cov.tt();
    if (!(tt > kTemporalVarEps))
        throw DegenerateTemporalError("total_mean_at: temporal variance is degenerate");
    const double dt = t - mean4.w;
    return mean4.xyz() + displacement(track, mean4.w, t) + (dt / tt) * cov.cross_column();
}

} // namespace velsplat
