#pragma once

#include <array>
#include <cmath>

#include "velsplat/errors.hpp"
#include "velsplat/mat.hpp"
#include "velsplat/quat.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// Below this temporal variance, conditioning on time is refused.
inline constexpr double kTemporalVarEps = 1e-12;

/// Symmetric 4x4 spacetime covariance, stored as its upper triangle:
/// the 3x3 spatial block, the spatial-temporal cross column, and the
/// temporal variance scalar.
struct Sym4 {
    // [0..5]: spatial upper triangle (00,01,02,11,12,22); [6..8]: cross column; [9]: temporal.
    std::array<double, 10> a{};

    static constexpr int kSpatialIdx[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};

    double& xx(int i, int j) { return a[kSpatialIdx[i][j]]; }
    double xx(int i, int j) const { return a[kSpatialIdx[i][j]]; }
    double& xt(int i) { return a[6 + i]; }
    double xt(int i) const { return a[6 + i]; }
    double& tt() { return a[9]; }
    double tt() const { return a[9]; }

    Vec3 cross_column() const { return {a[6], a[7], a[8]}; }

    /// Full symmetric indexing over all 4 dimensions.
    double operator()(int i, int j) const {
        if (i == 3 && j == 3) return a[9];
        if (i == 3) return xt(j);
        if (j == 3) return xt(i);
        return xx(i, j);
    }

    Mat4 to_mat4() const {
        Mat4 out;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) out(i, j) = (*this)(i, j);
        return out;
    }

    static Sym4 identity() {
        Sym4 s;
        s.a[0] = s.a[3] = s.a[5] = s.a[9] = 1.0;
        return s;
    }
};

/// Covariance R diag(s)^2 R^T of a 4D Gaussian, with R the SO(4) rotation of
/// the quaternion pair. Strictly positive definite for positive scales.
inline Sym4 assemble_cov4(Quat q_l, Quat q_r, Vec4 scales) {
    for (int i = 0; i < 4; ++i)
        if (!(scales[i] > 0.0)) throw InvalidParameterError("assemble_cov4: scales must be positive");
    const Mat4 r = quat_pair_to_rot4(q_l, q_r);
    // M = R diag(s); Sigma = M M^T assembled directly into the upper triangle.
    Mat4 m;
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 4; ++k) m(i, k) = r(i, k) * scales[k];
    Sym4 out;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j)
            out.xx(i, j) = m(i, 0) * m(j, 0) + m(i, 1) * m(j, 1) + m(i, 2) * m(j, 2) + m(i, 3) * m(j, 3);
    for (int i = 0; i < 3; ++i)
        out.xt(i) = m(i, 0) * m(3, 0) + m(i, 1) * m(3, 1) + m(i, 2) * m(3, 2) + m(i, 3) * m(3, 3);
    out.tt() = m(3, 0) * m(3, 0) + m(3, 1) * m(3, 1) + m(3, 2) * m(3, 2) + m(3, 3) * m(3, 3);
    return out;
}

/// Congruence by the Galilean shear with velocity v, computed block-wise:
///   xx' = xx + v xt^T + xt v^T + v tt v^T,  xt' = xt + v tt,  tt' = tt.
/// Preserves symmetry, positive semi-definiteness, and the determinant.
inline Sym4 congruence_shear(const Sym4& cov, Vec3 v) {
    Sym4 out;
    const double tt = cov.tt();
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j)
            out.xx(i, j) = cov.xx(i, j) + v[i] * cov.xt(j) + cov.xt(i) * v[j] + v[i] * tt * v[j];
    for (int i = 0; i < 3; ++i) out.xt(i) = cov.xt(i) + v[i] * tt;
    out.tt() = tt;
    return out;
}

/// Materialized 4x4 shear matrix [[I3, v], [0, 1]]; determinant exactly 1.
inline Mat4 shear_matrix(Vec3 v) {
    Mat4 out = Mat4::identity();
    out(0, 3) = v.x;
    out(1, 3) = v.y;
    out(2, 3) = v.z;
    return out;
}

/// Schur complement of the temporal entry: xx - xt xt^T / tt.
/// Equals the conditional spatial covariance at any fixed time, and is
/// invariant under congruence_shear.
inline Mat3 schur_tt(const Sym4& cov) {
    const double tt = cov.tt();
    if (!(tt > kTemporalVarEps))
        throw DegenerateTemporalError("schur_tt: temporal variance is degenerate");
    const double inv_tt = 1.0 / tt;
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            out(i, j) = cov.xx(i, j) - cov.xt(i) * inv_tt * cov.xt(j);
    return out;
}

struct Moments3 {
    Vec3 mean;
    Mat3 cov;
};

/// Conditional 3D Gaussian of a 4D Gaussian at time t:
///   mean = mu_xyz + (t - mu_t) xt / tt,   cov = schur_tt.
inline Moments3 conditional_moments(Vec4 mean4, const Sym4& cov, double t) {
    Moments3 out;
    out.cov = schur_tt(cov); // also validates tt
    const double scale = (t - mean4.w) / cov.tt();
    out.mean = mean4.xyz() + scale * cov.cross_column();
    return out;
}

/// Conditional moments after shearing by instantaneous velocity v_t. The mean
/// gains v_t (t - mu_t); the covariance is the same schur_tt(cov) object, so
/// it never depends on v_t or t.
inline Moments3 conditional_moments_sheared(Vec4 mean4, const Sym4& cov, Vec3 v_t, double t) {
    Moments3 out;
    out.cov = schur_tt(cov);
    const double dt = t - mean4.w;
    out.mean = mean4.xyz() + (dt / cov.tt()) * cov.cross_column() + dt * v_t;
    return out;
}

/// Unnormalized temporal kernel exp(-0.5 (t - mu_t)^2 / tt); peak value 1 at mu_t.
inline double temporal_marginal(Vec4 mean4, const Sym4& cov, double t) {
    const double tt = cov.tt();
    if (!(tt > kTemporalVarEps))
        throw DegenerateTemporalError("temporal_marginal: temporal variance is degenerate");
    const double dt = t - mean4.w;
    return std::exp(-0.5 * dt * dt / tt);
}

} // namespace velsplat
