#pragma once

#include <cmath>

#include "velsplat/errors.hpp"
#include "velsplat/mat.hpp"

namespace velsplat {

inline constexpr double kQuatNormEps = 1e-12;

struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
};

inline Quat operator+(Quat a, Quat b) { return {a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Quat operator*(double s, Quat a) { return {s * a.w, s * a.x, s * a.y, s * a.z}; }

/// Hamilton product a ⊗ b.
inline Quat hamilton(Quat a, Quat b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

inline Quat normalized(Quat q) {
    const double n = q.norm();
    if (n <= kQuatNormEps) throw InvalidParameterError("cannot normalize near-zero quaternion");
    const double inv = 1.0 / n;
    return {q.w * inv, q.x * inv, q.y * inv, q.z * inv};
}

/// Rotation matrix of a (not necessarily unit) quaternion; normalizes internally.
inline Mat3 quat_to_rot3(Quat q) {
    const Quat u = normalized(q);
    const double w = u.w, x = u.x, y = u.y, z = u.z;
    Mat3 r;
    r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
    r(0, 1) = 2.0 * (x * y - w * z);
    r(0, 2) = 2.0 * (x * z + w * y);
    r(1, 0) = 2.0 * (x * y + w * z);
    r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
    r(1, 2) = 2.0 * (y * z - w * x);
    r(2, 0) = 2.0 * (x * z - w * y);
    r(2, 1) = 2.0 * (y * z + w * x);
    r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Left-isoclinic matrix of q: the linear map v ↦ q ⊗ v on (w,x,y,z) coordinates.
/// Orthogonal with det 1 when q is unit.
inline Mat4 left_isoclinic(Quat q) {
    Mat4 l;
    l(0, 0) = q.w;  l(0, 1) = -q.x; l(0, 2) = -q.y; l(0, 3) = -q.z;
    l(1, 0) = q.x;  l(1, 1) = q.w;  l(1, 2) = -q.z; l(1, 3) = q.y;
    l(2, 0) = q.y;  l(2, 1) = q.z;  l(2, 2) = q.w;  l(2, 3) = -q.x;
    l(3, 0) = q.z;  l(3, 1) = -q.y; l(3, 2) = q.x;  l(3, 3) = q.w;
    return l;
}

/// Right-isoclinic matrix of q: the linear map v ↦ v ⊗ q.
inline Mat4 right_isoclinic(Quat q) {
    Mat4 r;
    r(0, 0) = q.w;  r(0, 1) = -q.x; r(0, 2) = -q.y; r(0, 3) = -q.z;
    r(1, 0) = q.x;  r(1, 1) = q.w;  r(1, 2) = q.z;  r(1, 3) = -q.y;
    r(2, 0) = q.y;  r(2, 1) = -q.z; r(2, 2) = q.w;  r(2, 3) = q.x;
    r(3, 0) = q.z;  r(3, 1) = q.y;  r(3, 2) = -q.x; r(3, 3) = q.w;
    return r;
}

/// SO(4) rotation from a quaternion pair: left_isoclinic(q_l) * right_isoclinic(q_r),
/// both factors normalized internally. Any rotation of R^4 factors this way.
inline Mat4 quat_pair_to_rot4(Quat q_l, Quat q_r) {
    return left_isoclinic(normalized(q_l)) * right_isoclinic(normalized(q_r));
}

} // namespace velsplat
