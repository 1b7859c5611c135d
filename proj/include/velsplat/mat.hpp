#pragma once

#include <array>
#include <cmath>

#include "velsplat/vec.hpp"

namespace velsplat {

/// Symmetric 2x2 matrix [[a, b], [b, c]].
struct Sym2 {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    double det() const { return a * c - b * b; }
};

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    double& operator()(int r, int c) { return m[3 * r + c]; }
    double operator()(int r, int c) const { return m[3 * r + c]; }

    static Mat3 identity() {
        Mat3 out;
        out(0, 0) = out(1, 1) = out(2, 2) = 1.0;
        return out;
    }

    Mat3 transposed() const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out(c, r) = (*this)(r, c);
        return out;
    }

    double det() const {
        const Mat3& a = *this;
        return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
               a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
               a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    }
};

inline Mat3 operator+(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = a.m[i] + b.m[i];
    return out;
}

inline Mat3 operator-(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = a.m[i] - b.m[i];
    return out;
}

inline Mat3 operator*(double s, const Mat3& a) {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = s * a.m[i];
    return out;
}

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a(r, k) * b(k, c);
            out(r, c) = acc;
        }
    return out;
}

inline Vec3 operator*(const Mat3& a, Vec3 v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

/// Row-major 4x4 matrix.
struct Mat4 {
    std::array<double, 16> m{};

    double& operator()(int r, int c) { return m[4 * r + c]; }
    double operator()(int r, int c) const { return m[4 * r + c]; }

    static Mat4 identity() {
        Mat4 out;
        out(0, 0) = out(1, 1) = out(2, 2) = out(3, 3) = 1.0;
        return out;
    }

    Mat4 transposed() const {
        Mat4 out;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) out(c, r) = (*this)(r, c);
        return out;
    }

    double det() const;
};

inline Mat4 operator*(const Mat4& a, const Mat4& b) {
    Mat4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += a(r, k) * b(k, c);
            out(r, c) = acc;
        }
    return out;
}

inline Vec4 operator*(const Mat4& a, Vec4 v) {
    Vec4 out;
    for (int r = 0; r < 4; ++r)
        out[r] = a(r, 0) * v.x + a(r, 1) * v.y + a(r, 2) * v.z + a(r, 3) * v.w;
    return out;
}

// Cofactor expansion along the first row.
inline double Mat4::det() const {
    const Mat4& a = *this;
    auto minor3 = [&](int skip_col) {
        Mat3 s;
        int cc = 0;
        for (int c = 0; c < 4; ++c) {
            if (c == skip_col) continue;
            for (int r = 1; r < 4; ++r) s(r - 1, cc) = a(r, c);
            ++cc;
        }
        return s.det();
    };
    return a(0, 0) * minor3(0) - a(0, 1) * minor3(1) + a(0, 2) * minor3(2) -
           a(0, 3) * minor3(3);
}

inline double max_abs(const Mat3& a) {
    double out = 0.0;
    for (double v : a.m) out = std::max(out, std::abs(v));
    return out;
}

inline double max_abs(const Mat4& a) {
    double out = 0.0;
    for (double v : a.m) out = std::max(out, std::abs(v));
    return out;
}

} // namespace velsplat
