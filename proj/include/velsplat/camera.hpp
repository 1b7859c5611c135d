#pragma once

#include "velsplat/mat.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// Pinhole camera. World-to-camera is p_cam = rot * p_world + trans; the
/// camera looks down +z and pixel (i, j) is sampled at (i + 0.5, j + 0.5).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    Mat3 rot = Mat3::identity();
    Vec3 trans{};
    double near = 0.01;
};

inline Vec3 world_to_cam(const Camera& cam, Vec3 p) {
    return {cam.rot(0, 0) * p.x + cam.rot(0, 1) * p.y + cam.rot(0, 2) * p.z + cam.trans.x,
            cam.rot(1, 0) * p.x + cam.rot(1, 1) * p.y + cam.rot(1, 2) * p.z + cam.trans.y,
            cam.rot(2, 0) * p.x + cam.rot(2, 1) * p.y + cam.rot(2, 2) * p.z + cam.trans.z};
}

} // namespace velsplat
