#pragma once

#include <string>
#include <vector>

#include "velsplat/vec.hpp"

namespace velsplat {

/// Row-major RGB image with values nominally in [0,1].
struct Frame {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    Frame() = default;
    Frame(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    static Frame filled(int w, int h, Vec3 color);
};

/// Binary PPM (P6, maxval 255); channel byte = round(clamp(v,0,1) * 255).
void write_ppm(const Frame& frame, const std::string& path);

/// Reads a P6 PPM back into unit-range doubles (byte / 255).
Frame read_ppm(const std::string& path);

} // namespace velsplat
