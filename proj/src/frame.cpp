#include "velsplat/frame.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "velsplat/errors.hpp"

namespace velsplat {

Frame Frame::filled(int w, int h, Vec3 color) {
    Frame f(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) f.at(x, y, c) = color[c];
    return f;
}

void write_ppm(const Frame& frame, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
    std::vector<unsigned char> bytes(frame.rgb.size());
    for (std::size_t i = 0; i < frame.rgb.size(); ++i) {
        const double v = std::clamp(frame.rgb[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

Frame read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw ParseError("not a maxval-255 P6 PPM: " + path, 0);
    in.get(); // single whitespace byte after the header
    const auto payload_start = static_cast<std::size_t>(in.tellg());
    Frame f(w, h);
    std::vector<unsigned char> bytes(f.rgb.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw ParseError("truncated PPM payload: " + path,
                         payload_start + static_cast<std::size_t>(in.gcount()));
    for (std::size_t i = 0; i < bytes.size(); ++i) f.rgb[i] = bytes[i] / 255.0;
    return f;
}

} // namespace velsplat
