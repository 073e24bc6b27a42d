#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "imtfa/common.hpp"

namespace imtfa {

// Grayscale image, float values in [0,1], row-major.
struct Image {
    int height = 0, width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(size_t(h) * w, 0.f) {}

    float at(int r, int c) const { return data[size_t(r) * width + c]; }
    void set(int r, int c, float v) { data[size_t(r) * width + c] = v; }
};

// Lossless binary PGM (P5), 8-bit.
inline void save_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "save_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width));
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            const float v = std::clamp(img.at(r, c), 0.f, 1.f);
            row[size_t(c)] = uint8_t(v * 255.f + 0.5f);
        }
        out.write(reinterpret_cast<const char*>(row.data()), img.width);
    }
    check(out.good(), "save_pgm: write failed for " + path);
}

inline Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    check(magic == "P5", "load_pgm: not a binary PGM: " + path);
    int w = 0, h = 0, maxv = 0;
    in >> w >> h >> maxv;
    check(w > 0 && h > 0 && maxv == 255, "load_pgm: bad header in " + path);
    in.get();  // single whitespace after header
    Image img(h, w);
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int r = 0; r < h; ++r) {
        in.read(reinterpret_cast<char*>(row.data()), w);
        check(in.good(), "load_pgm: truncated file " + path);
        for (int c = 0; c < w; ++c) img.set(r, c, float(row[size_t(c)]) / 255.f);
    }
    return img;
}

}  // namespace imtfa
