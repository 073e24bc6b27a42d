#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "imtfa/common.hpp"
#include "imtfa/geometry.hpp"

namespace imtfa {

// Dense binary mask, row-major, values in {0,1}.
struct BinaryMask {
    int height = 0, width = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), data(size_t(h) * w, 0) {
        check(h > 0 && w > 0, "BinaryMask: non-positive dimensions");
    }

    uint8_t at(int r, int c) const { return data[size_t(r) * width + c]; }
    void set(int r, int c, uint8_t v) { data[size_t(r) * width + c] = v; }

    size_t count() const {
        return size_t(std::accumulate(data.begin(), data.end(), 0L));
    }
    bool empty_mask() const { return count() == 0; }

    bool operator==(const BinaryMask& o) const {
        return height == o.height && width == o.width && data == o.data;
    }
};

// COCO-convention run-length encoding: column-major scan (top-to-bottom
// within a column, columns left-to-right), first run counts zeros and
// may be zero-length.
struct RLEMask {
    int height = 0, width = 0;
    std::vector<uint32_t> counts;
};

inline RLEMask rle_encode(const BinaryMask& m) {
    RLEMask r;
    r.height = m.height;
    r.width = m.width;
    uint32_t run = 0;
    uint8_t cur = 0;
    for (int c = 0; c < m.width; ++c) {
        for (int rr = 0; rr < m.height; ++rr) {
            const uint8_t v = m.at(rr, c);
            if (v != cur) {
                r.counts.push_back(run);
                run = 0;
                cur = v;
            }
            ++run;
        }
    }
    r.counts.push_back(run);
    return r;
}

inline BinaryMask rle_decode(const RLEMask& r) {
    check(r.height > 0 && r.width > 0, "rle_decode: non-positive dimensions");
    uint64_t total = 0;
    for (uint32_t c : r.counts) total += c;
    check(total == uint64_t(r.height) * r.width,
          "rle_decode: counts sum to " + std::to_string(total) + ", expected " +
              std::to_string(uint64_t(r.height) * r.width));
    BinaryMask m(r.height, r.width);
    uint64_t pos = 0;
    uint8_t v = 0;
    for (uint32_t c : r.counts) {
        for (uint32_t i = 0; i < c; ++i) {
            const int col = int(pos / r.height);
            const int row = int(pos % r.height);
            m.set(row, col, v);
            ++pos;
        }
        v = !v;
    }
    return m;
}

inline float mask_iou(const BinaryMask& a, const BinaryMask& b) {
    check(a.height == b.height && a.width == b.width,
          "mask_iou: dimension mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool av = a.data[i] != 0, bv = b.data[i] != 0;
        inter += size_t(av && bv);
        uni += size_t(av || bv);
    }
    if (uni == 0) return 0.f;
    return float(double(inter) / double(uni));
}

// Tight bounding box of the set pixels; pixel (r,c) occupies
// [c,c+1) x [r,r+1).
inline Box mask_to_box(const BinaryMask& m) {
    int rmin = m.height, rmax = -1, cmin = m.width, cmax = -1;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    check(rmax >= 0, "mask_to_box: empty mask");
    Box b;
    b.x1 = float(cmin);
    b.y1 = float(rmin);
    b.x2 = float(cmax + 1);
    b.y2 = float(rmax + 1);
    return b;
}

}  // namespace imtfa
