#pragma once

#include "imtfa/geometry.hpp"
#include "imtfa/tensor.hpp"

namespace imtfa {

namespace detail {

// Bilinear sample at continuous (x,y); pixel (r,c) has its center at
// (c+0.5, r+0.5). Out-of-range neighbors contribute zero.
inline float bilinear_sample(const Tensor& f, int ch, float x, float y) {
    const float gx = x - 0.5f, gy = y - 0.5f;
    const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
    const float fx = gx - x0, fy = gy - y0;
    float acc = 0.f;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const int xi = x0 + dx, yi = y0 + dy;
            if (xi < 0 || xi >= f.w || yi < 0 || yi >= f.h) continue;
            const float wgt = (dx ? fx : 1.f - fx) * (dy ? fy : 1.f - fy);
            acc += wgt * f.at(ch, yi, xi);
        }
    return acc;
}

inline void bilinear_scatter(Tensor& df, int ch, float x, float y, float g) {
    const float gx = x - 0.5f, gy = y - 0.5f;
    const int x0 = int(std::floor(gx)), y0 = int(std::floor(gy));
    const float fx = gx - x0, fy = gy - y0;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const int xi = x0 + dx, yi = y0 + dy;
            if (xi < 0 || xi >= df.w || yi < 0 || yi >= df.h) continue;
            const float wgt = (dx ? fx : 1.f - fx) * (dy ? fy : 1.f - fy);
            df.at(ch, yi, xi) += wgt * g;
        }
}

}  // namespace detail

// Bilinear crop-resize of a box region (given in feature-map
// coordinates) to a pool x pool grid, one sample per output cell at the
// cell center.
inline Tensor roi_align(const Tensor& feature, const Box& box, int pool) {
    check(box.valid() && box.area() > 0.f, "roi_align: zero-area box");
    Tensor out(feature.c, pool, pool);
    const float bw = box.width() / float(pool);
    const float bh = box.height() / float(pool);
    for (int ch = 0; ch < feature.c; ++ch)
        for (int i = 0; i < pool; ++i)
            for (int j = 0; j < pool; ++j) {
                const float x = box.x1 + (j + 0.5f) * bw;
                const float y = box.y1 + (i + 0.5f) * bh;
                out.at(ch, i, j) = detail::bilinear_sample(feature, ch, x, y);
            }
    return out;
}

// Accumulates dL/dfeature for one pooled RoI.
inline void roi_align_backward(const Box& box, int pool, const Tensor& dpooled,
                               Tensor& dfeature) {
    const float bw = box.width() / float(pool);
    const float bh = box.height() / float(pool);
    for (int ch = 0; ch < dfeature.c; ++ch)
        for (int i = 0; i < pool; ++i)
            for (int j = 0; j < pool; ++j) {
                const float x = box.x1 + (j + 0.5f) * bw;
                const float y = box.y1 + (i + 0.5f) * bh;
                detail::bilinear_scatter(dfeature, ch, x, y, dpooled.at(ch, i, j));
            }
}

}  // namespace imtfa
