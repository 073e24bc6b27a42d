#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "imtfa/common.hpp"

namespace imtfa {

// Axis-aligned box in continuous image coordinates, half-open:
// [x1,x2) x [y1,y2). Area = (x2-x1)*(y2-y1), no +1 pixel convention.
struct Box {
    float x1 = 0.f, y1 = 0.f, x2 = 0.f, y2 = 0.f;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return width() * height(); }
    float cx() const { return 0.5f * (x1 + x2); }
    float cy() const { return 0.5f * (y1 + y2); }

    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
               std::isfinite(y2) && x1 <= x2 && y1 <= y2;
    }

    bool operator==(const Box& o) const {
        return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
    }

    Box clipped(float w, float h) const {
        Box b;
        b.x1 = std::clamp(x1, 0.f, w);
        b.y1 = std::clamp(y1, 0.f, h);
        b.x2 = std::clamp(x2, 0.f, w);
        b.y2 = std::clamp(y2, 0.f, h);
        return b;
    }
};

inline float box_iou(const Box& a, const Box& b) {
    check(a.valid() && b.valid(), "box_iou: invalid box");
    const float ix1 = std::max(a.x1, b.x1);
    const float iy1 = std::max(a.y1, b.y1);
    const float ix2 = std::min(a.x2, b.x2);
    const float iy2 = std::min(a.y2, b.y2);
    const float iw = std::max(0.f, ix2 - ix1);
    const float ih = std::max(0.f, iy2 - iy1);
    const float inter = iw * ih;
    const float uni = a.area() + b.area() - inter;
    if (uni <= 0.f) return 0.f;
    return inter / uni;
}

// Box regression parameterization shared by the RPN and the box head:
// (dx, dy) are center shifts relative to the reference size, (dw, dh)
// are log-scale factors.
struct BoxDelta {
    float dx = 0.f, dy = 0.f, dw = 0.f, dh = 0.f;
};

inline BoxDelta encode_delta(const Box& target, const Box& ref) {
    check(ref.width() > 0.f && ref.height() > 0.f, "encode_delta: degenerate reference box");
    check(target.width() > 0.f && target.height() > 0.f, "encode_delta: degenerate target box");
    BoxDelta d;
    d.dx = (target.cx() - ref.cx()) / ref.width();
    d.dy = (target.cy() - ref.cy()) / ref.height();
    d.dw = std::log(target.width() / ref.width());
    d.dh = std::log(target.height() / ref.height());
    return d;
}

inline Box decode_delta(const BoxDelta& d, const Box& ref) {
    const float cx = ref.cx() + d.dx * ref.width();
    const float cy = ref.cy() + d.dy * ref.height();
    // clamp the log-scale so a wild regression output cannot overflow
    const float w = ref.width() * std::exp(std::min(d.dw, 6.f));
    const float h = ref.height() * std::exp(std::min(d.dh, 6.f));
    Box b;
    b.x1 = cx - 0.5f * w;
    b.y1 = cy - 0.5f * h;
    b.x2 = cx + 0.5f * w;
    b.y2 = cy + 0.5f * h;
    return b;
}

// Greedy NMS. Input indices are considered in the given order (callers
// pass them sorted by score descending); returns surviving indices.
inline std::vector<int> nms(const std::vector<Box>& boxes,
                            const std::vector<int>& order, float iou_thresh) {
    std::vector<int> keep;
    for (int idx : order) {
        bool suppressed = false;
        for (int k : keep) {
            if (box_iou(boxes[idx], boxes[k]) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) keep.push_back(idx);
    }
    return keep;
}

}  // namespace imtfa
