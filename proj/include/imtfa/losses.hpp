#pragma once

#include "imtfa/tensor.hpp"

namespace imtfa {

// Per-stage loss components, all non-negative. mask_loss stays 0 when
// the mask head is frozen or no foreground RoI carries a mask.
struct LossBreakdown {
    float cls_loss = 0.f;
    float box_loss = 0.f;
    float mask_loss = 0.f;
    float rpn_obj_loss = 0.f;
    float rpn_box_loss = 0.f;

    float total() const {
        return cls_loss + box_loss + mask_loss + rpn_obj_loss + rpn_box_loss;
    }
    bool finite() const { return std::isfinite(total()); }
};

inline float smooth_l1(float x) {
    const float ax = std::abs(x);
    return ax < 1.f ? 0.5f * x * x : ax - 0.5f;
}

inline float smooth_l1_grad(float x) {
    if (x > 1.f) return 1.f;
    if (x < -1.f) return -1.f;
    return x;
}

// Softmax cross-entropy of one score row against an integer label;
// writes dL/dscores.
inline float softmax_ce(const Vector& scores, int label, Vector& dscores) {
    const float mx = scores.maxCoeff();
    Vector p = (scores.array() - mx).exp();
    p /= p.sum();
    dscores = p;
    dscores(label) -= 1.f;
    return -std::log(std::max(p(label), 1e-12f));
}

// Binary cross-entropy with logits, mean over the grid; writes
// dL/dlogits (already divided by the pixel count).
inline float bce_with_logits(const Tensor& logits, const Tensor& target,
                             Tensor& dlogits) {
    check(logits.same_shape(target), "bce_with_logits: shape mismatch");
    dlogits = Tensor(logits.c, logits.h, logits.w);
    const float n = float(logits.size());
    float loss = 0.f;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        const float x = logits.data[i], t = target.data[i];
        // log(1+exp(-|x|)) formulation for stability
        loss += std::max(x, 0.f) - x * t + std::log1p(std::exp(-std::abs(x)));
        const float p = 1.f / (1.f + std::exp(-x));
        dlogits.data[i] = (p - t) / n;
    }
    return loss / n;
}

}  // namespace imtfa
