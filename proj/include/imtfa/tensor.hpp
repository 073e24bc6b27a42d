#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "imtfa/common.hpp"

namespace imtfa {

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

// Dense CHW float tensor.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), data(size_t(c_) * h_ * w_, 0.f) {}

    float at(int ch, int r, int col) const {
        return data[(size_t(ch) * h + r) * w + col];
    }
    float& at(int ch, int r, int col) {
        return data[(size_t(ch) * h + r) * w + col];
    }
    size_t size() const { return data.size(); }

    bool same_shape(const Tensor& o) const {
        return c == o.c && h == o.h && w == o.w;
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace imtfa
