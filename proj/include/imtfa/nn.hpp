#pragma once

#include <string>
#include <vector>

#include "imtfa/rng.hpp"
#include "imtfa/tensor.hpp"

namespace imtfa {

// One learnable block: value, gradient, momentum buffer. Matrices are
// also used for biases (n x 1).
struct Param {
    std::string name;
    Matrix v, g, m;
    bool frozen = false;

    void init(const std::string& n, int rows, int cols) {
        name = n;
        v = Matrix::Zero(rows, cols);
        g = Matrix::Zero(rows, cols);
        m = Matrix::Zero(rows, cols);
    }

    void he_init(Rng& rng, int fan_in) {
        const float std = std::sqrt(2.f / float(fan_in));
        for (Eigen::Index i = 0; i < v.size(); ++i)
            v.data()[i] = rng.normal(0.f, std);
    }
};

struct SgdConfig {
    float lr = 0.01f;
    float momentum = 0.9f;
    float weight_decay = 0.f;
};

inline void sgd_step(std::vector<Param*>& params, const SgdConfig& cfg) {
    for (Param* p : params) {
        if (p->frozen) continue;
        if (cfg.weight_decay > 0.f) p->g += cfg.weight_decay * p->v;
        p->m = cfg.momentum * p->m - cfg.lr * p->g;
        p->v += p->m;
    }
}

inline void zero_grads(std::vector<Param*>& params) {
    for (Param* p : params) p->g.setZero();
}

inline void relu_inplace(Tensor& t) {
    for (float& v : t.data)
        if (v < 0.f) v = 0.f;
}

// dx = dy where the forward output was positive. `y` is the post-ReLU
// activation.
inline void relu_backward_inplace(const Tensor& y, Tensor& dy) {
    for (size_t i = 0; i < y.data.size(); ++i)
        if (y.data[i] <= 0.f) dy.data[i] = 0.f;
}

namespace detail {

inline Matrix im2col(const Tensor& x, int k, int stride, int pad, int h_out,
                     int w_out) {
    Matrix cols(x.c * k * k, h_out * w_out);
    cols.setZero();
    for (int ch = 0; ch < x.c; ++ch)
        for (int kr = 0; kr < k; ++kr)
            for (int kc = 0; kc < k; ++kc) {
                const int row = (ch * k + kr) * k + kc;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride + kr - pad;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride + kc - pad;
                        if (ix < 0 || ix >= x.w) continue;
                        cols(row, oy * w_out + ox) = x.at(ch, iy, ix);
                    }
                }
            }
    return cols;
}

inline void col2im_accumulate(const Matrix& cols, int k, int stride, int pad,
                              int h_out, int w_out, Tensor& dx) {
    for (int ch = 0; ch < dx.c; ++ch)
        for (int kr = 0; kr < k; ++kr)
            for (int kc = 0; kc < k; ++kc) {
                const int row = (ch * k + kr) * k + kc;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride + kr - pad;
                    if (iy < 0 || iy >= dx.h) continue;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride + kc - pad;
                        if (ix < 0 || ix >= dx.w) continue;
                        dx.at(ch, iy, ix) += cols(row, oy * w_out + ox);
                    }
                }
            }
}

}  // namespace detail

// Stateless 2D convolution. Backward recomputes im2col from the saved
// input, so layers hold no per-call caches and inference stays
// reentrant.
struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    Param weight;  // out_c x (in_c*k*k)
    Param bias;    // out_c x 1

    void init(const std::string& name, int in, int out, int kernel, int s,
              int p, Rng& rng) {
        in_c = in;
        out_c = out;
        k = kernel;
        stride = s;
        pad = p;
        weight.init(name + ".w", out, in * kernel * kernel);
        weight.he_init(rng, in * kernel * kernel);
        bias.init(name + ".b", out, 1);
    }

    Tensor forward(const Tensor& x) const {
        check(x.c == in_c, "Conv2d: channel mismatch");
        const int h_out = (x.h + 2 * pad - k) / stride + 1;
        const int w_out = (x.w + 2 * pad - k) / stride + 1;
        const Matrix cols = detail::im2col(x, k, stride, pad, h_out, w_out);
        Matrix y = weight.v * cols;
        y.colwise() += bias.v.col(0);
        Tensor out(out_c, h_out, w_out);
        for (int ch = 0; ch < out_c; ++ch)
            for (int i = 0; i < h_out * w_out; ++i)
                out.data[size_t(ch) * h_out * w_out + i] = y(ch, i);
        return out;
    }

    // Accumulates parameter grads; returns dL/dx.
    Tensor backward(const Tensor& x, const Tensor& dy) {
        const int h_out = dy.h, w_out = dy.w;
        Matrix dy_mat(out_c, h_out * w_out);
        for (int ch = 0; ch < out_c; ++ch)
            for (int i = 0; i < h_out * w_out; ++i)
                dy_mat(ch, i) = dy.data[size_t(ch) * h_out * w_out + i];
        const Matrix cols = detail::im2col(x, k, stride, pad, h_out, w_out);
        weight.g += dy_mat * cols.transpose();
        bias.g.col(0) += dy_mat.rowwise().sum();
        const Matrix dcols = weight.v.transpose() * dy_mat;
        Tensor dx(x.c, x.h, x.w);
        detail::col2im_accumulate(dcols, k, stride, pad, h_out, w_out, dx);
        return dx;
    }

    std::vector<Param*> params() { return {&weight, &bias}; }
};

// 2x upsampling transposed convolution, kernel 2 stride 2.
struct Deconv2x {
    int in_c = 0, out_c = 0;
    Param weight;  // (in_c*4) x out_c
    Param bias;    // out_c x 1

    void init(const std::string& name, int in, int out, Rng& rng) {
        in_c = in;
        out_c = out;
        weight.init(name + ".w", in * 4, out);
        weight.he_init(rng, in);
        bias.init(name + ".b", out, 1);
    }

    Tensor forward(const Tensor& x) const {
        check(x.c == in_c, "Deconv2x: channel mismatch");
        Tensor out(out_c, 2 * x.h, 2 * x.w);
        for (int co = 0; co < out_c; ++co) {
            const float b = bias.v(co, 0);
            for (int i = 0; i < 2 * x.h; ++i)
                for (int j = 0; j < 2 * x.w; ++j) out.at(co, i, j) = b;
        }
        for (int ci = 0; ci < in_c; ++ci)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const float v = x.at(ci, i, j);
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const int wrow = (ci * 2 + di) * 2 + dj;
                            for (int co = 0; co < out_c; ++co)
                                out.at(co, 2 * i + di, 2 * j + dj) +=
                                    weight.v(wrow, co) * v;
                        }
                }
        return out;
    }

    Tensor backward(const Tensor& x, const Tensor& dy) {
        Tensor dx(x.c, x.h, x.w);
        for (int co = 0; co < out_c; ++co) {
            float db = 0.f;
            for (int i = 0; i < dy.h; ++i)
                for (int j = 0; j < dy.w; ++j) db += dy.at(co, i, j);
            bias.g(co, 0) += db;
        }
        for (int ci = 0; ci < in_c; ++ci)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const float v = x.at(ci, i, j);
                    float acc = 0.f;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const int wrow = (ci * 2 + di) * 2 + dj;
                            for (int co = 0; co < out_c; ++co) {
                                const float g = dy.at(co, 2 * i + di, 2 * j + dj);
                                weight.g(wrow, co) += g * v;
                                acc += weight.v(wrow, co) * g;
                            }
                        }
                    dx.at(ci, i, j) = acc;
                }
        return dx;
    }

    std::vector<Param*> params() { return {&weight, &bias}; }
};

struct Linear {
    int in_dim = 0, out_dim = 0;
    Param weight;  // out x in
    Param bias;    // out x 1

    void init(const std::string& name, int in, int out, Rng& rng) {
        in_dim = in;
        out_dim = out;
        weight.init(name + ".w", out, in);
        weight.he_init(rng, in);
        bias.init(name + ".b", out, 1);
    }

    Vector forward(const Vector& x) const {
        check(int(x.size()) == in_dim, "Linear: input size mismatch");
        return weight.v * x + bias.v.col(0);
    }

    Vector backward(const Vector& x, const Vector& dy) {
        weight.g += dy * x.transpose();
        bias.g.col(0) += dy;
        return weight.v.transpose() * dy;
    }

    std::vector<Param*> params() { return {&weight, &bias}; }
};

}  // namespace imtfa
