#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "imtfa/nn.hpp"
#include "imtfa/tensor.hpp"

namespace imtfa {

constexpr float kNormEps = 1e-8f;

enum class ColumnOrigin : uint8_t { Trained = 0, Imprinted = 1 };

struct RegistryColumn {
    int class_id = -1;  // -1 for the background column
    ColumnOrigin origin = ColumnOrigin::Trained;
};

// The classifier weight matrix W (one column per class) plus the scale
// alpha. Scoring is cosine similarity by default; `linear` switches to
// the un-normalized dot product used by the one-stage-linear ablation.
// Imprinted columns never receive gradients.
struct ClassRegistry {
    Param weight;  // e x c
    float alpha = 10.f;
    bool linear = false;
    std::vector<RegistryColumn> columns;
    int background_index = -1;

    int embedding_dim() const { return int(weight.v.rows()); }
    int num_columns() const { return int(weight.v.cols()); }

    int column_of(int class_id) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i].class_id == class_id) return int(i);
        return -1;
    }

    std::vector<int> class_ids() const {
        std::vector<int> ids;
        for (const auto& c : columns)
            if (c.class_id >= 0) ids.push_back(c.class_id);
        return ids;
    }

    // Fresh registry with trained columns for `class_ids` plus one
    // background column, randomly initialized.
    static ClassRegistry create(int e, const std::vector<int>& class_ids,
                                float alpha, bool linear, Rng& rng) {
        ClassRegistry reg;
        reg.alpha = alpha;
        reg.linear = linear;
        const int c = int(class_ids.size()) + 1;
        reg.weight.init("classifier.w", e, c);
        reg.weight.he_init(rng, e);
        for (int id : class_ids) reg.columns.push_back({id, ColumnOrigin::Trained});
        reg.columns.push_back({-1, ColumnOrigin::Trained});
        reg.background_index = c - 1;
        return reg;
    }

    // Sub-registry keeping only the listed class ids (plus background),
    // in the order they appear here. Used to score against base columns
    // only.
    ClassRegistry restricted_to(const std::vector<int>& class_ids) const {
        ClassRegistry out;
        out.alpha = alpha;
        out.linear = linear;
        std::vector<int> cols;
        for (int id : class_ids) {
            const int c = column_of(id);
            check(c >= 0, "restricted_to: class " + std::to_string(id) +
                              " not in registry");
            cols.push_back(c);
        }
        if (background_index >= 0) cols.push_back(background_index);
        out.weight.init("classifier.w", embedding_dim(), int(cols.size()));
        for (size_t i = 0; i < cols.size(); ++i) {
            out.weight.v.col(Eigen::Index(i)) = weight.v.col(cols[i]);
            out.columns.push_back(columns[size_t(cols[i])]);
        }
        out.background_index =
            background_index >= 0 ? int(cols.size()) - 1 : -1;
        return out;
    }
};

// S_ij = alpha * (z_i . w_j) / (|z_i| |w_j|), or the plain dot product
// in linear mode. Z holds one embedding per row.
inline Matrix cosine_scores(const Matrix& z, const ClassRegistry& reg) {
    check(int(z.cols()) == reg.embedding_dim(),
          "cosine_scores: embedding width mismatch");
    if (reg.linear) return z * reg.weight.v;
    Matrix zn = z;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const float n = z.row(i).norm();
        check(n >= kNormEps,
              "cosine_scores: zero-norm embedding at row " + std::to_string(i));
        zn.row(i) /= n;
    }
    Matrix wn = reg.weight.v;
    for (Eigen::Index j = 0; j < wn.cols(); ++j) {
        const float n = wn.col(j).norm();
        check(n >= kNormEps,
              "cosine_scores: zero-norm weight column " + std::to_string(j));
        wn.col(j) /= n;
    }
    return reg.alpha * (zn * wn);
}

// Gradients of cosine_scores: given dL/dS, accumulates dL/dW into the
// registry's grad buffer (trained columns only) and returns dL/dZ.
inline Matrix cosine_scores_backward(const Matrix& z, ClassRegistry& reg,
                                     const Matrix& ds) {
    if (reg.linear) {
        reg.weight.g += z.transpose() * ds;
        for (size_t j = 0; j < reg.columns.size(); ++j)
            if (reg.columns[j].origin == ColumnOrigin::Imprinted)
                reg.weight.g.col(Eigen::Index(j)).setZero();
        return ds * reg.weight.v.transpose();
    }
    const Eigen::Index n = z.rows(), c = reg.weight.v.cols();
    Matrix dz = Matrix::Zero(z.rows(), z.cols());
    Matrix zn = z;
    Vector znorm(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        znorm(i) = z.row(i).norm();
        zn.row(i) /= znorm(i);
    }
    Matrix wn = reg.weight.v;
    Vector wnorm(c);
    for (Eigen::Index j = 0; j < c; ++j) {
        wnorm(j) = wn.col(j).norm();
        wn.col(j) /= wnorm(j);
    }
    const Matrix cosines = zn * wn;  // n x c
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < c; ++j) {
            const float g = reg.alpha * ds(i, j);
            if (g == 0.f) continue;
            dz.row(i) +=
                (g / znorm(i)) * (wn.col(j).transpose() - cosines(i, j) * zn.row(i));
            if (reg.columns[size_t(j)].origin == ColumnOrigin::Trained)
                reg.weight.g.col(j) +=
                    (g / wnorm(j)) * (zn.row(i).transpose() - cosines(i, j) * wn.col(j));
        }
    return dz;
}

// Row-wise stable softmax plus argmax label per row.
struct ClassifyResult {
    Matrix probs;             // n x c
    std::vector<int> argmax;  // column index per row
};

inline ClassifyResult classify(const Matrix& s) {
    ClassifyResult r;
    r.probs = Matrix::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const float mx = s.row(i).maxCoeff();
        float sum = 0.f;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const float e = std::exp(s(i, j) - mx);
            r.probs(i, j) = e;
            sum += e;
        }
        r.probs.row(i) /= sum;
        Eigen::Index best = 0;
        s.row(i).maxCoeff(&best);
        r.argmax.push_back(int(best));
    }
    return r;
}

// Mean of unit-normalized embeddings (stored without re-normalization;
// the classifier normalizes columns when scoring). Callers pass shots
// in canonical order.
inline Vector merge_shot_embeddings(const std::vector<Vector>& zs) {
    check(!zs.empty(), "merge_shot_embeddings: need at least one embedding");
    Vector acc = Vector::Zero(zs[0].size());
    for (size_t i = 0; i < zs.size(); ++i) {
        const float n = zs[i].norm();
        check(n >= kNormEps, "merge_shot_embeddings: zero-norm embedding at index " +
                                 std::to_string(i));
        acc += zs[i] / n;
    }
    return acc / float(zs.size());
}

// Appends one imprinted column; all existing columns are untouched.
inline void imprint_column(ClassRegistry& reg, int class_id,
                           const Vector& representative) {
    check(reg.column_of(class_id) < 0,
          "imprint_column: class " + std::to_string(class_id) +
              " already registered");
    check(representative.norm() >= kNormEps,
          "imprint_column: zero-norm representative");
    const Eigen::Index e = reg.weight.v.rows(), c = reg.weight.v.cols();
    Matrix w(e, c + 1);
    w.leftCols(c) = reg.weight.v;
    w.col(c) = representative;
    reg.weight.v = std::move(w);
    reg.weight.g = Matrix::Zero(e, c + 1);
    reg.weight.m = Matrix::Zero(e, c + 1);
    reg.columns.push_back({class_id, ColumnOrigin::Imprinted});
}

inline void remove_class(ClassRegistry& reg, int class_id) {
    const int col = reg.column_of(class_id);
    check(col >= 0, "remove_class: class " + std::to_string(class_id) +
                        " not in registry");
    check(reg.columns[size_t(col)].origin == ColumnOrigin::Imprinted,
          "remove_class: class " + std::to_string(class_id) +
              " is a trained column and cannot be removed");
    const Eigen::Index e = reg.weight.v.rows(), c = reg.weight.v.cols();
    Matrix w(e, c - 1);
    for (Eigen::Index j = 0, out = 0; j < c; ++j) {
        if (int(j) == col) continue;
        w.col(out++) = reg.weight.v.col(j);
    }
    reg.weight.v = std::move(w);
    reg.weight.g = Matrix::Zero(e, c - 1);
    reg.weight.m = Matrix::Zero(e, c - 1);
    reg.columns.erase(reg.columns.begin() + col);
    if (reg.background_index > col) --reg.background_index;
}

// --- registry file format: magic, version, header fields, float32 LE ---

inline void save_registry(const ClassRegistry& reg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "save_registry: cannot open " + path);
    const char magic[4] = {'I', 'M', 'R', 'G'};
    out.write(magic, 4);
    const uint32_t version = 1;
    const uint32_t e = uint32_t(reg.weight.v.rows());
    const uint32_t c = uint32_t(reg.weight.v.cols());
    const uint8_t linear = reg.linear ? 1 : 0;
    const int32_t bg = reg.background_index;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&e), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    out.write(reinterpret_cast<const char*>(&reg.alpha), 4);
    out.write(reinterpret_cast<const char*>(&linear), 1);
    out.write(reinterpret_cast<const char*>(&bg), 4);
    for (const auto& col : reg.columns) {
        const int32_t id = col.class_id;
        const uint8_t origin = uint8_t(col.origin);
        out.write(reinterpret_cast<const char*>(&id), 4);
        out.write(reinterpret_cast<const char*>(&origin), 1);
    }
    out.write(reinterpret_cast<const char*>(reg.weight.v.data()),
              std::streamsize(sizeof(float)) * e * c);
    check(out.good(), "save_registry: write failed for " + path);
}

inline ClassRegistry load_registry(const std::string& path,
                                   int expected_e = -1) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_registry: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, "IMRG", 4) == 0,
          "load_registry: bad magic in " + path);
    uint32_t version = 0, e = 0, c = 0;
    uint8_t linear = 0;
    int32_t bg = -1;
    ClassRegistry reg;
    in.read(reinterpret_cast<char*>(&version), 4);
    check(version == 1, "load_registry: unsupported version");
    in.read(reinterpret_cast<char*>(&e), 4);
    in.read(reinterpret_cast<char*>(&c), 4);
    in.read(reinterpret_cast<char*>(&reg.alpha), 4);
    in.read(reinterpret_cast<char*>(&linear), 1);
    in.read(reinterpret_cast<char*>(&bg), 4);
    check(in.good(), "load_registry: truncated header in " + path);
    check(expected_e < 0 || int(e) == expected_e,
          "load_registry: embedding width " + std::to_string(e) +
              " does not match expected " + std::to_string(expected_e));
    reg.linear = linear != 0;
    reg.background_index = bg;
    for (uint32_t j = 0; j < c; ++j) {
        int32_t id = -1;
        uint8_t origin = 0;
        in.read(reinterpret_cast<char*>(&id), 4);
        in.read(reinterpret_cast<char*>(&origin), 1);
        reg.columns.push_back({id, ColumnOrigin(origin)});
    }
    reg.weight.init("classifier.w", int(e), int(c));
    in.read(reinterpret_cast<char*>(reg.weight.v.data()),
            std::streamsize(sizeof(float)) * e * c);
    check(in.good(), "load_registry: truncated data in " + path);
    return reg;
}

}  // namespace imtfa
