#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "imtfa/image.hpp"
#include "imtfa/instance.hpp"
#include "imtfa/nn.hpp"
#include "imtfa/registry.hpp"
#include "imtfa/roi_align.hpp"
#include "imtfa/tensor.hpp"

namespace imtfa {

inline Tensor image_to_tensor(const Image& img) {
    Tensor t(1, img.height, img.width);
    std::copy(img.data.begin(), img.data.end(), t.data.begin());
    return t;
}

// ---------------------------------------------------------------- backbone

// Plain 4-block CNN, overall stride 8, 64 output channels.
struct Backbone {
    static constexpr int kStride = 8;
    static constexpr int kChannels = 64;
    Conv2d c1, c2, c3, c4;

    void init(Rng& rng) {
        c1.init("backbone.c1", 1, 16, 3, 2, 1, rng);
        c2.init("backbone.c2", 16, 32, 3, 2, 1, rng);
        c3.init("backbone.c3", 32, 64, 3, 2, 1, rng);
        c4.init("backbone.c4", 64, 64, 3, 1, 1, rng);
    }

    struct Trace {
        Tensor x0, a1, a2, a3, a4;
    };

    Tensor forward(const Tensor& x, Trace* trace = nullptr) const {
        check(x.h % kStride == 0 && x.w % kStride == 0,
              "backbone: image dimensions must be divisible by stride " +
                  std::to_string(kStride));
        Tensor a1 = c1.forward(x);
        relu_inplace(a1);
        Tensor a2 = c2.forward(a1);
        relu_inplace(a2);
        Tensor a3 = c3.forward(a2);
        relu_inplace(a3);
        Tensor a4 = c4.forward(a3);
        relu_inplace(a4);
        if (trace) {
            trace->x0 = x;
            trace->a1 = std::move(a1);
            trace->a2 = std::move(a2);
            trace->a3 = std::move(a3);
            trace->a4 = a4;
        }
        return trace ? trace->a4 : a4;
    }

    void backward(const Trace& t, Tensor dfeat) {
        relu_backward_inplace(t.a4, dfeat);
        Tensor d3 = c4.backward(t.a3, dfeat);
        relu_backward_inplace(t.a3, d3);
        Tensor d2 = c3.backward(t.a2, d3);
        relu_backward_inplace(t.a2, d2);
        Tensor d1 = c2.backward(t.a1, d2);
        relu_backward_inplace(t.a1, d1);
        c1.backward(t.x0, d1);
    }

    std::vector<Param*> params() {
        std::vector<Param*> p;
        for (auto* l : {&c1, &c2, &c3, &c4})
            for (auto* q : l->params()) p.push_back(q);
        return p;
    }
};

// --------------------------------------------------------------------- RPN

struct Proposal {
    Box box;
    float objectness = 0.f;  // logit in learned mode
};

// Single-scale region proposal network: shared 3x3 conv, then 1x1
// objectness and delta convolutions over a square anchor grid.
struct Rpn {
    static constexpr int kNumAnchors = 3;
    static constexpr float kAnchorSizes[kNumAnchors] = {16.f, 32.f, 48.f};
    Conv2d conv, obj, delta;

    void init(Rng& rng) {
        conv.init("rpn.conv", Backbone::kChannels, 64, 3, 1, 1, rng);
        obj.init("rpn.obj", 64, kNumAnchors, 1, 1, 0, rng);
        delta.init("rpn.delta", 64, 4 * kNumAnchors, 1, 1, 0, rng);
    }

    static Box anchor_at(int a, int i, int j) {
        const float cx = (j + 0.5f) * Backbone::kStride;
        const float cy = (i + 0.5f) * Backbone::kStride;
        const float s = kAnchorSizes[a] * 0.5f;
        return Box{cx - s, cy - s, cx + s, cy + s};
    }

    struct Trace {
        Tensor a;          // post-relu shared conv activation
        Tensor obj_map;    // kNumAnchors x h x w logits
        Tensor delta_map;  // 4*kNumAnchors x h x w
    };

    void forward(const Tensor& feature, Trace& t) const {
        t.a = conv.forward(feature);
        relu_inplace(t.a);
        t.obj_map = obj.forward(t.a);
        t.delta_map = delta.forward(t.a);
    }

    // Accumulates grads; returns dL/dfeature.
    Tensor backward(const Tensor& feature, Trace& t, const Tensor& dobj,
                    const Tensor& ddelta) {
        Tensor da = obj.backward(t.a, dobj);
        Tensor da2 = delta.backward(t.a, ddelta);
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += da2.data[i];
        relu_backward_inplace(t.a, da);
        return conv.backward(feature, da);
    }

    // Learned proposals: decode every anchor, clip, keep top-npre by
    // objectness, NMS, keep top-npost.
    std::vector<Proposal> propose(const Tensor& feature, int image_h,
                                  int image_w, int npre, int npost,
                                  float nms_thresh) const {
        Trace t;
        forward(feature, t);
        return decode_proposals(t, image_h, image_w, npre, npost, nms_thresh);
    }

    static std::vector<Proposal> decode_proposals(const Trace& t, int image_h,
                                                  int image_w, int npre,
                                                  int npost, float nms_thresh) {
        std::vector<Proposal> all;
        for (int a = 0; a < kNumAnchors; ++a)
            for (int i = 0; i < t.obj_map.h; ++i)
                for (int j = 0; j < t.obj_map.w; ++j) {
                    BoxDelta d;
                    d.dx = t.delta_map.at(4 * a + 0, i, j);
                    d.dy = t.delta_map.at(4 * a + 1, i, j);
                    d.dw = t.delta_map.at(4 * a + 2, i, j);
                    d.dh = t.delta_map.at(4 * a + 3, i, j);
                    Box b = decode_delta(d, anchor_at(a, i, j))
                                .clipped(float(image_w), float(image_h));
                    if (b.width() < 2.f || b.height() < 2.f) continue;
                    all.push_back({b, t.obj_map.at(a, i, j)});
                }
        std::vector<int> order(all.size());
        for (size_t i = 0; i < all.size(); ++i) order[i] = int(i);
        std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
            return all[size_t(x)].objectness > all[size_t(y)].objectness;
        });
        if (int(order.size()) > npre) order.resize(size_t(npre));
        std::vector<Box> boxes(all.size());
        for (size_t i = 0; i < all.size(); ++i) boxes[i] = all[i].box;
        std::vector<int> keep = nms(boxes, order, nms_thresh);
        if (int(keep.size()) > npost) keep.resize(size_t(npost));
        std::vector<Proposal> out;
        for (int k : keep) out.push_back(all[size_t(k)]);
        return out;
    }

    std::vector<Param*> params() {
        std::vector<Param*> p;
        for (auto* l : {&conv, &obj, &delta})
            for (auto* q : l->params()) p.push_back(q);
        return p;
    }
};

// Oracle proposals: ground-truth boxes, optionally jittered.
inline std::vector<Proposal> propose_oracle(
    const std::vector<InstanceAnnotation>& gts, float jitter, Rng& rng,
    int image_h, int image_w) {
    std::vector<Proposal> out;
    for (const auto& g : gts) {
        Box b = g.box;
        if (jitter > 0.f) {
            const float w = b.width(), h = b.height();
            b.x1 += jitter * w * rng.normal();
            b.y1 += jitter * h * rng.normal();
            b.x2 += jitter * w * rng.normal();
            b.y2 += jitter * h * rng.normal();
            if (b.x2 < b.x1) std::swap(b.x1, b.x2);
            if (b.y2 < b.y1) std::swap(b.y1, b.y2);
            b = b.clipped(float(image_w), float(image_h));
        }
        out.push_back({b, 1.f});
    }
    return out;
}

// ------------------------------------------------------------------- heads

// RoI feature extractor G: two fully-connected layers producing the
// embedding. After iMTFA stage-2 fine-tuning this is the IFE.
struct RoiExtractor {
    Linear l1, l2;

    void init(int in_dim, int e, Rng& rng) {
        l1.init("g.l1", in_dim, e, rng);
        l2.init("g.l2", e, e, rng);
    }

    struct Trace {
        Vector flat, h;  // h is post-relu hidden
    };

    Vector forward(const Tensor& roi, Trace* trace = nullptr) const {
        Vector flat(Eigen::Index(roi.size()));
        std::copy(roi.data.begin(), roi.data.end(), flat.data());
        Vector h = l1.forward(flat);
        for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = std::max(h(i), 0.f);
        Vector z = l2.forward(h);
        if (trace) {
            trace->flat = std::move(flat);
            trace->h = std::move(h);
        }
        return z;
    }

    // Returns dL/droi (flattened).
    Vector backward(const Trace& t, const Vector& dz) {
        Vector dh = l2.backward(t.h, dz);
        for (Eigen::Index i = 0; i < dh.size(); ++i)
            if (t.h(i) <= 0.f) dh(i) = 0.f;
        return l1.backward(t.flat, dh);
    }

    std::vector<Param*> params() {
        std::vector<Param*> p;
        for (auto* l : {&l1, &l2})
            for (auto* q : l->params()) p.push_back(q);
        return p;
    }
};

// Box regression head over the embedding; one delta in class-agnostic
// mode, one per foreground class otherwise.
struct BoxHead {
    bool agnostic = true;
    int num_classes = 1;  // delta slots
    Linear fc;

    void init(int e, bool agn, int n_fg, Rng& rng) {
        agnostic = agn;
        num_classes = agn ? 1 : n_fg;
        fc.init("box.fc", e, 4 * num_classes, rng);
    }

    BoxDelta forward(const Vector& z, int slot) const {
        check(slot >= 0 && slot < num_classes, "box_head: class slot out of range");
        const Vector out = fc.forward(z);
        return BoxDelta{out(4 * slot), out(4 * slot + 1), out(4 * slot + 2),
                        out(4 * slot + 3)};
    }

    std::vector<Param*> params() { return fc.params(); }
};

// Mask head: conv, 2x deconv, 1x1 conv to per-class (or single) logit
// maps at 2x the pooled resolution.
struct MaskHead {
    bool agnostic = true;
    int num_maps = 1;
    Conv2d m1;
    Deconv2x up;
    Conv2d m2;

    void init(bool agn, int n_fg, Rng& rng) {
        agnostic = agn;
        num_maps = agn ? 1 : n_fg;
        m1.init("mask.m1", Backbone::kChannels, 64, 3, 1, 1, rng);
        up.init("mask.up", 64, 32, rng);
        m2.init("mask.m2", 32, num_maps, 1, 1, 0, rng);
    }

    struct Trace {
        Tensor a1, a2;  // post-relu activations
    };

    // Q x Q logits for the requested map.
    Tensor forward(const Tensor& roi, Trace* trace = nullptr) const {
        Tensor a1 = m1.forward(roi);
        relu_inplace(a1);
        Tensor a2 = up.forward(a1);
        relu_inplace(a2);
        Tensor logits = m2.forward(a2);
        if (trace) {
            trace->a1 = std::move(a1);
            trace->a2 = std::move(a2);
        }
        return logits;
    }

    Tensor select_map(const Tensor& logits, int slot) const {
        check(slot >= 0 && slot < num_maps, "mask_head: class slot out of range");
        Tensor out(1, logits.h, logits.w);
        for (int i = 0; i < logits.h; ++i)
            for (int j = 0; j < logits.w; ++j) out.at(0, i, j) = logits.at(slot, i, j);
        return out;
    }

    // Returns dL/droi.
    Tensor backward(const Tensor& roi, const Trace& t, Tensor dlogits) {
        Tensor da2 = m2.backward(t.a2, dlogits);
        relu_backward_inplace(t.a2, da2);
        Tensor da1 = up.backward(t.a1, da2);
        relu_backward_inplace(t.a1, da1);
        return m1.backward(roi, da1);
    }

    std::vector<Param*> params() {
        std::vector<Param*> p;
        for (auto* q : m1.params()) p.push_back(q);
        for (auto* q : up.params()) p.push_back(q);
        for (auto* q : m2.params()) p.push_back(q);
        return p;
    }
};

// Pastes a Q x Q logit map into the box extent of a full-resolution
// binary mask: bilinear resize of sigmoid(logits), threshold, zeros
// elsewhere. Out-of-image box portions are clipped.
inline BinaryMask paste_mask(const Tensor& logits, const Box& box, int image_h,
                             int image_w, float threshold = 0.5f) {
    check(box.valid(), "paste_mask: invalid box");
    BinaryMask out(image_h, image_w);
    const Box b = box.clipped(float(image_w), float(image_h));
    if (b.width() <= 0.f || b.height() <= 0.f) return out;
    const int q = logits.h;
    const int r0 = std::max(0, int(std::floor(b.y1)));
    const int r1 = std::min(image_h - 1, int(std::ceil(b.y2)) - 1);
    const int c0 = std::max(0, int(std::floor(b.x1)));
    const int c1 = std::min(image_w - 1, int(std::ceil(b.x2)) - 1);
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
            const float px = c + 0.5f, py = r + 0.5f;
            if (px < box.x1 || px >= box.x2 || py < box.y1 || py >= box.y2)
                continue;
            // map the pixel center into logit-grid coordinates
            const float u = (px - box.x1) / box.width() * float(q);
            const float v = (py - box.y1) / box.height() * float(q);
            const float logit = detail::bilinear_sample(logits, 0, u, v);
            const float prob = 1.f / (1.f + std::exp(-logit));
            if (prob >= threshold) out.set(r, c, 1);
        }
    return out;
}

// Q x Q {0,1} training target: the ground-truth mask cropped to the
// proposal box and resampled to the logit grid.
inline Tensor mask_target(const BinaryMask& gt, const Box& box, int q) {
    Tensor t(1, q, q);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            const float x = box.x1 + (j + 0.5f) / float(q) * box.width();
            const float y = box.y1 + (i + 0.5f) / float(q) * box.height();
            const int c = int(std::floor(x)), r = int(std::floor(y));
            if (r >= 0 && r < gt.height && c >= 0 && c < gt.width && gt.at(r, c))
                t.at(0, i, j) = 1.f;
        }
    return t;
}

// ------------------------------------------------------------------- model

enum class Component { Backbone, Rpn, RoiExtractor, Classifier, BoxHead, MaskHead };

struct ModelSpec {
    int embedding_dim = 128;      // e
    int pool_size = 7;            // P
    bool box_agnostic = true;
    bool mask_agnostic = true;
    bool linear_classifier = false;
    float alpha = 10.f;
    std::vector<int> fg_class_ids;  // trained foreground classes, in order
};

struct ModelComponents {
    ModelSpec spec;
    Backbone backbone;
    Rpn rpn;
    RoiExtractor g;
    BoxHead box_head;
    MaskHead mask_head;
    ClassRegistry registry;
    std::map<std::string, bool> frozen;  // per-component freeze map

    int mask_size() const { return 2 * spec.pool_size; }  // Q

    static ModelComponents create(const ModelSpec& spec, int seed) {
        ModelComponents m;
        m.spec = spec;
        Rng rng(uint64_t(uint32_t(seed)) + 12345u);
        m.backbone.init(rng);
        m.rpn.init(rng);
        m.g.init(Backbone::kChannels * spec.pool_size * spec.pool_size,
                 spec.embedding_dim, rng);
        m.box_head.init(spec.embedding_dim, spec.box_agnostic,
                        int(spec.fg_class_ids.size()), rng);
        m.mask_head.init(spec.mask_agnostic, int(spec.fg_class_ids.size()), rng);
        m.registry = ClassRegistry::create(spec.embedding_dim, spec.fg_class_ids,
                                           spec.alpha, spec.linear_classifier, rng);
        return m;
    }

    // Head slot for a class id in class-specific mode.
    int class_slot(int class_id) const {
        for (size_t i = 0; i < spec.fg_class_ids.size(); ++i)
            if (spec.fg_class_ids[i] == class_id) return int(i);
        fail("class_slot: unknown class id " + std::to_string(class_id));
    }

    std::vector<Param*> component_params(Component c) {
        switch (c) {
            case Component::Backbone: return backbone.params();
            case Component::Rpn: return rpn.params();
            case Component::RoiExtractor: return g.params();
            case Component::Classifier: return {&registry.weight};
            case Component::BoxHead: return box_head.params();
            case Component::MaskHead: return mask_head.params();
        }
        return {};
    }

    std::vector<Param*> all_params() {
        std::vector<Param*> p;
        for (Component c : {Component::Backbone, Component::Rpn,
                            Component::RoiExtractor, Component::Classifier,
                            Component::BoxHead, Component::MaskHead})
            for (auto* q : component_params(c)) p.push_back(q);
        return p;
    }

    void set_frozen(Component c, bool value) {
        for (Param* p : component_params(c)) p->frozen = value;
    }

    bool is_frozen(Component c) {
        for (Param* p : component_params(c)) return p->frozen;
        return false;
    }

    Tensor backbone_forward(const Image& img, Backbone::Trace* trace = nullptr) const {
        return backbone.forward(image_to_tensor(img), trace);
    }

    // Pools a box given in image coordinates from the stride-8 feature map.
    Tensor roi_pool(const Tensor& feature, const Box& image_box) const {
        const float s = float(Backbone::kStride);
        Box fb{image_box.x1 / s, image_box.y1 / s, image_box.x2 / s,
               image_box.y2 / s};
        return roi_align(feature, fb, spec.pool_size);
    }

    Vector extract_embedding(const Image& img, const Box& box) const {
        const Tensor feat = backbone_forward(img);
        return g.forward(roi_pool(feat, box));
    }
};

// Grows the model to recognize additional trained classes (MTFA
// fine-tuning): new classifier columns are random vectors scaled to the
// mean norm of the existing foreground columns; class-specific heads
// get freshly initialized slots, existing slots are copied bit-exactly.
inline void expand_fg_classes(ModelComponents& model,
                              const std::vector<int>& new_ids, Rng& rng) {
    const int n_old = int(model.spec.fg_class_ids.size());
    const int n_new = int(new_ids.size());
    check(n_new > 0, "expand_fg_classes: no new classes");
    for (int id : new_ids)
        check(model.registry.column_of(id) < 0,
              "expand_fg_classes: class " + std::to_string(id) + " already known");

    ClassRegistry& reg = model.registry;
    float mean_norm = 0.f;
    int n_fg = 0;
    for (size_t j = 0; j < reg.columns.size(); ++j)
        if (reg.columns[j].class_id >= 0) {
            mean_norm += reg.weight.v.col(Eigen::Index(j)).norm();
            ++n_fg;
        }
    mean_norm = n_fg > 0 ? mean_norm / float(n_fg) : 1.f;

    const Eigen::Index e = reg.weight.v.rows(), c = reg.weight.v.cols();
    Matrix w(e, c + n_new);
    w.leftCols(c) = reg.weight.v;
    for (int k = 0; k < n_new; ++k) {
        Vector col(e);
        for (Eigen::Index i = 0; i < e; ++i) col(i) = rng.normal();
        w.col(c + k) = col * (mean_norm / std::max(col.norm(), kNormEps));
        reg.columns.push_back({new_ids[size_t(k)], ColumnOrigin::Trained});
    }
    reg.weight.v = std::move(w);
    reg.weight.g = Matrix::Zero(e, c + n_new);
    reg.weight.m = Matrix::Zero(e, c + n_new);

    if (!model.spec.box_agnostic) {
        Linear& fc = model.box_head.fc;
        Linear grown;
        grown.init("box.fc", fc.in_dim, 4 * (n_old + n_new), rng);
        grown.weight.v.topRows(4 * n_old) = fc.weight.v;
        grown.bias.v.topRows(4 * n_old) = fc.bias.v;
        grown.bias.v.bottomRows(4 * n_new).setZero();
        model.box_head.fc = std::move(grown);
        model.box_head.num_classes = n_old + n_new;
    }
    if (!model.spec.mask_agnostic) {
        Conv2d& m2 = model.mask_head.m2;
        Conv2d grown;
        grown.init("mask.m2", m2.in_c, n_old + n_new, 1, 1, 0, rng);
        grown.weight.v.topRows(n_old) = m2.weight.v;
        grown.bias.v.topRows(n_old) = m2.bias.v;
        grown.bias.v.bottomRows(n_new).setZero();
        model.mask_head.m2 = std::move(grown);
        model.mask_head.num_maps = n_old + n_new;
    }
    for (int id : new_ids) model.spec.fg_class_ids.push_back(id);
}

// Imprinting from raw shots: embed each shot's ground-truth
// box, merge, append. Masks are never read.
inline void imprint_class(const ModelComponents& model, ClassRegistry& reg,
                          int class_id,
                          const std::vector<std::pair<const Image*, Box>>& shots) {
    check(!shots.empty(), "imprint_class: no shots given");
    std::vector<Vector> zs;
    for (const auto& [img, box] : shots)
        zs.push_back(model.extract_embedding(*img, box));
    imprint_column(reg, class_id, merge_shot_embeddings(zs));
}

// -------------------------------------------------------------- checkpoint

namespace detail {

inline void write_param_block(std::ofstream& out, const Param& p) {
    const uint32_t name_len = uint32_t(p.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(p.name.data(), name_len);
    const uint32_t rows = uint32_t(p.v.rows()), cols = uint32_t(p.v.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    out.write(reinterpret_cast<const char*>(p.v.data()),
              std::streamsize(sizeof(float)) * rows * cols);
}

}  // namespace detail

// Binary container: magic, version, JSON metadata (architecture, class
// table, head modes, alpha, provenance), then named float32 blocks.
inline void save_checkpoint(ModelComponents& model, const std::string& path,
                            const nlohmann::json& provenance = {}) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "save_checkpoint: cannot open " + path);
    out.write("IMCK", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);

    nlohmann::json meta;
    meta["embedding_dim"] = model.spec.embedding_dim;
    meta["pool_size"] = model.spec.pool_size;
    meta["mask_size"] = model.mask_size();
    meta["stride"] = Backbone::kStride;
    meta["box_agnostic"] = model.spec.box_agnostic;
    meta["mask_agnostic"] = model.spec.mask_agnostic;
    meta["linear_classifier"] = model.spec.linear_classifier;
    meta["alpha"] = model.registry.alpha;
    meta["fg_class_ids"] = model.spec.fg_class_ids;
    meta["background_index"] = model.registry.background_index;
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : model.registry.columns)
        cols.push_back({{"class_id", c.class_id},
                        {"origin", c.origin == ColumnOrigin::Trained ? "trained"
                                                                     : "imprinted"}});
    meta["columns"] = cols;
    if (!provenance.is_null() && !provenance.empty()) meta["provenance"] = provenance;
    const std::string meta_str = meta.dump();
    const uint32_t meta_len = uint32_t(meta_str.size());
    out.write(reinterpret_cast<const char*>(&meta_len), 4);
    out.write(meta_str.data(), meta_len);

    const auto params = model.all_params();
    const uint32_t n_blocks = uint32_t(params.size());
    out.write(reinterpret_cast<const char*>(&n_blocks), 4);
    for (const Param* p : params) detail::write_param_block(out, *p);
    check(out.good(), "save_checkpoint: write failed for " + path);
}

inline ModelComponents load_checkpoint(const std::string& path,
                                       nlohmann::json* meta_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, "IMCK", 4) == 0,
          "load_checkpoint: bad magic in " + path);
    uint32_t version = 0, meta_len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    check(version == 1, "load_checkpoint: unsupported version");
    in.read(reinterpret_cast<char*>(&meta_len), 4);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), meta_len);
    check(in.good(), "load_checkpoint: truncated metadata in " + path);
    const nlohmann::json meta = nlohmann::json::parse(meta_str);
    if (meta_out) *meta_out = meta;

    ModelSpec spec;
    spec.embedding_dim = meta.at("embedding_dim").get<int>();
    spec.pool_size = meta.at("pool_size").get<int>();
    spec.box_agnostic = meta.at("box_agnostic").get<bool>();
    spec.mask_agnostic = meta.at("mask_agnostic").get<bool>();
    spec.linear_classifier = meta.at("linear_classifier").get<bool>();
    spec.alpha = meta.at("alpha").get<float>();
    spec.fg_class_ids = meta.at("fg_class_ids").get<std::vector<int>>();
    ModelComponents model = ModelComponents::create(spec, 0);

    // rebuild registry columns (imprinted columns change the shape)
    model.registry.columns.clear();
    for (const auto& jc : meta.at("columns"))
        model.registry.columns.push_back(
            {jc.at("class_id").get<int>(),
             jc.at("origin").get<std::string>() == "trained"
                 ? ColumnOrigin::Trained
                 : ColumnOrigin::Imprinted});
    model.registry.background_index = meta.at("background_index").get<int>();
    const int c = int(model.registry.columns.size());
    model.registry.weight.init("classifier.w", spec.embedding_dim, c);

    std::map<std::string, Param*> by_name;
    for (Param* p : model.all_params()) by_name[p->name] = p;
    uint32_t n_blocks = 0;
    in.read(reinterpret_cast<char*>(&n_blocks), 4);
    for (uint32_t b = 0; b < n_blocks; ++b) {
        uint32_t name_len = 0, rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        in.read(reinterpret_cast<char*>(&rows), 4);
        in.read(reinterpret_cast<char*>(&cols), 4);
        check(in.good(), "load_checkpoint: truncated block header in " + path);
        auto it = by_name.find(name);
        check(it != by_name.end(), "load_checkpoint: unknown block " + name);
        check(uint32_t(it->second->v.rows()) == rows &&
                  uint32_t(it->second->v.cols()) == cols,
              "load_checkpoint: shape mismatch for block " + name);
        in.read(reinterpret_cast<char*>(it->second->v.data()),
                std::streamsize(sizeof(float)) * rows * cols);
        check(in.good(), "load_checkpoint: truncated data in block " + name);
    }
    return model;
}

}  // namespace imtfa
