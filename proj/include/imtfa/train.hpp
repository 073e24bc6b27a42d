#pragma once

#include <set>
#include <string>
#include <vector>

#include "imtfa/dataset.hpp"
#include "imtfa/losses.hpp"
#include "imtfa/model.hpp"
#include "imtfa/shapes.hpp"

namespace imtfa {

enum class Variant {
    Mtfa,
    Imtfa,
    OneStageCosine,
    OneStageLinear,
    CaMtfa,
    CaMtfaNoFtMask,
};

inline Variant variant_from_string(const std::string& s) {
    if (s == "mtfa") return Variant::Mtfa;
    if (s == "imtfa") return Variant::Imtfa;
    if (s == "one_stage_cosine") return Variant::OneStageCosine;
    if (s == "one_stage_linear") return Variant::OneStageLinear;
    if (s == "ca_mtfa") return Variant::CaMtfa;
    if (s == "ca_mtfa_no_ft_mask") return Variant::CaMtfaNoFtMask;
    fail("unknown variant: " + s);
}

inline std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::Mtfa: return "mtfa";
        case Variant::Imtfa: return "imtfa";
        case Variant::OneStageCosine: return "one_stage_cosine";
        case Variant::OneStageLinear: return "one_stage_linear";
        case Variant::CaMtfa: return "ca_mtfa";
        case Variant::CaMtfaNoFtMask: return "ca_mtfa_no_ft_mask";
    }
    return "?";
}

// MTFA variants use class-specific heads; everything else is
// class-agnostic so classes can be added by imprinting alone.
inline bool variant_class_agnostic(Variant v) { return v != Variant::Mtfa; }

struct TrainConfig {
    Variant variant = Variant::Imtfa;
    int seed = 0;
    float alpha = 10.f;
    int batch_size = 2;
    float momentum = 0.9f;

    int iterations_stage1 = 1000;
    float lr_stage1 = 0.01f;

    int iterations_stage2 = 300;
    // reference-scale default; desk-scale runs usually override
    float lr_stage2 = 0.0007f;

    // matching and sampling
    float fg_iou = 0.5f;
    int rois_per_image = 32;
    float fg_fraction = 0.25f;
    bool gt_boxes_as_proposals = true;

    // RPN
    int rpn_npre = 256;
    int rpn_npost = 64;
    float rpn_nms_train = 0.7f;
    float rpn_nms_infer = 0.5f;
    // false trains heads on ground-truth proposals only (oracle mode)
    bool learned_proposals = true;

    // iMTFA stage-2 keeps the mask head frozen by default; switchable
    // because the reference training diagram leaves this open
    bool imtfa_freeze_mask = true;

    static float default_stage2_lr(Variant v) {
        return v == Variant::Imtfa ? 0.0007f : 0.0005f;
    }
};

// In-memory training set: images decoded once.
struct TrainingData {
    std::vector<Image> images;
    std::vector<std::vector<InstanceAnnotation>> annotations;
    std::vector<int> image_ids;

    static TrainingData from_manifest(const DatasetManifest& m) {
        TrainingData d;
        for (const auto& im : m.images) {
            d.images.push_back(m.load_image(im));
            d.image_ids.push_back(im.id);
            std::vector<InstanceAnnotation> anns;
            for (const auto* a : m.annotations_of(im.id)) anns.push_back(a->ann);
            d.annotations.push_back(std::move(anns));
        }
        return d;
    }

    static TrainingData from_generated(const GeneratedDataset& ds) {
        TrainingData d;
        d.images = ds.images;
        for (const auto& im : ds.manifest.images) {
            d.image_ids.push_back(im.id);
            std::vector<InstanceAnnotation> anns;
            for (const auto* a : ds.manifest.annotations_of(im.id))
                anns.push_back(a->ann);
            d.annotations.push_back(std::move(anns));
        }
        return d;
    }
};

struct TrainLogEntry {
    int iteration = 0;
    LossBreakdown loss;
    float lr = 0.f;
};

// Instrumentation shared across a pipeline: every class id the data
// loader serves to a loss computation is recorded here, and every
// optimizer step is counted.
struct TrainStats {
    std::vector<TrainLogEntry> log;
    std::set<int> served_class_ids;
    long optimizer_steps = 0;
};

namespace detail {

struct SampledRoi {
    Box box;
    bool foreground = false;
    int class_id = -1;
    int gt_index = -1;
};

// IoU >= fg_iou foreground, below background; proposals whose best
// match is an ignore-marked instance are dropped from the loss.
inline std::vector<SampledRoi> match_and_sample(
    const std::vector<Proposal>& proposals,
    const std::vector<InstanceAnnotation>& gts, const TrainConfig& cfg,
    Rng& rng) {
    std::vector<SampledRoi> fg, bg;
    for (const auto& p : proposals) {
        float best = 0.f, best_ignored = 0.f;
        int best_idx = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            const float iou = box_iou(p.box, gts[g].box);
            if (gts[g].ignore) {
                best_ignored = std::max(best_ignored, iou);
            } else if (iou > best) {
                best = iou;
                best_idx = int(g);
            }
        }
        if (best_ignored >= cfg.fg_iou && best_ignored > best) continue;
        SampledRoi roi;
        roi.box = p.box;
        if (best >= cfg.fg_iou) {
            roi.foreground = true;
            roi.class_id = gts[size_t(best_idx)].class_id;
            roi.gt_index = best_idx;
            fg.push_back(roi);
        } else {
            bg.push_back(roi);
        }
    }
    const int fg_cap = std::max(1, int(cfg.fg_fraction * float(cfg.rois_per_image)));
    if (int(fg.size()) > fg_cap) {
        rng.shuffle(fg);
        fg.resize(size_t(fg_cap));
    }
    const int bg_cap = cfg.rois_per_image - int(fg.size());
    if (int(bg.size()) > bg_cap) {
        rng.shuffle(bg);
        bg.resize(size_t(std::max(0, bg_cap)));
    }
    std::vector<SampledRoi> out = fg;
    out.insert(out.end(), bg.begin(), bg.end());
    return out;
}

struct AnchorTarget {
    int a = 0, i = 0, j = 0;
    int label = -1;  // 1 fg, 0 bg
    BoxDelta delta;
};

inline std::vector<AnchorTarget> rpn_targets(
    const Tensor& obj_map, const std::vector<InstanceAnnotation>& gts,
    const TrainConfig& cfg, Rng& rng) {
    std::vector<AnchorTarget> pos, neg;
    std::vector<float> best_per_gt(gts.size(), 0.f);
    std::vector<AnchorTarget> best_anchor(gts.size());
    for (int a = 0; a < Rpn::kNumAnchors; ++a)
        for (int i = 0; i < obj_map.h; ++i)
            for (int j = 0; j < obj_map.w; ++j) {
                const Box anchor = Rpn::anchor_at(a, i, j);
                float best = 0.f;
                int best_g = -1;
                for (size_t g = 0; g < gts.size(); ++g) {
                    if (gts[g].ignore) continue;
                    const float iou = box_iou(anchor, gts[g].box);
                    if (iou > best) {
                        best = iou;
                        best_g = int(g);
                    }
                    if (iou > best_per_gt[g]) {
                        best_per_gt[g] = iou;
                        best_anchor[g] = {a, i, j, 1,
                                          encode_delta(gts[g].box, anchor)};
                    }
                }
                AnchorTarget t{a, i, j, -1, {}};
                if (best >= 0.5f) {
                    t.label = 1;
                    t.delta = encode_delta(gts[size_t(best_g)].box, anchor);
                    pos.push_back(t);
                } else if (best < 0.3f) {
                    t.label = 0;
                    neg.push_back(t);
                }
            }
    // every GT gets its best anchor as positive
    for (size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].ignore || best_per_gt[g] < 0.05f || best_per_gt[g] >= 0.5f)
            continue;
        pos.push_back(best_anchor[g]);
    }
    const int pos_cap = 16;
    if (int(pos.size()) > pos_cap) {
        rng.shuffle(pos);
        pos.resize(size_t(pos_cap));
    }
    const int neg_cap = 32 - int(pos.size());
    if (int(neg.size()) > neg_cap) {
        rng.shuffle(neg);
        neg.resize(size_t(neg_cap));
    }
    std::vector<AnchorTarget> out = pos;
    out.insert(out.end(), neg.begin(), neg.end());
    return out;
}

}  // namespace detail

// Forward + backward for one image; accumulates parameter gradients.
inline LossBreakdown train_step_image(ModelComponents& model, const Image& img,
                                      const std::vector<InstanceAnnotation>& gts,
                                      const TrainConfig& cfg, Rng& rng,
                                      TrainStats* stats = nullptr) {
    LossBreakdown loss;
    if (stats)
        for (const auto& g : gts)
            if (!g.ignore) stats->served_class_ids.insert(g.class_id);

    const bool train_backbone = !model.is_frozen(Component::Backbone);
    const bool train_rpn = !model.is_frozen(Component::Rpn);
    const bool train_g = !model.is_frozen(Component::RoiExtractor);
    const bool train_mask = !model.is_frozen(Component::MaskHead);

    Backbone::Trace btrace;
    const Tensor feat = model.backbone.forward(image_to_tensor(img), &btrace);
    Tensor dfeat(feat.c, feat.h, feat.w);

    // --- RPN branch ---
    Rpn::Trace rtrace;
    model.rpn.forward(feat, rtrace);
    if (train_rpn) {
        const auto targets = detail::rpn_targets(rtrace.obj_map, gts, cfg, rng);
        Tensor dobj(rtrace.obj_map.c, rtrace.obj_map.h, rtrace.obj_map.w);
        Tensor ddelta(rtrace.delta_map.c, rtrace.delta_map.h, rtrace.delta_map.w);
        int n_pos = 0;
        for (const auto& t : targets) n_pos += t.label;
        const float n_sampled = std::max<float>(1.f, float(targets.size()));
        for (const auto& t : targets) {
            const float x = rtrace.obj_map.at(t.a, t.i, t.j);
            const float target = float(t.label);
            loss.rpn_obj_loss += (std::max(x, 0.f) - x * target +
                                  std::log1p(std::exp(-std::abs(x)))) /
                                 n_sampled;
            const float p = 1.f / (1.f + std::exp(-x));
            dobj.at(t.a, t.i, t.j) += (p - target) / n_sampled;
            if (t.label == 1) {
                const float pred[4] = {rtrace.delta_map.at(4 * t.a + 0, t.i, t.j),
                                       rtrace.delta_map.at(4 * t.a + 1, t.i, t.j),
                                       rtrace.delta_map.at(4 * t.a + 2, t.i, t.j),
                                       rtrace.delta_map.at(4 * t.a + 3, t.i, t.j)};
                const float tgt[4] = {t.delta.dx, t.delta.dy, t.delta.dw,
                                      t.delta.dh};
                const float np = std::max(1, n_pos);
                for (int k = 0; k < 4; ++k) {
                    loss.rpn_box_loss += smooth_l1(pred[k] - tgt[k]) / np;
                    ddelta.at(4 * t.a + k, t.i, t.j) +=
                        smooth_l1_grad(pred[k] - tgt[k]) / np;
                }
            }
        }
        const Tensor dfeat_rpn = model.rpn.backward(feat, rtrace, dobj, ddelta);
        if (train_backbone)
            for (size_t i = 0; i < dfeat.data.size(); ++i)
                dfeat.data[i] += dfeat_rpn.data[i];
    }

    // --- proposals ---
    std::vector<Proposal> proposals;
    if (cfg.learned_proposals)
        proposals = Rpn::decode_proposals(rtrace, img.height, img.width,
                                          cfg.rpn_npre, cfg.rpn_npost,
                                          cfg.rpn_nms_train);
    if (cfg.gt_boxes_as_proposals)
        for (const auto& g : gts)
            if (!g.ignore && g.box.area() > 1.f) proposals.push_back({g.box, 1.f});

    const auto rois = detail::match_and_sample(proposals, gts, cfg, rng);
    if (rois.empty()) {
        if (train_backbone) model.backbone.backward(btrace, dfeat);
        return loss;
    }

    const int n = int(rois.size());
    int n_fg_mask = 0;
    for (const auto& r : rois)
        if (r.foreground && gts[size_t(r.gt_index)].mask) ++n_fg_mask;

    // --- pool + embed ---
    const float stride = float(Backbone::kStride);
    std::vector<Tensor> pooled(static_cast<size_t>(n));
    std::vector<RoiExtractor::Trace> gtraces(static_cast<size_t>(n));
    std::vector<Box> feat_boxes(static_cast<size_t>(n));
    Matrix z(n, model.spec.embedding_dim);
    for (int r = 0; r < n; ++r) {
        feat_boxes[size_t(r)] = Box{rois[size_t(r)].box.x1 / stride,
                                    rois[size_t(r)].box.y1 / stride,
                                    rois[size_t(r)].box.x2 / stride,
                                    rois[size_t(r)].box.y2 / stride};
        pooled[size_t(r)] = roi_align(feat, feat_boxes[size_t(r)], model.spec.pool_size);
        z.row(r) = model.g.forward(pooled[size_t(r)], &gtraces[size_t(r)]).transpose();
    }

    // --- classification ---
    const Matrix scores = cosine_scores(z, model.registry);
    Matrix dscores = Matrix::Zero(n, scores.cols());
    for (int r = 0; r < n; ++r) {
        const int col = rois[size_t(r)].foreground
                            ? model.registry.column_of(rois[size_t(r)].class_id)
                            : model.registry.background_index;
        check(col >= 0, "train_step_image: class " +
                            std::to_string(rois[size_t(r)].class_id) +
                            " missing from registry");
        Vector row = scores.row(r).transpose();
        Vector drow;
        loss.cls_loss += softmax_ce(row, col, drow) / float(n);
        dscores.row(r) = drow.transpose() / float(n);
    }
    Matrix dz = cosine_scores_backward(z, model.registry, dscores);

    // --- box + mask branches ---
    std::vector<Tensor> droi_mask(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const auto& roi = rois[size_t(r)];
        if (!roi.foreground) continue;
        const auto& gt = gts[size_t(roi.gt_index)];
        const int slot =
            model.spec.box_agnostic ? 0 : model.class_slot(roi.class_id);

        const Vector zr = z.row(r).transpose();
        const Vector out = model.box_head.fc.forward(zr);
        const BoxDelta target = encode_delta(gt.box, roi.box);
        const float tgt[4] = {target.dx, target.dy, target.dw, target.dh};
        Vector dout = Vector::Zero(out.size());
        for (int k = 0; k < 4; ++k) {
            const float diff = out(4 * slot + k) - tgt[k];
            loss.box_loss += smooth_l1(diff) / float(n);
            dout(4 * slot + k) = smooth_l1_grad(diff) / float(n);
        }
        dz.row(r) += model.box_head.fc.backward(zr, dout).transpose();

        if (train_mask && gt.mask && n_fg_mask > 0) {
            const int mslot =
                model.spec.mask_agnostic ? 0 : model.class_slot(roi.class_id);
            MaskHead::Trace mtrace;
            const Tensor logits = model.mask_head.forward(pooled[size_t(r)], &mtrace);
            const Tensor target_grid =
                mask_target(*gt.mask, roi.box, model.mask_size());
            Tensor dmap;
            const Tensor map = model.mask_head.select_map(logits, mslot);
            loss.mask_loss += bce_with_logits(map, target_grid, dmap) / float(n_fg_mask);
            Tensor dlogits(logits.c, logits.h, logits.w);
            for (int i = 0; i < logits.h; ++i)
                for (int j = 0; j < logits.w; ++j)
                    dlogits.at(mslot, i, j) = dmap.at(0, i, j) / float(n_fg_mask);
            droi_mask[size_t(r)] =
                model.mask_head.backward(pooled[size_t(r)], mtrace, std::move(dlogits));
        }
    }

    // --- backprop into the feature map ---
    const bool need_feature_grad = train_backbone;
    for (int r = 0; r < n; ++r) {
        const Vector dflat = model.g.backward(gtraces[size_t(r)], dz.row(r).transpose());
        if (!need_feature_grad && droi_mask[size_t(r)].size() == 0 && !train_g)
            continue;
        if (need_feature_grad) {
            Tensor droi(Backbone::kChannels, model.spec.pool_size, model.spec.pool_size);
            std::copy(dflat.data(), dflat.data() + dflat.size(), droi.data.begin());
            if (droi_mask[size_t(r)].size() > 0)
                for (size_t i = 0; i < droi.data.size(); ++i)
                    droi.data[i] += droi_mask[size_t(r)].data[i];
            roi_align_backward(feat_boxes[size_t(r)], model.spec.pool_size, droi, dfeat);
        }
    }
    if (train_backbone) model.backbone.backward(btrace, dfeat);

    check(loss.finite(), "train_step_image: non-finite loss (cls=" +
                             std::to_string(loss.cls_loss) + ", box=" +
                             std::to_string(loss.box_loss) + ", mask=" +
                             std::to_string(loss.mask_loss) + ")");
    return loss;
}

// Parameter snapshots for freeze-discipline assertions.
inline std::vector<std::pair<std::string, Matrix>> snapshot_params(
    ModelComponents& model) {
    std::vector<std::pair<std::string, Matrix>> snap;
    for (Param* p : model.all_params()) snap.emplace_back(p->name, p->v);
    return snap;
}

inline void assert_frozen_unchanged(
    ModelComponents& model,
    const std::vector<std::pair<std::string, Matrix>>& snap) {
    size_t i = 0;
    for (Param* p : model.all_params()) {
        check(i < snap.size() && snap[i].first == p->name,
              "assert_frozen_unchanged: parameter list changed");
        if (p->frozen)
            check(p->v == snap[i].second,
                  "freeze violation: " + p->name + " changed during training");
        ++i;
    }
}

// Generic seeded SGD loop over a dataset.
inline void run_training(ModelComponents& model, const TrainingData& data,
                         const TrainConfig& cfg, float lr, int iterations,
                         TrainStats& stats) {
    check(!data.images.empty(), "run_training: empty dataset");
    Rng rng(uint64_t(uint32_t(cfg.seed)) * 7919u + 17u);
    const auto snap = snapshot_params(model);
    auto params = model.all_params();
    SgdConfig sgd{lr, cfg.momentum};

    std::vector<int> order(data.images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    size_t cursor = order.size();  // trigger shuffle at start

    for (int it = 0; it < iterations; ++it) {
        zero_grads(params);
        LossBreakdown batch_loss;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const int idx = order[cursor++];
            const LossBreakdown l = train_step_image(
                model, data.images[size_t(idx)], data.annotations[size_t(idx)],
                cfg, rng, &stats);
            batch_loss.cls_loss += l.cls_loss / float(cfg.batch_size);
            batch_loss.box_loss += l.box_loss / float(cfg.batch_size);
            batch_loss.mask_loss += l.mask_loss / float(cfg.batch_size);
            batch_loss.rpn_obj_loss += l.rpn_obj_loss / float(cfg.batch_size);
            batch_loss.rpn_box_loss += l.rpn_box_loss / float(cfg.batch_size);
        }
        // gradients were accumulated per image; average over the batch
        for (Param* p : params)
            if (!p->frozen) p->g /= float(cfg.batch_size);
        sgd_step(params, sgd);
        ++stats.optimizer_steps;
        stats.log.push_back({it, batch_loss, lr});
    }
    assert_frozen_unchanged(model, snap);
}

namespace detail {

inline void assert_classes_subset(const DatasetManifest& m,
                                  const std::vector<int>& allowed,
                                  const std::string& what) {
    for (const auto& a : m.annotations)
        check(std::find(allowed.begin(), allowed.end(), a.ann.class_id) !=
                  allowed.end(),
              what + ": annotation with class " + std::to_string(a.ann.class_id) +
                  " violates the split discipline");
}

}  // namespace detail

// Stage 1: joint training of all components on base classes only.
inline void train_stage1(ModelComponents& model, const DatasetManifest& base_data,
                         const ClassSplit& split, const TrainConfig& cfg,
                         TrainStats& stats) {
    detail::assert_classes_subset(base_data, split.base_ids, "train_stage1");
    for (Component c : {Component::Backbone, Component::Rpn,
                        Component::RoiExtractor, Component::Classifier,
                        Component::BoxHead, Component::MaskHead})
        model.set_frozen(c, false);
    const TrainingData data = TrainingData::from_manifest(base_data);
    run_training(model, data, cfg, cfg.lr_stage1, cfg.iterations_stage1, stats);
}

// One-stage ablations: identical loop; the variant only changes the
// classifier kind chosen at model creation.
inline void train_one_stage(ModelComponents& model, const DatasetManifest& base_data,
                            const ClassSplit& split, const TrainConfig& cfg,
                            TrainStats& stats) {
    train_stage1(model, base_data, split, cfg, stats);
}

// MTFA stage 2: freeze the feature extractor (B, RPN, G), expand the
// classifier with novel columns, fine-tune C/R/M on the balanced set.
inline void finetune_mtfa(ModelComponents& model,
                          const DatasetManifest& balanced_data,
                          const TrainConfig& cfg, TrainStats& stats) {
    std::vector<int> novel;
    for (const auto& a : balanced_data.annotations)
        if (model.registry.column_of(a.ann.class_id) < 0 &&
            std::find(novel.begin(), novel.end(), a.ann.class_id) == novel.end())
            novel.push_back(a.ann.class_id);
    if (!novel.empty()) {
        std::sort(novel.begin(), novel.end());
        Rng rng(uint64_t(uint32_t(cfg.seed)) * 31337u + 5u);
        expand_fg_classes(model, novel, rng);
    }
    model.set_frozen(Component::Backbone, true);
    model.set_frozen(Component::Rpn, true);
    model.set_frozen(Component::RoiExtractor, true);
    model.set_frozen(Component::Classifier, false);
    model.set_frozen(Component::BoxHead, false);
    model.set_frozen(Component::MaskHead, cfg.variant == Variant::CaMtfaNoFtMask);
    const TrainingData data = TrainingData::from_manifest(balanced_data);
    run_training(model, data, cfg, cfg.lr_stage2, cfg.iterations_stage2, stats);
}

// iMTFA stage 2: fine-tune G alongside C and R on base classes only,
// backbone and RPN frozen; the resulting G is the instance feature
// extractor used for imprinting.
inline void finetune_imtfa_stage2(ModelComponents& model,
                                  const DatasetManifest& base_data,
                                  const ClassSplit& split, const TrainConfig& cfg,
                                  TrainStats& stats) {
    detail::assert_classes_subset(base_data, split.base_ids, "finetune_imtfa_stage2");
    model.set_frozen(Component::Backbone, true);
    model.set_frozen(Component::Rpn, true);
    model.set_frozen(Component::RoiExtractor, false);
    model.set_frozen(Component::Classifier, false);
    model.set_frozen(Component::BoxHead, false);
    model.set_frozen(Component::MaskHead, cfg.imtfa_freeze_mask);
    const TrainingData data = TrainingData::from_manifest(base_data);
    run_training(model, data, cfg, cfg.lr_stage2, cfg.iterations_stage2, stats);
}

}  // namespace imtfa
