#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "imtfa/train.hpp"

namespace imtfa {

struct EpisodeSpec {
    std::vector<int> test_class_ids;  // N-way: classes imprinted per episode
    int k = 5;
    int seed = 0;
    bool gtoe = false;
    // after zeroing, either re-resolve the argmax over the remaining
    // classes (default) or drop RoIs whose original argmax was zeroed
    bool gtoe_reresolve = true;
    float score_threshold = 0.05f;
    int max_detections = 100;
    float nms_thresh = 0.5f;  // per-class, on refined boxes
    int rpn_npre = 256;
    int rpn_npost = 64;
    float rpn_nms = 0.5f;  // inference-time proposal NMS
    bool oracle_proposals = false;
    float oracle_jitter = 0.1f;
};

// ------------------------------------------------------------- inference

namespace detail {

struct RoiCandidate {
    Box proposal;
    Vector z;
    Vector probs;  // one per registry column
};

}  // namespace detail

// Zeroes probability columns of classes absent from the image's ground
// truth. No renormalization; the background column is untouched.
inline void gtoe_filter(Matrix& probs, const ClassRegistry& reg,
                        const std::set<int>& gt_class_ids) {
    for (size_t j = 0; j < reg.columns.size(); ++j) {
        const int cid = reg.columns[j].class_id;
        if (cid >= 0 && gt_class_ids.find(cid) == gt_class_ids.end())
            probs.col(Eigen::Index(j)).setZero();
    }
}

inline std::vector<Detection> run_inference(
    const ModelComponents& model, const ClassRegistry& reg, const Image& img,
    const EpisodeSpec& spec,
    const std::vector<InstanceAnnotation>* gts = nullptr,
    Rng* oracle_rng = nullptr) {
    const Tensor feat = model.backbone_forward(img);
    std::vector<Proposal> proposals;
    if (spec.oracle_proposals) {
        check(gts && oracle_rng,
              "run_inference: oracle proposals need ground truth and an RNG");
        proposals = propose_oracle(*gts, spec.oracle_jitter, *oracle_rng,
                                   img.height, img.width);
    } else {
        proposals = model.rpn.propose(feat, img.height, img.width, spec.rpn_npre,
                                      spec.rpn_npost, spec.rpn_nms);
    }
    if (proposals.empty()) return {};

    const int n = int(proposals.size());
    Matrix z(n, model.spec.embedding_dim);
    for (int r = 0; r < n; ++r)
        z.row(r) =
            model.g.forward(model.roi_pool(feat, proposals[size_t(r)].box))
                .transpose();
    Matrix probs = classify(cosine_scores(z, reg)).probs;
    std::vector<int> original_argmax(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        Eigen::Index am;
        probs.row(r).maxCoeff(&am);
        original_argmax[size_t(r)] = int(am);
    }
    if (spec.gtoe) {
        check(gts != nullptr, "run_inference: GTOE needs ground truth");
        std::set<int> present;
        for (const auto& g : *gts)
            if (!g.ignore) present.insert(g.class_id);
        gtoe_filter(probs, reg, present);
    }

    // label, refine, threshold
    struct Scored {
        int class_id;
        float score;
        Box box;
    };
    std::vector<Scored> scored;
    for (int r = 0; r < n; ++r) {
        Eigen::Index am;
        const float p = probs.row(r).maxCoeff(&am);
        if (spec.gtoe && !spec.gtoe_reresolve &&
            int(am) != original_argmax[size_t(r)])
            continue;
        const int col = int(am);
        const int cid = reg.columns[size_t(col)].class_id;
        if (cid < 0) continue;  // background is never emitted
        if (p < spec.score_threshold) continue;
        const int slot = model.spec.box_agnostic ? 0 : model.class_slot(cid);
        const BoxDelta d = model.box_head.forward(z.row(r).transpose(), slot);
        const Box refined = decode_delta(d, proposals[size_t(r)].box)
                                .clipped(float(img.width), float(img.height));
        if (refined.width() < 1.f || refined.height() < 1.f) continue;
        scored.push_back({cid, p, refined});
    }

    // per-class NMS, then global top-k by score
    std::vector<int> order(scored.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scored[size_t(a)].score > scored[size_t(b)].score;
    });
    std::vector<int> kept;
    std::set<int> classes;
    for (const auto& s : scored) classes.insert(s.class_id);
    for (int cid : classes) {
        std::vector<Box> boxes;
        std::vector<int> cls_order, idx;
        for (int i : order)
            if (scored[size_t(i)].class_id == cid) {
                cls_order.push_back(int(boxes.size()));
                idx.push_back(i);
                boxes.push_back(scored[size_t(i)].box);
            }
        for (int k : nms(boxes, cls_order, spec.nms_thresh))
            kept.push_back(idx[size_t(k)]);
    }
    std::stable_sort(kept.begin(), kept.end(), [&](int a, int b) {
        return scored[size_t(a)].score > scored[size_t(b)].score;
    });
    if (int(kept.size()) > spec.max_detections)
        kept.resize(size_t(spec.max_detections));

    // paste masks from features pooled over the refined box
    std::vector<Detection> out;
    for (int i : kept) {
        const auto& s = scored[size_t(i)];
        Detection det;
        det.class_id = s.class_id;
        det.score = s.score;
        det.box = s.box;
        const Tensor pooled = model.roi_pool(feat, s.box);
        const Tensor logits = model.mask_head.forward(pooled);
        const int slot =
            model.spec.mask_agnostic ? 0 : model.class_slot(s.class_id);
        det.mask = paste_mask(model.mask_head.select_map(logits, slot), s.box,
                              img.height, img.width);
        out.push_back(std::move(det));
    }
    return out;
}

// ------------------------------------------------------------- matching

enum class IouKind { BoxIou, MaskIou };

// Greedy COCO-style matching of one class on one image: detections in
// score order each take the highest-IoU unmatched GT at or above the
// threshold. Returns one TP flag per detection.
inline std::vector<char> match_detections(
    const std::vector<const Detection*>& dets,
    const std::vector<const InstanceAnnotation*>& gts, IouKind kind,
    float iou_threshold) {
    std::vector<char> tp(dets.size(), 0);
    std::vector<char> used(gts.size(), 0);
    for (size_t d = 0; d < dets.size(); ++d) {
        float best = iou_threshold;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            float iou;
            if (kind == IouKind::BoxIou) {
                iou = box_iou(dets[d]->box, gts[g]->box);
            } else {
                if (!dets[d]->mask || !gts[g]->mask) continue;
                iou = mask_iou(*dets[d]->mask, *gts[g]->mask);
            }
            if (iou >= best) {
                best = iou;
                best_g = int(g);
            }
        }
        if (best_g >= 0) {
            used[size_t(best_g)] = 1;
            tp[d] = 1;
        }
    }
    return tp;
}

// 101-point interpolated AP from score-ordered TP/FP flags.
inline double average_precision(const std::vector<char>& tp, int num_gt) {
    check(num_gt > 0, "average_precision: num_gt must be positive");
    std::vector<double> precision, recall;
    int cum_tp = 0;
    for (size_t i = 0; i < tp.size(); ++i) {
        cum_tp += tp[i];
        precision.push_back(double(cum_tp) / double(i + 1));
        recall.push_back(double(cum_tp) / double(num_gt));
    }
    // precision at recall >= r, maximized from the right
    for (size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    size_t j = 0;
    for (int r = 0; r <= 100; ++r) {
        const double target = double(r) / 100.0;
        while (j < recall.size() && recall[j] < target - 1e-12) ++j;
        if (j < recall.size()) ap += precision[j];
    }
    return ap / 101.0;
}

// --------------------------------------------------------- episode scoring

struct TaskMetrics {
    double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
    double ap50 = 0.0;  // IoU 0.50
};

struct GroupResult {
    TaskMetrics det, seg;
    int num_classes = 0;  // classes with ground truth in the group
};

struct EpisodeResult {
    GroupResult overall, base, novel;
    std::map<int, TaskMetrics> per_class_det, per_class_seg;
    // classes that produced detections but have no ground truth
    std::set<int> classes_without_gt;
};

namespace detail {

inline const std::vector<float>& iou_grid() {
    static const std::vector<float> g = {0.50f, 0.55f, 0.60f, 0.65f, 0.70f,
                                         0.75f, 0.80f, 0.85f, 0.90f, 0.95f};
    return g;
}

// Per-class AP across images: match per image in score order, pool the
// flags globally by (score desc, image index, insertion index).
inline double class_ap(const std::vector<std::vector<Detection>>& dets,
                       const std::vector<std::vector<InstanceAnnotation>>& gts,
                       int class_id, IouKind kind, float thresh, int num_gt) {
    struct Flag {
        float score;
        int image, index;
        char tp;
    };
    std::vector<Flag> flags;
    for (size_t im = 0; im < dets.size(); ++im) {
        std::vector<const Detection*> d;
        for (const auto& det : dets[im])
            if (det.class_id == class_id) d.push_back(&det);
        std::stable_sort(d.begin(), d.end(), [](const Detection* a,
                                                const Detection* b) {
            return a->score > b->score;
        });
        std::vector<const InstanceAnnotation*> g;
        for (const auto& gt : gts[im])
            if (!gt.ignore && gt.class_id == class_id) g.push_back(&gt);
        const auto tp = match_detections(d, g, kind, thresh);
        for (size_t i = 0; i < d.size(); ++i)
            flags.push_back({d[i]->score, int(im), int(i), tp[i]});
    }
    std::sort(flags.begin(), flags.end(), [](const Flag& a, const Flag& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });
    std::vector<char> tp;
    for (const auto& f : flags) tp.push_back(f.tp);
    return average_precision(tp, num_gt);
}

}  // namespace detail

// Scores a full set of per-image detections against ground truth.
inline EpisodeResult score_detections(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<std::vector<InstanceAnnotation>>& gts,
    const ClassSplit& split) {
    check(dets.size() == gts.size(), "score_detections: image count mismatch");
    std::map<int, int> gt_count;
    for (const auto& img_gts : gts)
        for (const auto& g : img_gts)
            if (!g.ignore) ++gt_count[g.class_id];

    EpisodeResult out;
    for (const auto& img_dets : dets)
        for (const auto& d : img_dets)
            if (gt_count.find(d.class_id) == gt_count.end())
                out.classes_without_gt.insert(d.class_id);

    for (const auto& [cid, n_gt] : gt_count) {
        TaskMetrics det_m, seg_m;
        for (float t : detail::iou_grid()) {
            const double d =
                detail::class_ap(dets, gts, cid, IouKind::BoxIou, t, n_gt);
            const double s =
                detail::class_ap(dets, gts, cid, IouKind::MaskIou, t, n_gt);
            det_m.ap += d / double(detail::iou_grid().size());
            seg_m.ap += s / double(detail::iou_grid().size());
            if (t == 0.50f) {
                det_m.ap50 = d;
                seg_m.ap50 = s;
            }
        }
        out.per_class_det[cid] = det_m;
        out.per_class_seg[cid] = seg_m;

        auto add = [&](GroupResult& g) {
            g.det.ap += det_m.ap;
            g.det.ap50 += det_m.ap50;
            g.seg.ap += seg_m.ap;
            g.seg.ap50 += seg_m.ap50;
            ++g.num_classes;
        };
        add(out.overall);
        if (split.is_base(cid)) add(out.base);
        if (split.is_novel(cid)) add(out.novel);
    }
    for (GroupResult* g : {&out.overall, &out.base, &out.novel})
        if (g->num_classes > 0) {
            g->det.ap /= g->num_classes;
            g->det.ap50 /= g->num_classes;
            g->seg.ap /= g->num_classes;
            g->seg.ap50 /= g->num_classes;
        }
    return out;
}

// Inference over every image of a manifest, scored against its own
// annotations.
inline EpisodeResult evaluate_dataset(const ModelComponents& model,
                                      const ClassRegistry& reg,
                                      const DatasetManifest& test_data,
                                      const ClassSplit& split,
                                      const EpisodeSpec& spec) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<InstanceAnnotation>> gts;
    Rng oracle_rng(uint64_t(uint32_t(spec.seed)) * 104729u + 7u);
    for (const auto& im : test_data.images) {
        std::vector<InstanceAnnotation> img_gts;
        for (const auto* a : test_data.annotations_of(im.id))
            img_gts.push_back(a->ann);
        const Image img = test_data.load_image(im);
        dets.push_back(
            run_inference(model, reg, img, spec, &img_gts, &oracle_rng));
        gts.push_back(std::move(img_gts));
    }
    return score_detections(dets, gts, split);
}

// ---------------------------------------------------------------- episodes

struct MetricStats {
    double mean = 0.0, stddev = 0.0;
    std::vector<double> per_seed;

    void finish() {
        for (double v : per_seed) mean += v;
        mean /= double(per_seed.size());
        for (double v : per_seed) stddev += (v - mean) * (v - mean);
        stddev = std::sqrt(stddev / double(per_seed.size()));
    }
};

struct GroupStats {
    MetricStats det_ap, det_ap50, seg_ap, seg_ap50;
};

struct EvalReport {
    GroupStats overall, base, novel;
    std::vector<EpisodeResult> per_seed;
    int num_repeats = 0;
};

// Episode adaptation: imprinting (iMTFA path) or a fine-tuning run on a
// balanced K-shot set (MTFA path).
enum class EpisodeAdapt { Imprint, Finetune };

struct EpisodeRunConfig {
    EpisodeSpec spec;  // per repeat r the effective seed is spec.seed + r
    int num_repeats = 10;
    EpisodeAdapt adapt = EpisodeAdapt::Imprint;
    TrainConfig train;  // used by the fine-tuning path
};

// Builds per-class shot lists (image pointers + GT boxes) from sampled
// shots; caches decoded images by id.
inline void imprint_from_shots(const ModelComponents& model, ClassRegistry& reg,
                               const std::vector<ShotSet>& shot_sets,
                               const DatasetManifest& shots_data) {
    std::map<int, Image> cache;
    for (const auto& set : shot_sets) {
        std::vector<std::pair<const Image*, Box>> shots;
        for (const auto& s : set.shots) {
            auto it = cache.find(s.image_id);
            if (it == cache.end())
                it = cache
                         .emplace(s.image_id, shots_data.load_image(
                                                  *shots_data.find_image(s.image_id)))
                         .first;
            shots.emplace_back(&it->second, s.ann.box);
        }
        imprint_class(model, reg, set.class_id, shots);
    }
}

inline EvalReport run_episodes(const ModelComponents& model,
                               const DatasetManifest& shots_data,
                               const DatasetManifest& test_data,
                               const ClassSplit& split,
                               const EpisodeRunConfig& rc) {
    check(rc.num_repeats >= 1, "run_episodes: need at least one repeat");
    check(rc.spec.k >= 1, "run_episodes: K must be >= 1");
    EvalReport report;
    report.num_repeats = rc.num_repeats;
    for (int r = 0; r < rc.num_repeats; ++r) {
        EpisodeSpec spec = rc.spec;
        spec.seed = rc.spec.seed + r;
        EpisodeResult res;
        if (rc.adapt == EpisodeAdapt::Imprint) {
            const auto shot_sets =
                sample_shots(shots_data, spec.test_class_ids, spec.k, spec.seed);
            ClassRegistry reg = model.registry;
            imprint_from_shots(model, reg, shot_sets, shots_data);
            for (int cid : spec.test_class_ids)
                check(reg.column_of(cid) >= 0,
                      "run_episodes: class " + std::to_string(cid) +
                          " missing after imprinting");
            res = evaluate_dataset(model, reg, test_data, split, spec);
        } else {
            ModelComponents tuned = model;
            TrainConfig tcfg = rc.train;
            tcfg.seed = spec.seed;
            const auto balanced =
                build_balanced_finetune_set(shots_data, split, spec.k, spec.seed);
            TrainStats stats;
            finetune_mtfa(tuned, balanced, tcfg, stats);
            res = evaluate_dataset(tuned, tuned.registry, test_data, split, spec);
        }
        report.per_seed.push_back(std::move(res));
    }
    auto collect = [&](GroupStats& gs, GroupResult EpisodeResult::*group) {
        for (const auto& res : report.per_seed) {
            const GroupResult& g = res.*group;
            gs.det_ap.per_seed.push_back(g.det.ap);
            gs.det_ap50.per_seed.push_back(g.det.ap50);
            gs.seg_ap.per_seed.push_back(g.seg.ap);
            gs.seg_ap50.per_seed.push_back(g.seg.ap50);
        }
        for (MetricStats* m : {&gs.det_ap, &gs.det_ap50, &gs.seg_ap, &gs.seg_ap50})
            m->finish();
    };
    collect(report.overall, &EpisodeResult::overall);
    collect(report.base, &EpisodeResult::base);
    collect(report.novel, &EpisodeResult::novel);
    return report;
}

// ----------------------------------------------------------------- reports

inline nlohmann::json report_to_json(const EvalReport& rep) {
    auto stats = [](const MetricStats& m) {
        return nlohmann::json{
            {"mean", m.mean}, {"std", m.stddev}, {"per_seed", m.per_seed}};
    };
    auto group = [&](const GroupStats& g) {
        return nlohmann::json{{"det_ap", stats(g.det_ap)},
                              {"det_ap50", stats(g.det_ap50)},
                              {"seg_ap", stats(g.seg_ap)},
                              {"seg_ap50", stats(g.seg_ap50)}};
    };
    nlohmann::json j;
    j["num_repeats"] = rep.num_repeats;
    j["overall"] = group(rep.overall);
    j["base"] = group(rep.base);
    j["novel"] = group(rep.novel);
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& res : rep.per_seed) {
        nlohmann::json s;
        for (const auto& [name, g] :
             {std::pair<const char*, const GroupResult&>{"overall", res.overall},
              {"base", res.base},
              {"novel", res.novel}})
            s[name] = {{"det_ap", g.det.ap},
                       {"det_ap50", g.det.ap50},
                       {"seg_ap", g.seg.ap},
                       {"seg_ap50", g.seg.ap50},
                       {"num_classes", g.num_classes}};
        nlohmann::json pc = nlohmann::json::object();
        for (const auto& [cid, m] : res.per_class_det)
            pc[std::to_string(cid)] = {
                {"det_ap", m.ap},
                {"det_ap50", m.ap50},
                {"seg_ap", res.per_class_seg.at(cid).ap},
                {"seg_ap50", res.per_class_seg.at(cid).ap50}};
        s["per_class"] = pc;
        if (!res.classes_without_gt.empty())
            s["classes_without_gt"] =
                std::vector<int>(res.classes_without_gt.begin(),
                                 res.classes_without_gt.end());
        seeds.push_back(std::move(s));
    }
    j["per_seed"] = seeds;
    return j;
}

inline std::string format_report(const EvalReport& rep) {
    char buf[256];
    std::string out;
    out += "group    task  AP        AP50\n";
    for (const auto& [name, g] :
         {std::pair<const char*, const GroupStats&>{"overall", rep.overall},
          {"base", rep.base},
          {"novel", rep.novel}}) {
        std::snprintf(buf, sizeof(buf), "%-8s det   %.3f+-%.3f  %.3f+-%.3f\n",
                      name, g.det_ap.mean, g.det_ap.stddev, g.det_ap50.mean,
                      g.det_ap50.stddev);
        out += buf;
        std::snprintf(buf, sizeof(buf), "%-8s seg   %.3f+-%.3f  %.3f+-%.3f\n",
                      name, g.seg_ap.mean, g.seg_ap.stddev, g.seg_ap50.mean,
                      g.seg_ap50.stddev);
        out += buf;
    }
    return out;
}

}  // namespace imtfa
