#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "imtfa/eval.hpp"

using namespace imtfa;

namespace {

Detection det(int cid, float score, Box box) {
    Detection d;
    d.class_id = cid;
    d.score = score;
    d.box = box;
    return d;
}

InstanceAnnotation gt(int cid, Box box) {
    InstanceAnnotation g;
    g.class_id = cid;
    g.box = box;
    return g;
}

// Independent greedy matcher: explicit IoU table, same tie rules.
std::vector<char> oracle_match(const std::vector<Box>& dets,
                               const std::vector<Box>& gts, float thresh) {
    std::vector<char> tp(dets.size(), 0), used(gts.size(), 0);
    for (size_t d = 0; d < dets.size(); ++d) {
        float best = -1.f;
        int arg = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const float iou = box_iou(dets[d], gts[g]);
            if (iou >= thresh && iou > best) {
                best = iou;
                arg = int(g);
            }
        }
        if (arg >= 0) {
            used[size_t(arg)] = 1;
            tp[d] = 1;
        }
    }
    return tp;
}

// Direct 101-point definition, coded independently in doubles.
double oracle_ap(const std::vector<char>& tp, int num_gt) {
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double target = double(r) / 100.0;
        double best = 0.0;
        int cum = 0;
        for (size_t k = 0; k < tp.size(); ++k) {
            cum += tp[k];
            const double recall = double(cum) / double(num_gt);
            const double precision = double(cum) / double(k + 1);
            if (recall >= target - 1e-12) best = std::max(best, precision);
        }
        ap += best;
    }
    return ap / 101.0;
}

ModelComponents tiny_model(std::vector<int> fg, int seed = 0) {
    ModelSpec spec;
    spec.embedding_dim = 32;
    spec.fg_class_ids = std::move(fg);
    return ModelComponents::create(spec, seed);
}

}  // namespace

TEST_CASE("greedy matching basics") {
    const Box b{10, 10, 30, 30};
    const Detection d1 = det(1, 0.9f, b);
    const InstanceAnnotation g1 = gt(1, b);
    auto tp = match_detections({&d1}, {&g1}, IouKind::BoxIou, 0.5f);
    CHECK(tp == std::vector<char>{1});

    // two detections on one GT: higher-scored is the TP
    const Detection d2 = det(1, 0.8f, Box{11, 10, 31, 30});
    tp = match_detections({&d1, &d2}, {&g1}, IouKind::BoxIou, 0.5f);
    CHECK(tp == std::vector<char>{1, 0});

    // mask matching requires masks on both sides
    tp = match_detections({&d1}, {&g1}, IouKind::MaskIou, 0.5f);
    CHECK(tp == std::vector<char>{0});
}

TEST_CASE("greedy matching agrees with an exhaustive oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const int nd = 1 + rng.uniform_int(5), ng = rng.uniform_int(4);
        std::vector<Box> dboxes, gboxes;
        std::vector<Detection> dets;
        std::vector<InstanceAnnotation> gts;
        for (int i = 0; i < nd; ++i) {
            const float x = rng.uniform(0.f, 40.f), y = rng.uniform(0.f, 40.f);
            dboxes.push_back(Box{x, y, x + rng.uniform(5.f, 25.f),
                                 y + rng.uniform(5.f, 25.f)});
            dets.push_back(det(1, float(nd - i), dboxes.back()));  // sorted
        }
        for (int i = 0; i < ng; ++i) {
            const float x = rng.uniform(0.f, 40.f), y = rng.uniform(0.f, 40.f);
            gboxes.push_back(Box{x, y, x + rng.uniform(5.f, 25.f),
                                 y + rng.uniform(5.f, 25.f)});
            gts.push_back(gt(1, gboxes.back()));
        }
        std::vector<const Detection*> dp;
        std::vector<const InstanceAnnotation*> gp;
        for (const auto& d : dets) dp.push_back(&d);
        for (const auto& g : gts) gp.push_back(&g);
        const auto got = match_detections(dp, gp, IouKind::BoxIou, 0.5f);
        const auto want = oracle_match(dboxes, gboxes, 0.5f);
        REQUIRE(got == want);
    }
}

TEST_CASE("average precision reference values") {
    CHECK(average_precision({1}, 1) == Catch::Approx(1.0).margin(1e-12));
    CHECK(average_precision({0}, 1) == Catch::Approx(0.0).margin(1e-12));
    // [TP,FP,TP] with 2 GT: 51 grid points at precision 1, 50 at 2/3
    const double expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    CHECK(average_precision({1, 0, 1}, 2) == Catch::Approx(expected).margin(1e-12));
    CHECK_THROWS(average_precision({1}, 0));
}

TEST_CASE("average precision agrees with the direct definition") {
    Rng rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + rng.uniform_int(12);
        std::vector<char> tp;
        int ones = 0;
        for (int i = 0; i < n; ++i) {
            tp.push_back(char(rng.uniform() < 0.5f));
            ones += tp.back();
        }
        const int num_gt = std::max(1, ones + rng.uniform_int(3));
        CHECK(average_precision(tp, num_gt) ==
              Catch::Approx(oracle_ap(tp, num_gt)).margin(1e-9));
    }
}

TEST_CASE("average precision monotonicity properties") {
    Rng rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + rng.uniform_int(8);
        std::vector<char> tp;
        int ones = 0;
        for (int i = 0; i < n; ++i) {
            tp.push_back(char(rng.uniform() < 0.5f));
            ones += tp.back();
        }
        const int num_gt = std::max(1, ones + rng.uniform_int(3) + 1);
        const double base = average_precision(tp, num_gt);

        std::vector<char> with_fp = tp;
        with_fp.push_back(0);
        CHECK(average_precision(with_fp, num_gt) <= base + 1e-12);

        std::vector<char> with_tp = {1};
        with_tp.insert(with_tp.end(), tp.begin(), tp.end());
        CHECK(average_precision(with_tp, num_gt) >= base - 1e-12);
    }
}

TEST_CASE("GTOE zeroes absent classes without renormalizing") {
    Rng rng(31);
    ClassRegistry reg =
        ClassRegistry::create(8, {1, 2}, 10.f, false, rng);
    Matrix probs(1, 3);
    probs << 0.6f, 0.3f, 0.1f;  // class 1 absent, class 2 present, bg
    gtoe_filter(probs, reg, {2});
    CHECK(probs(0, 0) == 0.f);
    CHECK(probs(0, 1) == 0.3f);  // untouched, not renormalized
    CHECK(probs(0, 2) == 0.1f);  // background untouched
    Eigen::Index am;
    probs.row(0).maxCoeff(&am);
    CHECK(reg.columns[size_t(am)].class_id == 2);  // re-resolved label

    // gt containing all classes changes nothing
    Matrix p2(1, 3);
    p2 << 0.6f, 0.3f, 0.1f;
    gtoe_filter(p2, reg, {1, 2});
    CHECK(p2(0, 0) == 0.6f);
    CHECK(p2(0, 1) == 0.3f);
}

TEST_CASE("inference contract: thresholds, caps, GTOE soundness") {
    auto model = tiny_model({1, 2, 3, 4, 5, 6});
    Rng rng(37);
    Image img(64, 64);
    for (auto& v : img.data) v = rng.uniform();

    EpisodeSpec spec;
    spec.score_threshold = 0.05f;
    spec.max_detections = 5;
    std::vector<InstanceAnnotation> gts = {gt(1, Box{8, 8, 30, 30}),
                                           gt(2, Box{32, 32, 60, 60})};
    const auto dets = run_inference(model, model.registry, img, spec, &gts);
    CHECK(int(dets.size()) <= 5);
    for (const auto& d : dets) {
        CHECK(d.score >= spec.score_threshold);
        CHECK(d.mask.has_value());
        CHECK(d.class_id >= 1);
    }

    // GTOE: every emitted class must appear in the image's ground truth
    spec.gtoe = true;
    spec.score_threshold = 0.f;
    spec.max_detections = 100;
    const auto filtered = run_inference(model, model.registry, img, spec, &gts);
    for (const auto& d : filtered) CHECK((d.class_id == 1 || d.class_id == 2));

    // empty ground truth yields zero detections under GTOE
    std::vector<InstanceAnnotation> empty;
    CHECK(run_inference(model, model.registry, img, spec, &empty).empty());
}

TEST_CASE("scoring perfect and disjoint detections") {
    ClassSplit split;
    split.base_ids = {1};
    split.novel_ids = {2};
    BinaryMask m1(64, 64), m2(64, 64);
    for (int r = 10; r < 30; ++r)
        for (int c = 10; c < 30; ++c) m1.set(r, c, 1);
    for (int r = 40; r < 60; ++r)
        for (int c = 40; c < 60; ++c) m2.set(r, c, 1);
    InstanceAnnotation g1 = gt(1, Box{10, 10, 30, 30});
    g1.mask = m1;
    InstanceAnnotation g2 = gt(2, Box{40, 40, 60, 60});
    g2.mask = m2;

    Detection d1 = det(1, 0.9f, g1.box);
    d1.mask = m1;
    Detection d2 = det(2, 0.8f, g2.box);
    d2.mask = m2;

    const auto perfect = score_detections({{d1, d2}}, {{g1, g2}}, split);
    CHECK(perfect.overall.det.ap == Catch::Approx(1.0).margin(1e-12));
    CHECK(perfect.overall.seg.ap == Catch::Approx(1.0).margin(1e-12));
    CHECK(perfect.base.det.ap50 == Catch::Approx(1.0).margin(1e-12));
    CHECK(perfect.novel.seg.ap50 == Catch::Approx(1.0).margin(1e-12));
    CHECK(perfect.base.num_classes == 1);
    CHECK(perfect.novel.num_classes == 1);

    // detections far from any GT score zero and flag GT-less classes
    Detection stray = det(3, 0.7f, Box{0, 0, 5, 5});
    const auto bad = score_detections({{stray}}, {{g1, g2}}, split);
    CHECK(bad.overall.det.ap50 == 0.0);
    CHECK(bad.classes_without_gt.count(3) == 1);
}

TEST_CASE("episode aggregation is deterministic and bounded") {
    ClassSplit split;
    split.base_ids = {1, 2, 3, 4, 5, 6};
    split.novel_ids = {7, 8};
    GeneratorParams p;
    p.num_images = 16;
    p.image_size = 64;
    p.seed = 41;
    p.min_radius = 8.f;
    p.max_radius = 13.f;
    p.max_instances = 2;
    const auto train_ds = generate_dataset(p, split);
    p.seed = 42;
    p.num_images = 6;
    const auto test_ds = generate_dataset(p, split);
    const auto tmp = std::filesystem::temp_directory_path();
    save_dataset(train_ds, (tmp / "imtfa_eval_tr").string());
    save_dataset(test_ds, (tmp / "imtfa_eval_te").string());
    const auto shots = load_manifest((tmp / "imtfa_eval_tr/manifest.json").string());
    const auto test = load_manifest((tmp / "imtfa_eval_te/manifest.json").string());

    auto model = tiny_model(split.base_ids);
    EpisodeRunConfig rc;
    rc.spec.test_class_ids = split.novel_ids;
    rc.spec.k = 1;
    rc.spec.seed = 100;
    rc.num_repeats = 3;
    const EvalReport rep = run_episodes(model, shots, test, split, rc);
    CHECK(rep.num_repeats == 3);
    REQUIRE(int(rep.per_seed.size()) == 3);
    for (const MetricStats* m :
         {&rep.overall.det_ap50, &rep.base.seg_ap, &rep.novel.det_ap}) {
        REQUIRE(m->per_seed.size() == 3);
        const double lo = *std::min_element(m->per_seed.begin(), m->per_seed.end());
        const double hi = *std::max_element(m->per_seed.begin(), m->per_seed.end());
        CHECK(m->mean >= lo - 1e-12);
        CHECK(m->mean <= hi + 1e-12);
        for (double v : m->per_seed) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    // identical base seed, identical report
    const EvalReport rep2 = run_episodes(model, shots, test, split, rc);
    CHECK(report_to_json(rep) == report_to_json(rep2));

    // single repeat equals its own mean
    rc.num_repeats = 1;
    const EvalReport one = run_episodes(model, shots, test, split, rc);
    CHECK(one.overall.det_ap50.mean ==
          Catch::Approx(one.per_seed[0].overall.det.ap50).margin(1e-12));
    CHECK(one.overall.det_ap50.stddev == 0.0);

    std::filesystem::remove_all(tmp / "imtfa_eval_tr");
    std::filesystem::remove_all(tmp / "imtfa_eval_te");
}
