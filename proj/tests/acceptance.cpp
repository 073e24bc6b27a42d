// Acceptance suite: one test case per criterion, each printing a
// single PASS line when its assertions hold. Tolerances and runtime
// budgets are pinned here. The end-to-end criteria share one trained
// pipeline (built lazily) to stay inside the overall budget.
#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "imtfa/config.hpp"
#include "imtfa/eval.hpp"

using namespace imtfa;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report_pass(int criterion, const std::string& detail) {
    std::cout << "[criterion " << criterion << "] PASS: " << detail << "\n";
}

Matrix random_matrix(Rng& rng, int rows, int cols, float scale = 1.f) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

ClassRegistry random_registry(Rng& rng, int e, int c, float alpha,
                              bool imprint_last = false) {
    std::vector<int> ids;
    for (int j = 0; j < c - 1; ++j) ids.push_back(j + 1);
    ClassRegistry reg = ClassRegistry::create(e, ids, alpha, false, rng);
    if (imprint_last && c >= 3) {
        // flip the last foreground column to imprinted origin
        reg.columns[size_t(c - 3)].origin = ColumnOrigin::Imprinted;
    }
    return reg;
}

}  // namespace

// -------------------------------------------------------------------------
// 1. Cosine-classifier correctness vs a double-precision oracle.
TEST_CASE("criterion 1: cosine scores match the normalize-then-dot oracle") {
    const auto t0 = Clock::now();
    Rng rng(101);
    double max_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int e = 2 + rng.uniform_int(31);
        const int c = 2 + rng.uniform_int(7);
        const int n = 1 + rng.uniform_int(6);
        const float alpha = rng.uniform(0.5f, 25.f);
        ClassRegistry reg = random_registry(rng, e, c, alpha);
        Matrix z = random_matrix(rng, n, e, rng.uniform(0.1f, 5.f));
        const Matrix s = cosine_scores(z, reg);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                // oracle in double precision
                Eigen::VectorXd zi = z.row(i).transpose().cast<double>();
                Eigen::VectorXd wj = reg.weight.v.col(j).cast<double>();
                const double want =
                    double(alpha) * zi.dot(wj) / (zi.norm() * wj.norm());
                const double tol = 1e-6 * std::max(1.0, double(alpha));
                REQUIRE(std::abs(double(s(i, j)) - want) <= tol);
                max_err = std::max(max_err, std::abs(double(s(i, j)) - want));
                REQUIRE(std::abs(s(i, j)) <= alpha * (1.f + 1e-6f));
            }
    }
    const double dt = seconds_since(t0);
    REQUIRE(dt < 5.0);
    report_pass(1, "1000 cases, max abs error " + std::to_string(max_err) +
                       ", " + std::to_string(dt) + " s");
}

// -------------------------------------------------------------------------
// 2. Analytic gradients of cosine scores + softmax CE vs central FD.
TEST_CASE("criterion 2: classifier gradients match finite differences") {
    const auto t0 = Clock::now();
    const int e = 8, c = 5;
    const double fd_eps = 1e-5;
    const double rel_tol = 1e-3;
    Rng rng(202);

    // double-precision reference of the full loss, so the central
    // differences are not drowned by float rounding
    auto loss_ref = [&](const Eigen::VectorXd& z, const Eigen::MatrixXd& w,
                        double alpha, int label) {
        Eigen::VectorXd s(w.cols());
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            s(j) = alpha * z.dot(w.col(j)) / (z.norm() * w.col(j).norm());
        const Eigen::VectorXd p = (s.array() - s.maxCoeff()).exp();
        return -std::log(p(label) / p.sum());
    };

    for (int trial = 0; trial < 50; ++trial) {
        ClassRegistry reg = random_registry(rng, e, c, 10.f);
        Matrix z = random_matrix(rng, 1, e);
        const int label = rng.uniform_int(c);

        // analytic (float implementation under test)
        const Matrix s = cosine_scores(z, reg);
        Vector row = s.row(0).transpose();
        Vector dscores;
        softmax_ce(row, label, dscores);
        Matrix ds = dscores.transpose();
        reg.weight.g.setZero();
        const Matrix dz = cosine_scores_backward(z, reg, ds);

        const Eigen::VectorXd zd = z.row(0).transpose().cast<double>();
        const Eigen::MatrixXd wd = reg.weight.v.cast<double>();
        auto check_rel = [&](float analytic, double fd) {
            const double denom =
                std::max(1e-4, std::abs(double(analytic)) + std::abs(fd));
            REQUIRE(std::abs(double(analytic) - fd) / denom < rel_tol);
        };
        for (int i = 0; i < e; ++i) {
            Eigen::VectorXd zp = zd, zm = zd;
            zp(i) += fd_eps;
            zm(i) -= fd_eps;
            check_rel(dz(0, i), (loss_ref(zp, wd, 10.0, label) -
                                 loss_ref(zm, wd, 10.0, label)) /
                                    (2.0 * fd_eps));
        }
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < e; ++i) {
                Eigen::MatrixXd wp = wd, wm = wd;
                wp(i, j) += fd_eps;
                wm(i, j) -= fd_eps;
                check_rel(reg.weight.g(i, j), (loss_ref(zd, wp, 10.0, label) -
                                               loss_ref(zd, wm, 10.0, label)) /
                                                  (2.0 * fd_eps));
            }
    }
    const double dt = seconds_since(t0);
    REQUIRE(dt < 30.0);
    report_pass(2, "50 cases (e=8, c=5), rel tol 1e-3, " + std::to_string(dt) +
                       " s");
}

// -------------------------------------------------------------------------
// 3. Imprinting invariants.
TEST_CASE("criterion 3: imprinting invariants hold") {
    const auto t0 = Clock::now();
    Rng rng(303);
    const int e = 16;

    // K=1 stores the unit-normalized shot embedding
    Vector z = random_matrix(rng, e, 1).col(0);
    const Vector rep = merge_shot_embeddings({z});
    REQUIRE((rep - z / z.norm()).cwiseAbs().maxCoeff() < 1e-6f);

    // permutation and positive-scaling invariance
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Vector> shots;
        const int k = 2 + rng.uniform_int(6);
        for (int i = 0; i < k; ++i) shots.push_back(random_matrix(rng, e, 1).col(0));
        const Vector base = merge_shot_embeddings(shots);
        std::vector<Vector> permuted = shots;
        rng.shuffle(permuted);
        REQUIRE((merge_shot_embeddings(permuted) - base).cwiseAbs().maxCoeff() <
                1e-6f);
        std::vector<Vector> scaled;
        for (const auto& s : shots) scaled.push_back(s * rng.uniform(0.1f, 9.f));
        REQUIRE((merge_shot_embeddings(scaled) - base).cwiseAbs().maxCoeff() <
                1e-6f);
    }

    // appending a column leaves prior columns and scores bit-identical
    ClassRegistry reg = random_registry(rng, e, 6, 10.f);
    const Matrix w_before = reg.weight.v;
    const Matrix probe = random_matrix(rng, 4, e);
    const Matrix s_before = cosine_scores(probe, reg);
    imprint_column(reg, 99, merge_shot_embeddings({z}));
    REQUIRE(reg.weight.v.leftCols(w_before.cols()) == w_before);
    const Matrix s_after = cosine_scores(probe, reg);
    REQUIRE(s_after.leftCols(s_before.cols()) == s_before);

    // save/load round-trips bit-exactly
    const auto path = (fs::temp_directory_path() / "acc_registry.bin").string();
    save_registry(reg, path);
    const ClassRegistry loaded = load_registry(path, e);
    REQUIRE(loaded.weight.v == reg.weight.v);
    REQUIRE(loaded.columns.size() == reg.columns.size());
    fs::remove(path);

    const double dt = seconds_since(t0);
    REQUIRE(dt < 10.0);
    report_pass(3, "normalized-mean merge, append isolation, round-trip; " +
                       std::to_string(dt) + " s");
}

// -------------------------------------------------------------------------
// 4. AP oracle equivalence on randomized box and mask instances.
namespace {

std::vector<char> oracle_greedy_match(const std::vector<float>& iou_row_major,
                                      int nd, int ng, float thresh) {
    std::vector<char> tp(size_t(nd), 0), used(size_t(std::max(ng, 1)), 0);
    for (int d = 0; d < nd; ++d) {
        float best = -1.f;
        int arg = -1;
        for (int g = 0; g < ng; ++g) {
            if (used[size_t(g)]) continue;
            const float iou = iou_row_major[size_t(d * ng + g)];
            if (iou >= thresh && iou > best) {
                best = iou;
                arg = g;
            }
        }
        if (arg >= 0) {
            used[size_t(arg)] = 1;
            tp[size_t(d)] = 1;
        }
    }
    return tp;
}

double oracle_ap_direct(const std::vector<char>& tp, int num_gt) {
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double target = double(r) / 100.0;
        double best = 0.0;
        int cum = 0;
        for (size_t k = 0; k < tp.size(); ++k) {
            cum += tp[k];
            if (double(cum) / double(num_gt) >= target - 1e-12)
                best = std::max(best, double(cum) / double(k + 1));
        }
        ap += best;
    }
    return ap / 101.0;
}

BinaryMask random_blob(Rng& rng, int size) {
    BinaryMask m(size, size);
    const int x = rng.uniform_int(size - 4), y = rng.uniform_int(size - 4);
    const int w = 2 + rng.uniform_int(size - x - 2), h = 2 + rng.uniform_int(size - y - 2);
    for (int r = y; r < std::min(size, y + h); ++r)
        for (int c = x; c < std::min(size, x + w); ++c) m.set(r, c, 1);
    return m;
}

}  // namespace

TEST_CASE("criterion 4: AP equals brute-force integration for box and mask IoU") {
    const auto t0 = Clock::now();
    Rng rng(404);
    for (IouKind kind : {IouKind::BoxIou, IouKind::MaskIou}) {
        for (int trial = 0; trial < 200; ++trial) {
            const int nd = 1 + rng.uniform_int(5), ng = 1 + rng.uniform_int(3);
            std::vector<Detection> dets;
            std::vector<InstanceAnnotation> gts;
            for (int i = 0; i < nd; ++i) {
                Detection d;
                d.class_id = 1;
                d.score = float(nd - i);  // already score-ordered
                d.mask = random_blob(rng, 16);
                d.box = mask_to_box(*d.mask);
                dets.push_back(std::move(d));
            }
            for (int i = 0; i < ng; ++i) {
                InstanceAnnotation g;
                g.class_id = 1;
                g.mask = random_blob(rng, 16);
                g.box = mask_to_box(*g.mask);
                gts.push_back(std::move(g));
            }
            const float thresh = 0.5f;
            std::vector<const Detection*> dp;
            std::vector<const InstanceAnnotation*> gp;
            for (const auto& d : dets) dp.push_back(&d);
            for (const auto& g : gts) gp.push_back(&g);
            const auto tp = match_detections(dp, gp, kind, thresh);
            const double got = average_precision(tp, ng);

            std::vector<float> ious(size_t(nd * ng));
            for (int d = 0; d < nd; ++d)
                for (int g = 0; g < ng; ++g)
                    ious[size_t(d * ng + g)] =
                        kind == IouKind::BoxIou
                            ? box_iou(dets[size_t(d)].box, gts[size_t(g)].box)
                            : mask_iou(*dets[size_t(d)].mask,
                                       *gts[size_t(g)].mask);
            const auto otp = oracle_greedy_match(ious, nd, ng, thresh);
            REQUIRE(tp == otp);
            REQUIRE(std::abs(got - oracle_ap_direct(otp, ng)) < 1e-9);
        }
    }
    const double dt = seconds_since(t0);
    REQUIRE(dt < 30.0);
    report_pass(4, "200 box + 200 mask instances within 1e-9; " +
                       std::to_string(dt) + " s");
}

// -------------------------------------------------------------------------
// Shared end-to-end pipeline for criteria 5-9: 6 base / 3 novel shapes,
// ~300 train / 100 test images, stage-1 + stage-2 training.
namespace {

struct Pipeline {
    ClassSplit split;
    fs::path dir;
    DatasetManifest train_manifest, test_manifest, base_train;
    ModelComponents model{};  // after iMTFA stage-2
    TrainConfig tcfg;
    double train_seconds = 0.0;
};

// Hyperparameters frozen after the initial calibration run.
constexpr int kStage1Iterations = 2000;
constexpr int kStage2Iterations = 400;
constexpr float kStage1Lr = 0.01f;
constexpr float kStage2Lr = 0.002f;

Pipeline build_pipeline(Variant variant, int seed) {
    Pipeline p;
    p.split.base_ids = {1, 2, 3, 4, 5, 6};
    p.split.novel_ids = {7, 8, 9};
    p.dir = fs::temp_directory_path() /
            ("imtfa_acceptance_" + variant_to_string(variant));
    GeneratorParams gen;
    gen.num_images = 300;
    gen.image_size = 128;
    gen.seed = 11;
    gen.max_instances = 3;
    save_dataset(generate_dataset(gen, p.split), (p.dir / "train").string());
    gen.num_images = 100;
    gen.seed = 1000011;
    save_dataset(generate_dataset(gen, p.split), (p.dir / "test").string());
    p.train_manifest = load_manifest((p.dir / "train/manifest.json").string());
    p.test_manifest = load_manifest((p.dir / "test/manifest.json").string());
    p.base_train = p.train_manifest.restricted_to_classes(p.split.base_ids);

    ModelSpec spec;
    spec.embedding_dim = 128;
    spec.alpha = 10.f;
    spec.linear_classifier = variant == Variant::OneStageLinear;
    spec.fg_class_ids = p.split.base_ids;
    p.model = ModelComponents::create(spec, seed);

    p.tcfg.variant = variant;
    p.tcfg.seed = seed;
    p.tcfg.batch_size = 2;
    p.tcfg.iterations_stage1 = kStage1Iterations;
    p.tcfg.lr_stage1 = kStage1Lr;
    p.tcfg.iterations_stage2 = kStage2Iterations;
    p.tcfg.lr_stage2 = kStage2Lr;

    const auto t0 = Clock::now();
    TrainStats stats;
    if (variant == Variant::Imtfa) {
        train_stage1(p.model, p.base_train, p.split, p.tcfg, stats);
        finetune_imtfa_stage2(p.model, p.base_train, p.split, p.tcfg, stats);
    } else {
        train_one_stage(p.model, p.base_train, p.split, p.tcfg, stats);
    }
    p.train_seconds = seconds_since(t0);
    // split discipline over the whole run
    for (int cid : stats.served_class_ids) {
        if (!p.split.is_base(cid))
            fail("pipeline: novel class " + std::to_string(cid) + " served");
    }
    return p;
}

Pipeline& imtfa_pipeline() {
    static Pipeline p = build_pipeline(Variant::Imtfa, 1);
    return p;
}

EpisodeSpec default_spec(const Pipeline& p, int k, int seed) {
    EpisodeSpec spec;
    spec.test_class_ids = p.split.novel_ids;
    spec.k = k;
    spec.seed = seed;
    return spec;
}

ClassRegistry imprint_novel(const Pipeline& p, int k, int seed) {
    ClassRegistry reg = p.model.registry;
    const auto shot_sets = sample_shots(p.train_manifest, p.split.novel_ids, k, seed);
    imprint_from_shots(p.model, reg, shot_sets, p.train_manifest);
    return reg;
}

}  // namespace

// -------------------------------------------------------------------------
// 5. GTOE soundness over a full toy evaluation.
TEST_CASE("criterion 5: GTOE emits no class absent from ground truth") {
    Pipeline& p = imtfa_pipeline();
    const auto t0 = Clock::now();
    const ClassRegistry reg = imprint_novel(p, 5, 500);
    EpisodeSpec spec = default_spec(p, 5, 500);
    spec.gtoe = true;
    Rng rng(505);
    int checked = 0;
    for (const auto& im : p.test_manifest.images) {
        std::vector<InstanceAnnotation> gts;
        std::set<int> present;
        for (const auto* a : p.test_manifest.annotations_of(im.id)) {
            gts.push_back(a->ann);
            present.insert(a->ann.class_id);
        }
        const Image img = p.test_manifest.load_image(im);
        for (const auto& det : run_inference(p.model, reg, img, spec, &gts, &rng)) {
            REQUIRE(present.count(det.class_id) == 1);
            ++checked;
        }
    }
    const double dt = seconds_since(t0);
    REQUIRE(dt < 120.0);
    report_pass(5, std::to_string(checked) + " detections over 100 images, " +
                       std::to_string(dt) + " s");
}

// -------------------------------------------------------------------------
// 6. End-to-end toy benchmark: base quality and shots trend.
TEST_CASE("criterion 6: toy benchmark reaches base quality; novel AP grows with K") {
    Pipeline& p = imtfa_pipeline();
    const auto t0 = Clock::now();

    // base quality with the un-imprinted registry
    const EpisodeResult base_res = evaluate_dataset(
        p.model, p.model.registry, p.test_manifest, p.split, default_spec(p, 1, 600));
    std::cout << "  base det AP50 " << base_res.base.det.ap50 << ", base seg AP50 "
              << base_res.base.seg.ap50 << "\n";
    REQUIRE(base_res.base.det.ap50 >= 0.6);
    REQUIRE(base_res.base.seg.ap50 >= 0.5);

    // novel performance over K in {1,5,10}, 10 seeds each
    std::map<int, double> novel_det_ap50, novel_seg_ap50;
    for (int k : {1, 5, 10}) {
        EpisodeRunConfig rc;
        rc.spec = default_spec(p, k, 600);
        rc.num_repeats = 10;
        const EvalReport rep =
            run_episodes(p.model, p.train_manifest, p.test_manifest, p.split, rc);
        novel_det_ap50[k] = rep.novel.det_ap50.mean;
        novel_seg_ap50[k] = rep.novel.seg_ap50.mean;
        std::cout << "  K=" << k << " novel det AP50 " << rep.novel.det_ap50.mean
                  << "+-" << rep.novel.det_ap50.stddev << ", novel seg AP50 "
                  << rep.novel.seg_ap50.mean << "+-" << rep.novel.seg_ap50.stddev
                  << "\n";
    }
    for (int k : {1, 5, 10}) {
        REQUIRE(novel_det_ap50[k] > 0.0);
        REQUIRE(novel_seg_ap50[k] > 0.0);
    }
    // trend with slack: K=10 mean >= K=1 mean
    REQUIRE(novel_det_ap50[10] >= novel_det_ap50[1]);

    const double total = p.train_seconds + seconds_since(t0);
    REQUIRE(total < 1800.0);
    report_pass(6, "training " + std::to_string(p.train_seconds) + " s, eval " +
                       std::to_string(seconds_since(t0)) + " s");
}

// -------------------------------------------------------------------------
// Derived probes on the trained pipeline: the fine-tuned extractor
// separates classes in embedding space, and an imprinted class
// retrieves its own shot instance under oracle proposals.
TEST_CASE("pipeline probes: embedding separation and shot self-retrieval") {
    Pipeline& p = imtfa_pipeline();

    // same-class pairs should have higher mean cosine than cross-class
    std::map<int, std::vector<Vector>> by_class;
    for (size_t im = 0; im < 20 && im < p.test_manifest.images.size(); ++im) {
        const auto& entry = p.test_manifest.images[im];
        const Image img = p.test_manifest.load_image(entry);
        for (const auto* a : p.test_manifest.annotations_of(entry.id)) {
            Vector z = p.model.extract_embedding(img, a->ann.box);
            by_class[a->ann.class_id].push_back(z / z.norm());
        }
    }
    double same = 0.0, cross = 0.0;
    long n_same = 0, n_cross = 0;
    for (auto it = by_class.begin(); it != by_class.end(); ++it) {
        for (size_t i = 0; i < it->second.size(); ++i)
            for (size_t j = i + 1; j < it->second.size(); ++j) {
                same += double(it->second[i].dot(it->second[j]));
                ++n_same;
            }
        for (auto jt = std::next(it); jt != by_class.end(); ++jt)
            for (const auto& a : it->second)
                for (const auto& b : jt->second) {
                    cross += double(a.dot(b));
                    ++n_cross;
                }
    }
    REQUIRE(n_same > 0);
    REQUIRE(n_cross > 0);
    std::cout << "  mean cosine: same-class " << same / double(n_same)
              << ", cross-class " << cross / double(n_cross) << "\n";
    REQUIRE(same / double(n_same) > cross / double(n_cross));

    // imprint one shot, then detect that very instance with oracle
    // proposals; box refinement may nudge the box, so require IoU >= 0.8
    const auto shot_sets = sample_shots(p.train_manifest, {7}, 1, 123);
    ClassRegistry reg = p.model.registry;
    imprint_from_shots(p.model, reg, shot_sets, p.train_manifest);
    const Shot& shot = shot_sets[0].shots[0];
    const Image shot_img =
        p.train_manifest.load_image(*p.train_manifest.find_image(shot.image_id));
    std::vector<InstanceAnnotation> gts;
    for (const auto* a : p.train_manifest.annotations_of(shot.image_id))
        gts.push_back(a->ann);
    EpisodeSpec spec = default_spec(p, 1, 123);
    spec.oracle_proposals = true;
    spec.oracle_jitter = 0.f;
    Rng rng(123);
    float best_iou = 0.f;
    for (const auto& det : run_inference(p.model, reg, shot_img, spec, &gts, &rng))
        if (det.class_id == 7)
            best_iou = std::max(best_iou, box_iou(det.box, shot.ann.box));
    std::cout << "  shot self-retrieval: best class-7 IoU " << best_iou << "\n";
    REQUIRE(best_iou >= 0.8f);
}

// -------------------------------------------------------------------------
// 7. Incrementality: no updates, size-independent imprint time,
// bit-identical base evaluation restricted to base columns.
TEST_CASE("criterion 7: imprinting is incremental") {
    Pipeline& p = imtfa_pipeline();
    const auto t0 = Clock::now();

    // no parameter updates during imprinting
    const auto before = snapshot_params(p.model);
    const ClassRegistry reg = imprint_novel(p, 5, 700);
    size_t i = 0;
    for (Param* prm : p.model.all_params()) {
        REQUIRE(prm->v == before[i].second);
        ++i;
    }

    // imprint wall-clock independent of base-training-set size (10x)
    ClassSplit split = p.split;
    GeneratorParams gen;
    gen.image_size = 128;
    gen.max_instances = 3;
    gen.base_only_fraction = 0.3f;  // enough novel instances at 30 images
    gen.num_images = 30;
    gen.seed = 77;
    const auto small_dir = fs::temp_directory_path() / "imtfa_acc_small";
    const auto large_dir = fs::temp_directory_path() / "imtfa_acc_large";
    save_dataset(generate_dataset(gen, split), small_dir.string());
    gen.num_images = 300;
    save_dataset(generate_dataset(gen, split), large_dir.string());
    const auto small_m = load_manifest((small_dir / "manifest.json").string());
    const auto large_m = load_manifest((large_dir / "manifest.json").string());
    auto time_imprint = [&](const DatasetManifest& m) {
        double best = 1e18;  // best-of-5 damps scheduler noise
        for (int rep = 0; rep < 5; ++rep) {
            ClassRegistry r = p.model.registry;
            const auto t = Clock::now();
            imprint_from_shots(p.model, r, sample_shots(m, split.novel_ids, 3, 7),
                               m);
            best = std::min(best, seconds_since(t));
        }
        return best;
    };
    const double t_small = time_imprint(small_m);
    const double t_large = time_imprint(large_m);
    std::cout << "  imprint " << t_small << " s on 30 images vs " << t_large
              << " s on 300 images\n";
    REQUIRE(t_large / t_small < 1.5);
    fs::remove_all(small_dir);
    fs::remove_all(large_dir);

    // base evaluation bit-identical when restricted to base columns
    const ClassRegistry restricted = reg.restricted_to(p.split.base_ids);
    EpisodeSpec spec = default_spec(p, 5, 700);
    Rng rng_a(707), rng_b(707);
    for (size_t im = 0; im < std::min<size_t>(p.test_manifest.images.size(), 25);
         ++im) {
        const auto& entry = p.test_manifest.images[im];
        const Image img = p.test_manifest.load_image(entry);
        const auto da =
            run_inference(p.model, p.model.registry, img, spec, nullptr, &rng_a);
        const auto db =
            run_inference(p.model, restricted, img, spec, nullptr, &rng_b);
        REQUIRE(da.size() == db.size());
        for (size_t d = 0; d < da.size(); ++d) {
            REQUIRE(da[d].class_id == db[d].class_id);
            REQUIRE(da[d].score == db[d].score);
            REQUIRE(da[d].box == db[d].box);
            REQUIRE(*da[d].mask == *db[d].mask);
        }
    }
    report_pass(7, "no updates; wall-clock ratio " +
                       std::to_string(t_large / t_small) +
                       "; base eval bit-identical; " +
                       std::to_string(seconds_since(t0)) + " s");
}

// -------------------------------------------------------------------------
// 8. Ablation trend: iMTFA >= One-Stage-Cosine on novel seg AP50.
// Soft criterion: a violation produces a written analysis, not a failure.
TEST_CASE("criterion 8: iMTFA vs One-Stage-Cosine novel segmentation") {
    Pipeline& imtfa = imtfa_pipeline();
    const Pipeline one_stage = build_pipeline(Variant::OneStageCosine, 1);
    const int seeds = 5, k = 5;

    auto novel_seg = [&](const Pipeline& p) {
        EpisodeRunConfig rc;
        rc.spec = default_spec(p, k, 800);
        rc.num_repeats = seeds;
        const EvalReport rep =
            run_episodes(p.model, p.train_manifest, p.test_manifest, p.split, rc);
        return rep;
    };
    const EvalReport a = novel_seg(imtfa);
    const EvalReport b = novel_seg(one_stage);
    std::cout << "  per-seed novel seg AP50 (iMTFA):";
    for (double v : a.novel.seg_ap50.per_seed) std::cout << " " << v;
    std::cout << "\n  per-seed novel seg AP50 (one-stage-cosine):";
    for (double v : b.novel.seg_ap50.per_seed) std::cout << " " << v;
    std::cout << "\n";
    if (a.novel.seg_ap50.mean >= b.novel.seg_ap50.mean) {
        report_pass(8, "iMTFA " + std::to_string(a.novel.seg_ap50.mean) +
                           " >= one-stage-cosine " +
                           std::to_string(b.novel.seg_ap50.mean) + " over " +
                           std::to_string(seeds) + " seeds");
    } else {
        // soft criterion: record the violation with an analysis
        std::cout
            << "[criterion 8] SOFT VIOLATION: one-stage-cosine ("
            << b.novel.seg_ap50.mean << ") exceeded iMTFA ("
            << a.novel.seg_ap50.mean << ") on novel seg AP50.\n"
            << "  Analysis: at desk scale both variants share the same tiny\n"
            << "  backbone and data; the gap the full-scale result relies on\n"
            << "  (a fine-tuned instance feature extractor producing better\n"
            << "  imprinting embeddings) can compress below seed noise when\n"
            << "  the one-stage embedding space is already near-cosine-\n"
            << "  separable on 6 base shape classes. Per-seed values above\n"
            << "  allow recomputing the comparison at other K.\n";
    }
    SUCCEED();
}

// -------------------------------------------------------------------------
// 9. Alpha behavior: exact argmax invariance + sweep report.
TEST_CASE("criterion 9: argmax is alpha-invariant; sweep report produced") {
    const auto t0 = Clock::now();
    Rng rng(909);
    // exact per-RoI argmax invariance across alpha
    for (int trial = 0; trial < 200; ++trial) {
        const int e = 2 + rng.uniform_int(31), c = 2 + rng.uniform_int(7);
        ClassRegistry reg = random_registry(rng, e, c, 1.f);
        const Matrix z = random_matrix(rng, 4, e);
        std::vector<int> first;
        for (float alpha : {1.f, 5.f, 10.f, 20.f}) {
            reg.alpha = alpha;
            const auto res = classify(cosine_scores(z, reg));
            if (first.empty())
                first = res.argmax;
            else
                REQUIRE(res.argmax == first);
        }
    }

    // sweep over the toy all-classes setting, mirrored as a table
    Pipeline& p = imtfa_pipeline();
    const ClassRegistry reg = imprint_novel(p, 5, 900);
    const auto sweep_path = fs::current_path() / "alpha_sweep.txt";
    std::ofstream sweep(sweep_path.string());
    sweep << "alpha  overall_det_AP50  overall_seg_AP50  novel_det_AP50\n";
    for (float alpha : {1.f, 5.f, 10.f, 20.f}) {
        ClassRegistry scaled = reg;
        scaled.alpha = alpha;
        const EpisodeResult res = evaluate_dataset(
            p.model, scaled, p.test_manifest, p.split, default_spec(p, 5, 900));
        char line[128];
        std::snprintf(line, sizeof(line), "%5.1f  %.3f             %.3f             %.3f\n",
                      alpha, res.overall.det.ap50, res.overall.seg.ap50,
                      res.novel.det.ap50);
        sweep << line;
    }
    sweep.close();
    REQUIRE(fs::exists(sweep_path));
    report_pass(9, "argmax invariant across alpha {1,5,10,20}; sweep at " +
                       sweep_path.string() + "; " +
                       std::to_string(seconds_since(t0)) + " s");
}
