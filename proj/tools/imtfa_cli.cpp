// Command-line driver: generate / train / finetune / imprint / eval /
// report over a single experiment output directory with fixed file names.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "imtfa/config.hpp"

namespace fs = std::filesystem;
using namespace imtfa;

namespace {

struct Overrides {
    std::string config_path;
    int seed = -1;
    std::string variant;
    int k = -1;
    float alpha = -1.f;
    int repeats = -1;
    bool gtoe = false;
    bool oracle_proposals = false;
    std::string out_dir;
};

ExperimentConfig resolve(const Overrides& o) {
    check(!o.config_path.empty(), "missing --config");
    ExperimentConfig c = load_experiment_config(o.config_path);
    nlohmann::json ov = nlohmann::json::object();
    if (o.seed >= 0) {
        c.seed = o.seed;
        c.train.seed = o.seed;
        ov["seed"] = o.seed;
    }
    if (!o.variant.empty()) {
        c.train.variant = variant_from_string(o.variant);
        ov["variant"] = o.variant;
    }
    if (o.alpha > 0.f) {
        c.train.alpha = o.alpha;
        ov["alpha"] = o.alpha;
    }
    if (o.k >= 1) {
        c.k_list = {o.k};
        ov["k"] = o.k;
    }
    if (o.repeats >= 1) {
        c.num_repeats = o.repeats;
        ov["repeats"] = o.repeats;
    }
    if (o.gtoe) {
        c.gtoe = true;
        ov["gtoe"] = true;
    }
    if (o.oracle_proposals) {
        c.oracle_proposals = true;
        ov["oracle_proposals"] = true;
    }
    if (!o.out_dir.empty()) {
        c.output_dir = o.out_dir;
        ov["output_dir"] = o.out_dir;
    }
    if (!ov.empty()) c.raw["overrides"] = ov;
    return c;
}

nlohmann::json provenance(const ExperimentConfig& c) {
    return {{"config", c.raw},
            {"seed", c.seed},
            {"variant", variant_to_string(c.train.variant)},
            {"alpha", c.train.alpha}};
}

void cmd_generate(const ExperimentConfig& c) {
    check(c.generate, "generate: config uses external manifests");
    const auto train_ds = generate_dataset(c.gen_train, c.split);
    const auto test_ds = generate_dataset(c.gen_test, c.split);
    fs::create_directories(c.out("dataset"));
    save_dataset(train_ds, c.out("dataset/train").string());
    save_dataset(test_ds, c.out("dataset/test").string());
    std::ofstream((c.out("dataset/provenance.json")).string())
        << provenance(c).dump(2) << "\n";
    std::cout << "wrote " << c.train_manifest_path() << " ("
              << train_ds.manifest.images.size() << " images) and "
              << c.test_manifest_path() << " (" << test_ds.manifest.images.size()
              << " images)\n";
}

void cmd_train(const ExperimentConfig& c) {
    const auto manifest = load_manifest(c.train_manifest_path());
    const auto base = manifest.restricted_to_classes(c.split.base_ids);
    auto model = ModelComponents::create(model_spec_from_config(c), c.seed);
    TrainStats stats;
    if (c.train.variant == Variant::OneStageCosine ||
        c.train.variant == Variant::OneStageLinear)
        train_one_stage(model, base, c.split, c.train, stats);
    else
        train_stage1(model, base, c.split, c.train, stats);
    fs::create_directories(c.output_dir);
    save_checkpoint(model, c.out("stage1.ckpt").string(), provenance(c));
    write_train_log(stats, c.out("train_log_stage1.jsonl").string(), c.seed);
    std::cout << "wrote " << c.out("stage1.ckpt").string() << " ("
              << stats.optimizer_steps << " steps, final loss "
              << stats.log.back().loss.total() << ")\n";
}

void cmd_finetune(const ExperimentConfig& c, std::string ckpt_path) {
    if (ckpt_path.empty()) ckpt_path = c.out("stage1.ckpt").string();
    auto model = load_checkpoint(ckpt_path);
    const auto manifest = load_manifest(c.train_manifest_path());
    TrainStats stats;
    if (c.train.variant == Variant::Imtfa) {
        const auto base = manifest.restricted_to_classes(c.split.base_ids);
        finetune_imtfa_stage2(model, base, c.split, c.train, stats);
    } else if (c.train.variant == Variant::Mtfa ||
               c.train.variant == Variant::CaMtfa ||
               c.train.variant == Variant::CaMtfaNoFtMask) {
        const auto balanced =
            build_balanced_finetune_set(manifest, c.split, c.k_list[0], c.seed);
        finetune_mtfa(model, balanced, c.train, stats);
    } else {
        fail("finetune: one-stage variants have no fine-tuning stage");
    }
    save_checkpoint(model, c.out("stage2.ckpt").string(), provenance(c));
    write_train_log(stats, c.out("train_log_stage2.jsonl").string(), c.seed);
    std::cout << "wrote " << c.out("stage2.ckpt").string() << " ("
              << stats.optimizer_steps << " steps)\n";
}

// Imprints the config's novel classes; asserts no parameter updates.
void cmd_imprint(const ExperimentConfig& c, std::string ckpt_path,
                 const std::string& registry_in) {
    if (ckpt_path.empty()) ckpt_path = c.out("stage2.ckpt").string();
    auto model = load_checkpoint(ckpt_path);
    ClassRegistry reg =
        registry_in.empty()
            ? model.registry
            : load_registry(registry_in, model.spec.embedding_dim);
    const auto shots_data = load_manifest(c.train_manifest_path());
    const int k = c.k_list[0];

    const auto before = snapshot_params(model);
    const auto t0 = std::chrono::steady_clock::now();
    const auto shot_sets =
        sample_shots(shots_data, c.split.novel_ids, k, c.seed);
    imprint_from_shots(model, reg, shot_sets, shots_data);
    const auto t1 = std::chrono::steady_clock::now();
    // incremental contract: imprinting performs no gradient updates
    size_t i = 0;
    for (Param* p : model.all_params()) {
        check(p->v == before[i].second,
              "imprint: parameter " + p->name + " changed during imprinting");
        check(p->g.isZero(0.f), "imprint: gradient buffer touched for " + p->name);
        ++i;
    }
    const auto out_path = c.out("registry_k" + std::to_string(k) + ".bin");
    save_registry(reg, out_path.string());
    const double ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    std::cout << "wrote " << out_path.string() << " ("
              << c.split.novel_ids.size() << " classes imprinted in " << ms
              << " ms)\n";
}

void cmd_eval(const ExperimentConfig& c, std::string ckpt_path,
              const std::string& registry_in) {
    if (ckpt_path.empty()) ckpt_path = c.out("stage2.ckpt").string();
    const auto model = load_checkpoint(ckpt_path);
    const auto shots_data = load_manifest(c.train_manifest_path());
    const auto test_data = load_manifest(c.test_manifest_path());

    if (!registry_in.empty()) {
        // single non-episodic evaluation against a fixed registry
        const ClassRegistry reg =
            load_registry(registry_in, model.spec.embedding_dim);
        const auto res = evaluate_dataset(model, reg, test_data, c.split,
                                          episode_spec_from_config(c, 1));
        EvalReport rep;
        rep.num_repeats = 1;
        rep.per_seed.push_back(res);
        nlohmann::json j = report_to_json(rep);
        j["provenance"] = provenance(c);
        std::ofstream(c.out("report_registry.json").string()) << j.dump(2) << "\n";
        std::cout << format_report(rep);
        return;
    }

    for (int k : c.k_list) {
        EpisodeRunConfig rc;
        rc.spec = episode_spec_from_config(c, k);
        rc.num_repeats = c.num_repeats;
        rc.train = c.train;
        rc.adapt = (c.train.variant == Variant::Mtfa ||
                    c.train.variant == Variant::CaMtfa ||
                    c.train.variant == Variant::CaMtfaNoFtMask)
                       ? EpisodeAdapt::Finetune
                       : EpisodeAdapt::Imprint;
        const EvalReport rep =
            run_episodes(model, shots_data, test_data, c.split, rc);
        nlohmann::json j = report_to_json(rep);
        j["provenance"] = provenance(c);
        j["provenance"]["k"] = k;
        const std::string stem = "report_k" + std::to_string(k);
        std::ofstream(c.out(stem + ".json").string()) << j.dump(2) << "\n";
        std::ofstream(c.out(stem + ".txt").string()) << format_report(rep);
        std::cout << "K=" << k << "\n" << format_report(rep);
    }
}

// Comparison table across report files, with alpha- and K-sweep
// summaries when provenance carries those fields.
void cmd_report(const std::vector<std::string>& files) {
    check(!files.empty(), "report: no report files given");
    std::printf("%-32s %-18s %5s %5s  %-14s %-14s\n", "report", "variant", "alpha",
                "K", "novel seg AP50", "base seg AP50");
    struct Row {
        std::string name, variant;
        double alpha = 0, novel = 0, base = 0;
        int k = -1;
    };
    std::vector<Row> rows;
    for (const auto& f : files) {
        std::ifstream in(f);
        check(in.good(), "report: cannot open " + f);
        nlohmann::json j;
        in >> j;
        Row r;
        r.name = fs::path(f).filename().string();
        r.novel = j.at("novel").at("seg_ap50").at("mean").get<double>();
        r.base = j.at("base").at("seg_ap50").at("mean").get<double>();
        if (j.contains("provenance")) {
            const auto& p = j.at("provenance");
            if (p.contains("variant")) r.variant = p.at("variant");
            if (p.contains("alpha")) r.alpha = p.at("alpha").get<double>();
            if (p.contains("k")) r.k = p.at("k").get<int>();
        }
        std::printf("%-32s %-18s %5.1f %5d  %-14.3f %-14.3f\n", r.name.c_str(),
                    r.variant.c_str(), r.alpha, r.k, r.novel, r.base);
        rows.push_back(std::move(r));
    }
    std::map<double, std::vector<const Row*>> by_alpha;
    std::map<int, std::vector<const Row*>> by_k;
    for (const auto& r : rows) {
        by_alpha[r.alpha].push_back(&r);
        if (r.k >= 0) by_k[r.k].push_back(&r);
    }
    if (by_alpha.size() > 1) {
        std::printf("\nalpha sweep (mean novel seg AP50):\n");
        for (const auto& [a, rs] : by_alpha) {
            double m = 0;
            for (const auto* r : rs) m += r->novel;
            std::printf("  alpha %5.1f: %.3f\n", a, m / double(rs.size()));
        }
    }
    if (by_k.size() > 1) {
        std::printf("\nK sweep (mean novel seg AP50):\n");
        for (const auto& [k, rs] : by_k) {
            double m = 0;
            for (const auto* r : rs) m += r->novel;
            std::printf("  K=%d: %.3f\n", k, m / double(rs.size()));
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"incremental few-shot instance segmentation toolkit"};
    app.require_subcommand(1);
    Overrides o;
    std::string ckpt, registry;
    std::vector<std::string> report_files;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "experiment config (JSON)");
        sub->add_option("--seed", o.seed, "global seed override");
        sub->add_option("--variant", o.variant, "training variant override");
        sub->add_option("--k", o.k, "shots per novel class");
        sub->add_option("--alpha", o.alpha, "cosine scale override");
        sub->add_option("--repeats", o.repeats, "evaluation repeats override");
        sub->add_flag("--gtoe", o.gtoe, "ground-truth-only evaluation");
        sub->add_flag("--oracle-proposals", o.oracle_proposals,
                      "use jittered GT boxes as proposals");
        sub->add_option("--out", o.out_dir, "output directory override");
    };

    auto* gen = app.add_subcommand("generate", "write the shapes dataset");
    auto* train = app.add_subcommand("train", "stage-1 / one-stage training");
    auto* ft = app.add_subcommand("finetune", "stage-2 fine-tuning");
    auto* imp = app.add_subcommand("imprint", "imprint novel classes");
    auto* ev = app.add_subcommand("eval", "episodic evaluation");
    auto* rep = app.add_subcommand("report", "summarize report files");
    for (auto* s : {gen, train, ft, imp, ev}) add_common(s);
    for (auto* s : {ft, imp, ev})
        s->add_option("--checkpoint", ckpt, "model checkpoint path");
    for (auto* s : {imp, ev})
        s->add_option("--registry", registry, "class registry path");
    rep->add_option("files", report_files, "report JSON files");

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) cmd_generate(resolve(o));
        if (train->parsed()) cmd_train(resolve(o));
        if (ft->parsed()) cmd_finetune(resolve(o), ckpt);
        if (imp->parsed()) cmd_imprint(resolve(o), ckpt, registry);
        if (ev->parsed()) cmd_eval(resolve(o), ckpt, registry);
        if (rep->parsed()) cmd_report(report_files);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
