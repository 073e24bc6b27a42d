#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imtfa/eval.hpp"
#include "imtfa/shapes.hpp"
#include "imtfa/train.hpp"

namespace imtfa {

// Resolved experiment configuration. One experiment owns one output
// directory with fixed file names so runs are diffable.
struct ExperimentConfig {
    int seed = 0;
    std::string output_dir = "out";
    ClassSplit split;

    // dataset: either generated or loaded from manifests
    bool generate = true;
    GeneratorParams gen_train;
    GeneratorParams gen_test;
    std::string train_manifest;  // used when generate == false
    std::string test_manifest;

    // model
    int embedding_dim = 128;
    int pool_size = 7;

    TrainConfig train;

    // eval
    std::vector<int> k_list = {1, 5, 10};
    int num_repeats = 10;
    bool gtoe = false;
    bool oracle_proposals = false;
    float score_threshold = 0.05f;
    int max_detections = 100;

    nlohmann::json raw;  // resolved config for provenance

    std::filesystem::path out(const std::string& name) const {
        return std::filesystem::path(output_dir) / name;
    }
    std::string train_manifest_path() const {
        return generate ? out("dataset/train/manifest.json").string()
                        : train_manifest;
    }
    std::string test_manifest_path() const {
        return generate ? out("dataset/test/manifest.json").string()
                        : test_manifest;
    }
};

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void read_generator(const nlohmann::json& j, GeneratorParams& p) {
    read_if(j, "num_images", p.num_images);
    read_if(j, "image_size", p.image_size);
    read_if(j, "seed", p.seed);
    read_if(j, "min_instances", p.min_instances);
    read_if(j, "max_instances", p.max_instances);
    read_if(j, "min_radius", p.min_radius);
    read_if(j, "max_radius", p.max_radius);
    read_if(j, "base_only_fraction", p.base_only_fraction);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    check(j.contains("schema_version") && j.at("schema_version").get<int>() == 1,
          "config: schema_version must be 1");
    ExperimentConfig c;
    c.raw = j;
    detail::read_if(j, "seed", c.seed);
    detail::read_if(j, "output_dir", c.output_dir);

    check(j.contains("dataset"), "config: missing dataset section");
    const auto& jd = j.at("dataset");
    c.split.base_ids = jd.at("base_ids").get<std::vector<int>>();
    detail::read_if(jd, "novel_ids", c.split.novel_ids);
    if (jd.contains("train_manifest")) {
        c.generate = false;
        c.train_manifest = jd.at("train_manifest").get<std::string>();
        c.test_manifest = jd.at("test_manifest").get<std::string>();
    } else {
        check(jd.contains("generator"), "config: dataset needs either "
                                        "manifests or a generator section");
        detail::read_generator(jd.at("generator"), c.gen_train);
        c.gen_test = c.gen_train;
        c.gen_test.seed = c.gen_train.seed + 1000000;
        detail::read_if(jd.at("generator"), "num_test_images",
                        c.gen_test.num_images);
    }

    if (j.contains("train")) {
        const auto& jt = j.at("train");
        if (jt.contains("variant"))
            c.train.variant =
                variant_from_string(jt.at("variant").get<std::string>());
        c.train.lr_stage2 = TrainConfig::default_stage2_lr(c.train.variant);
        detail::read_if(jt, "alpha", c.train.alpha);
        detail::read_if(jt, "batch_size", c.train.batch_size);
        detail::read_if(jt, "iterations_stage1", c.train.iterations_stage1);
        detail::read_if(jt, "lr_stage1", c.train.lr_stage1);
        detail::read_if(jt, "iterations_stage2", c.train.iterations_stage2);
        detail::read_if(jt, "lr_stage2", c.train.lr_stage2);
        detail::read_if(jt, "imtfa_freeze_mask", c.train.imtfa_freeze_mask);
        detail::read_if(jt, "learned_proposals", c.train.learned_proposals);
        detail::read_if(jt, "embedding_dim", c.embedding_dim);
        detail::read_if(jt, "pool_size", c.pool_size);
    }
    c.train.seed = c.seed;

    if (j.contains("eval")) {
        const auto& je = j.at("eval");
        detail::read_if(je, "k_list", c.k_list);
        detail::read_if(je, "num_repeats", c.num_repeats);
        detail::read_if(je, "gtoe", c.gtoe);
        detail::read_if(je, "oracle_proposals", c.oracle_proposals);
        detail::read_if(je, "score_threshold", c.score_threshold);
        detail::read_if(je, "max_detections", c.max_detections);
    }

    check(!c.k_list.empty(), "config: k_list must be non-empty");
    for (int k : c.k_list) check(k >= 1, "config: every K must be >= 1");
    check(c.train.lr_stage1 > 0.f && c.train.lr_stage2 > 0.f,
          "config: learning rates must be positive");
    check(!c.split.base_ids.empty(), "config: base_ids must be non-empty");
    if (!c.generate) {
        for (const auto& p : {c.train_manifest, c.test_manifest})
            check(std::filesystem::exists(p), "config: manifest not found: " + p);
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return parse_experiment_config(j);
}

inline ModelSpec model_spec_from_config(const ExperimentConfig& c) {
    ModelSpec spec;
    spec.embedding_dim = c.embedding_dim;
    spec.pool_size = c.pool_size;
    const bool agnostic = variant_class_agnostic(c.train.variant);
    spec.box_agnostic = agnostic;
    spec.mask_agnostic = agnostic;
    spec.linear_classifier = c.train.variant == Variant::OneStageLinear;
    spec.alpha = c.train.alpha;
    spec.fg_class_ids = c.split.base_ids;
    return spec;
}

inline EpisodeSpec episode_spec_from_config(const ExperimentConfig& c, int k) {
    EpisodeSpec spec;
    spec.test_class_ids = c.split.novel_ids;
    spec.k = k;
    spec.seed = c.seed;
    spec.gtoe = c.gtoe;
    spec.oracle_proposals = c.oracle_proposals;
    spec.score_threshold = c.score_threshold;
    spec.max_detections = c.max_detections;
    return spec;
}

inline void write_train_log(const TrainStats& stats, const std::string& path,
                            int seed) {
    std::ofstream out(path);
    check(out.good(), "write_train_log: cannot open " + path);
    for (const auto& e : stats.log) {
        nlohmann::json j = {{"iteration", e.iteration},
                            {"lr", e.lr},
                            {"seed", seed},
                            {"cls_loss", e.loss.cls_loss},
                            {"box_loss", e.loss.box_loss},
                            {"mask_loss", e.loss.mask_loss},
                            {"rpn_obj_loss", e.loss.rpn_obj_loss},
                            {"rpn_box_loss", e.loss.rpn_box_loss}};
        out << j.dump() << "\n";
    }
}

}  // namespace imtfa
