#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "imtfa/common.hpp"
#include "imtfa/image.hpp"
#include "imtfa/instance.hpp"
#include "imtfa/rng.hpp"

namespace imtfa {

struct ClassSplit {
    std::vector<int> base_ids;
    std::vector<int> novel_ids;

    std::vector<int> all_ids() const {
        std::vector<int> ids = base_ids;
        ids.insert(ids.end(), novel_ids.begin(), novel_ids.end());
        return ids;
    }
    bool is_base(int id) const {
        return std::find(base_ids.begin(), base_ids.end(), id) != base_ids.end();
    }
    bool is_novel(int id) const {
        return std::find(novel_ids.begin(), novel_ids.end(), id) != novel_ids.end();
    }
};

struct ImageEntry {
    int id = -1;
    int height = 0, width = 0;
    std::string file;  // relative to the manifest's directory
};

struct AnnotationEntry {
    int image_id = -1;
    InstanceAnnotation ann;
};

struct DatasetManifest {
    std::map<int, std::string> class_table;
    std::vector<ImageEntry> images;
    std::vector<AnnotationEntry> annotations;
    std::string root_dir;  // set on load; image files resolve against it

    const ImageEntry* find_image(int id) const {
        for (const auto& im : images)
            if (im.id == id) return &im;
        return nullptr;
    }

    std::vector<const AnnotationEntry*> annotations_of(int image_id) const {
        std::vector<const AnnotationEntry*> out;
        for (const auto& a : annotations)
            if (a.image_id == image_id) out.push_back(&a);
        return out;
    }

    Image load_image(const ImageEntry& entry) const {
        namespace fs = std::filesystem;
        return load_pgm((fs::path(root_dir) / entry.file).string());
    }

    // Keep only images whose every annotation belongs to `class_ids`.
    DatasetManifest restricted_to_classes(const std::vector<int>& class_ids) const {
        DatasetManifest out;
        out.class_table = class_table;
        out.root_dir = root_dir;
        for (const auto& im : images) {
            bool ok = true;
            for (const auto* a : annotations_of(im.id)) {
                if (std::find(class_ids.begin(), class_ids.end(), a->ann.class_id) ==
                    class_ids.end()) {
                    ok = false;
                    break;
                }
            }
            if (ok) out.images.push_back(im);
        }
        for (const auto& a : annotations) {
            for (const auto& im : out.images)
                if (im.id == a.image_id) {
                    out.annotations.push_back(a);
                    break;
                }
        }
        return out;
    }
};

namespace detail {

inline nlohmann::json mask_to_json(const BinaryMask& m) {
    const RLEMask r = rle_encode(m);
    return {{"height", r.height}, {"width", r.width}, {"counts", r.counts}};
}

inline BinaryMask mask_from_json(const nlohmann::json& j) {
    RLEMask r;
    r.height = j.at("height").get<int>();
    r.width = j.at("width").get<int>();
    r.counts = j.at("counts").get<std::vector<uint32_t>>();
    return rle_decode(r);
}

}  // namespace detail

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["classes"] = nlohmann::json::array();
    for (const auto& [id, name] : m.class_table)
        j["classes"].push_back({{"id", id}, {"name", name}});
    j["images"] = nlohmann::json::array();
    for (const auto& im : m.images)
        j["images"].push_back({{"id", im.id},
                               {"file", im.file},
                               {"height", im.height},
                               {"width", im.width}});
    j["annotations"] = nlohmann::json::array();
    for (const auto& a : m.annotations) {
        nlohmann::json ja = {{"image_id", a.image_id},
                             {"class_id", a.ann.class_id},
                             {"bbox", {a.ann.box.x1, a.ann.box.y1, a.ann.box.x2,
                                       a.ann.box.y2}},
                             {"ignore", a.ann.ignore}};
        if (a.ann.mask) ja["rle"] = detail::mask_to_json(*a.ann.mask);
        j["annotations"].push_back(ja);
    }
    std::ofstream out(path);
    check(out.good(), "save_manifest: cannot open " + path);
    out << j.dump(1) << "\n";
    check(out.good(), "save_manifest: write failed for " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "load_manifest: cannot open " + path);
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.root_dir = std::filesystem::path(path).parent_path().string();
    for (const auto& jc : j.at("classes"))
        m.class_table[jc.at("id").get<int>()] = jc.at("name").get<std::string>();
    for (const auto& ji : j.at("images")) {
        ImageEntry im;
        im.id = ji.at("id").get<int>();
        im.file = ji.at("file").get<std::string>();
        im.height = ji.at("height").get<int>();
        im.width = ji.at("width").get<int>();
        m.images.push_back(im);
    }
    for (const auto& ja : j.at("annotations")) {
        AnnotationEntry a;
        a.image_id = ja.at("image_id").get<int>();
        a.ann.class_id = ja.at("class_id").get<int>();
        const auto& bb = ja.at("bbox");
        a.ann.box = Box{bb.at(0).get<float>(), bb.at(1).get<float>(),
                        bb.at(2).get<float>(), bb.at(3).get<float>()};
        if (ja.contains("ignore")) a.ann.ignore = ja.at("ignore").get<bool>();
        if (ja.contains("rle")) a.ann.mask = detail::mask_from_json(ja.at("rle"));
        check(m.find_image(a.image_id) != nullptr,
              "load_manifest: annotation references absent image_id " +
                  std::to_string(a.image_id));
        check(m.class_table.count(a.ann.class_id) > 0,
              "load_manifest: annotation references unknown class_id " +
                  std::to_string(a.ann.class_id));
        m.annotations.push_back(a);
    }
    return m;
}

// One labeled instance of a class, identified by (image_id, index of the
// annotation within the manifest).
struct Shot {
    int image_id = -1;
    int ann_index = -1;
    InstanceAnnotation ann;
};

struct ShotSet {
    int class_id = -1;
    int seed = 0;
    std::vector<Shot> shots;
};

// Seeded per-class sampling without replacement. Per-class streams are
// decorrelated so adding a class to the request does not change the
// shots drawn for the others.
inline std::vector<ShotSet> sample_shots(const DatasetManifest& m,
                                         const std::vector<int>& class_ids,
                                         int k, int seed) {
    check(k >= 1, "sample_shots: K must be >= 1");
    std::vector<ShotSet> out;
    for (int cid : class_ids) {
        std::vector<Shot> candidates;
        for (size_t i = 0; i < m.annotations.size(); ++i) {
            const auto& a = m.annotations[i];
            if (a.ann.class_id == cid && !a.ann.ignore)
                candidates.push_back(Shot{a.image_id, int(i), a.ann});
        }
        check(int(candidates.size()) >= k,
              "sample_shots: class " + std::to_string(cid) + " has only " +
                  std::to_string(candidates.size()) + " instances, need " +
                  std::to_string(k));
        Rng rng(uint64_t(seed) * 1000003u + uint64_t(uint32_t(cid)));
        const auto idx = rng.sample_without_replacement(int(candidates.size()), k);
        ShotSet set;
        set.class_id = cid;
        set.seed = seed;
        for (int i : idx) set.shots.push_back(candidates[size_t(i)]);
        // canonical order for reproducible downstream summation
        std::sort(set.shots.begin(), set.shots.end(),
                  [](const Shot& a, const Shot& b) { return a.ann_index < b.ann_index; });
        out.push_back(std::move(set));
    }
    return out;
}

// Balanced K-shot fine-tune set over base and novel classes alike.
// Images are included iff they carry a selected instance; co-occurring
// unselected instances are kept but marked ignore.
inline DatasetManifest build_balanced_finetune_set(const DatasetManifest& m,
                                                   const ClassSplit& split,
                                                   int k, int seed) {
    const auto shot_sets = sample_shots(m, split.all_ids(), k, seed);
    std::vector<bool> selected(m.annotations.size(), false);
    for (const auto& set : shot_sets)
        for (const auto& s : set.shots) selected[size_t(s.ann_index)] = true;

    DatasetManifest out;
    out.class_table = m.class_table;
    out.root_dir = m.root_dir;
    std::vector<int> included_images;
    for (size_t i = 0; i < m.annotations.size(); ++i) {
        if (!selected[i]) continue;
        const int img = m.annotations[i].image_id;
        if (std::find(included_images.begin(), included_images.end(), img) ==
            included_images.end())
            included_images.push_back(img);
    }
    for (const auto& im : m.images)
        if (std::find(included_images.begin(), included_images.end(), im.id) !=
            included_images.end())
            out.images.push_back(im);
    for (size_t i = 0; i < m.annotations.size(); ++i) {
        const auto& a = m.annotations[i];
        if (std::find(included_images.begin(), included_images.end(),
                      a.image_id) == included_images.end())
            continue;
        AnnotationEntry copy = a;
        copy.ann.ignore = !selected[i];
        out.annotations.push_back(copy);
    }
    return out;
}

}  // namespace imtfa
