#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "imtfa/dataset.hpp"
#include "imtfa/image.hpp"
#include "imtfa/mask.hpp"
#include "imtfa/rng.hpp"

namespace imtfa {

// Procedural shape vocabulary. Each class id in a split is assigned one
// kind, in the order base ids then novel ids.
enum class ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    Star,
    HBars,
    VBars,
    LShape,
};

inline const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> names = {
        "circle", "square", "triangle", "cross",  "ring",
        "diamond", "star",   "hbars",    "vbars", "lshape"};
    return names;
}

namespace detail {

// Membership test at pixel center (x,y) for a shape centered at
// (cx,cy) with radius r.
inline bool inside_shape(ShapeKind kind, float x, float y, float cx, float cy,
                         float r) {
    const float dx = x - cx, dy = y - cy;
    const float ax = std::abs(dx), ay = std::abs(dy);
    switch (kind) {
        case ShapeKind::Circle:
            return dx * dx + dy * dy <= r * r;
        case ShapeKind::Square:
            return ax <= 0.82f * r && ay <= 0.82f * r;
        case ShapeKind::Triangle: {
            // upward triangle: apex at (cx, cy-r), base at cy + 0.75r
            if (dy < -r || dy > 0.75f * r) return false;
            const float t = (dy + r) / (1.75f * r);  // 0 at apex, 1 at base
            return ax <= t * 0.95f * r;
        }
        case ShapeKind::Cross:
            return (ax <= 0.32f * r && ay <= r) || (ay <= 0.32f * r && ax <= r);
        case ShapeKind::Ring: {
            const float d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.55f * 0.55f * r * r;
        }
        case ShapeKind::Diamond:
            return ax + ay <= r;
        case ShapeKind::Star:
            // astroid, a concave four-pointed star
            return std::sqrt(ax / r) + std::sqrt(ay / r) <= 1.f;
        case ShapeKind::HBars: {
            if (ax > 0.9f * r || ay > r) return false;
            const int band = int(std::floor((dy + r) / (0.5f * r)));
            return band % 2 == 0;
        }
        case ShapeKind::VBars: {
            if (ay > 0.9f * r || ax > r) return false;
            const int band = int(std::floor((dx + r) / (0.5f * r)));
            return band % 2 == 0;
        }
        case ShapeKind::LShape:
            if (ax > 0.9f * r || ay > 0.9f * r) return false;
            return dx <= -0.3f * r || dy >= 0.3f * r;
    }
    return false;
}

}  // namespace detail

struct GeneratedDataset {
    DatasetManifest manifest;
    std::vector<Image> images;  // aligned with manifest.images
};

struct GeneratorParams {
    int num_images = 100;
    int image_size = 128;
    int seed = 0;
    int min_instances = 1;
    int max_instances = 4;
    float min_radius = 10.f;
    float max_radius = 22.f;
    // fraction of images restricted to base classes only, so a base-only
    // training subset retains enough images
    float base_only_fraction = 0.7f;
};

inline GeneratedDataset generate_dataset(const GeneratorParams& params,
                                         const ClassSplit& split) {
    const auto all_ids = split.all_ids();
    check(all_ids.size() >= 6, "generate_dataset: need at least 6 classes");
    check(all_ids.size() <= shape_names().size(),
          "generate_dataset: class count " + std::to_string(all_ids.size()) +
              " exceeds shape vocabulary of " +
              std::to_string(shape_names().size()));
    check(params.image_size >= 64, "generate_dataset: image_size must be >= 64");

    GeneratedDataset out;
    for (size_t i = 0; i < all_ids.size(); ++i)
        out.manifest.class_table[all_ids[i]] = shape_names()[i];

    Rng rng(uint64_t(uint32_t(params.seed)));
    const int sz = params.image_size;
    for (int img_idx = 0; img_idx < params.num_images; ++img_idx) {
        Image img(sz, sz);
        for (int r = 0; r < sz; ++r)
            for (int c = 0; c < sz; ++c)
                img.set(r, c, std::clamp(0.08f + 0.03f * rng.normal(), 0.f, 0.35f));

        const bool base_only =
            split.novel_ids.empty() || rng.uniform() < params.base_only_fraction;
        const std::vector<int>& pool = base_only ? split.base_ids : all_ids;
        const int want = params.min_instances +
                         rng.uniform_int(params.max_instances -
                                         params.min_instances + 1);
        const int n_inst = std::min<int>(want, int(pool.size()));

        std::vector<int> chosen;
        if (!base_only) {
            // mixed images always carry at least one novel instance, so
            // novel classes have enough shots at modest dataset sizes
            chosen.push_back(
                split.novel_ids[size_t(rng.uniform_int(int(split.novel_ids.size())))]);
        }
        while (int(chosen.size()) < n_inst) {
            const int cid = pool[size_t(rng.uniform_int(int(pool.size())))];
            if (std::find(chosen.begin(), chosen.end(), cid) == chosen.end())
                chosen.push_back(cid);
        }
        std::vector<Box> placed;
        for (int cid : chosen) {
            size_t kind_idx = 0;
            for (size_t i = 0; i < all_ids.size(); ++i)
                if (all_ids[i] == cid) kind_idx = i;
            const ShapeKind kind = ShapeKind(kind_idx);

            // rejection placement, bounded attempts
            for (int attempt = 0; attempt < 30; ++attempt) {
                const float r = rng.uniform(params.min_radius, params.max_radius);
                const float cx = rng.uniform(r + 2.f, sz - r - 2.f);
                const float cy = rng.uniform(r + 2.f, sz - r - 2.f);
                const Box rough{cx - r, cy - r, cx + r, cy + r};
                bool clash = false;
                for (const auto& p : placed)
                    if (box_iou(rough, p) > 0.15f) clash = true;
                if (clash) continue;

                BinaryMask mask(sz, sz);
                const float fg = rng.uniform(0.5f, 1.f);
                for (int rr = std::max(0, int(cy - r - 1));
                     rr <= std::min(sz - 1, int(cy + r + 1)); ++rr)
                    for (int cc = std::max(0, int(cx - r - 1));
                         cc <= std::min(sz - 1, int(cx + r + 1)); ++cc)
                        if (detail::inside_shape(kind, cc + 0.5f, rr + 0.5f, cx,
                                                 cy, r)) {
                            mask.set(rr, cc, 1);
                            img.set(rr, cc, fg);
                        }
                if (mask.empty_mask()) continue;

                AnnotationEntry ann;
                ann.image_id = img_idx;
                ann.ann.class_id = cid;
                ann.ann.box = mask_to_box(mask);
                ann.ann.mask = std::move(mask);
                out.manifest.annotations.push_back(std::move(ann));
                placed.push_back(rough);
                break;
            }
        }

        ImageEntry entry;
        entry.id = img_idx;
        entry.height = sz;
        entry.width = sz;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "images/img_%05d.pgm", img_idx);
        entry.file = buf;
        out.manifest.images.push_back(entry);
        out.images.push_back(std::move(img));
    }
    return out;
}

// Writes images + manifest.json under `dir` and returns the reloadable
// manifest path.
inline std::string save_dataset(const GeneratedDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    for (size_t i = 0; i < ds.images.size(); ++i)
        save_pgm(ds.images[i], (fs::path(dir) / ds.manifest.images[i].file).string());
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    save_manifest(ds.manifest, manifest_path);
    return manifest_path;
}

}  // namespace imtfa
