#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <set>

#include "imtfa/shapes.hpp"

using namespace imtfa;

static ClassSplit toy_split() {
    return ClassSplit{{1, 2, 3, 4, 5, 6}, {7, 8, 9}};
}

static GeneratorParams toy_params(int n = 10, int seed = 7) {
    GeneratorParams p;
    p.num_images = n;
    p.seed = seed;
    p.image_size = 128;
    return p;
}

TEST_CASE("generate_dataset structural properties") {
    const auto ds = generate_dataset(toy_params(), toy_split());
    CHECK(ds.manifest.images.size() == 10);
    CHECK(ds.images.size() == 10);
    CHECK(ds.manifest.annotations.size() >= 10);
    for (const auto& a : ds.manifest.annotations) {
        REQUIRE(a.ann.mask.has_value());
        CHECK_FALSE(a.ann.mask->empty_mask());
        // recorded box is the tight box of the mask
        const Box tight = mask_to_box(*a.ann.mask);
        CHECK(std::abs(tight.x1 - a.ann.box.x1) <= 1.f);
        CHECK(std::abs(tight.y1 - a.ann.box.y1) <= 1.f);
        CHECK(std::abs(tight.x2 - a.ann.box.x2) <= 1.f);
        CHECK(std::abs(tight.y2 - a.ann.box.y2) <= 1.f);
    }
    // 1..6 instances per image, distinct classes within an image
    for (const auto& im : ds.manifest.images) {
        const auto anns = ds.manifest.annotations_of(im.id);
        CHECK(anns.size() >= 1);
        CHECK(anns.size() <= 6);
        std::set<int> ids;
        for (const auto* a : anns) ids.insert(a->ann.class_id);
        CHECK(ids.size() == anns.size());
    }
}

TEST_CASE("generate_dataset is deterministic") {
    const auto a = generate_dataset(toy_params(), toy_split());
    const auto b = generate_dataset(toy_params(), toy_split());
    REQUIRE(a.manifest.annotations.size() == b.manifest.annotations.size());
    for (size_t i = 0; i < a.manifest.annotations.size(); ++i) {
        CHECK(a.manifest.annotations[i].ann.box == b.manifest.annotations[i].ann.box);
        CHECK(*a.manifest.annotations[i].ann.mask == *b.manifest.annotations[i].ann.mask);
    }
    for (size_t i = 0; i < a.images.size(); ++i)
        CHECK(a.images[i].data == b.images[i].data);
}

TEST_CASE("generate_dataset rejects oversized class vocabularies") {
    ClassSplit split;
    for (int i = 1; i <= 9; ++i) split.base_ids.push_back(i);
    for (int i = 10; i <= 12; ++i) split.novel_ids.push_back(i);
    CHECK_THROWS(generate_dataset(toy_params(), split));
}

TEST_CASE("manifest save/load round-trip") {
    const auto ds = generate_dataset(toy_params(), toy_split());
    const auto dir = std::filesystem::temp_directory_path() / "imtfa_test_ds";
    std::filesystem::remove_all(dir);
    const std::string path = save_dataset(ds, dir.string());
    const DatasetManifest loaded = load_manifest(path);
    CHECK(loaded.class_table == ds.manifest.class_table);
    REQUIRE(loaded.images.size() == ds.manifest.images.size());
    REQUIRE(loaded.annotations.size() == ds.manifest.annotations.size());
    for (size_t i = 0; i < loaded.annotations.size(); ++i) {
        CHECK(loaded.annotations[i].ann.box == ds.manifest.annotations[i].ann.box);
        CHECK(*loaded.annotations[i].ann.mask == *ds.manifest.annotations[i].ann.mask);
    }
    // images reload losslessly through 8-bit PGM
    const Image img = loaded.load_image(loaded.images[0]);
    CHECK(img.height == 128);
    CHECK(img.width == 128);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_manifest reports dangling references") {
    const auto dir = std::filesystem::temp_directory_path() / "imtfa_test_bad";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "manifest.json").string();
    {
        std::ofstream out(path);
        out << R"({"schema_version":1,
                   "classes":[{"id":1,"name":"circle"}],
                   "images":[{"id":0,"file":"x.pgm","height":8,"width":8}],
                   "annotations":[{"image_id":99,"class_id":1,
                                   "bbox":[0,0,2,2]}]})";
    }
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("99"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("hand-written minimal manifest with RLE mask loads") {
    const auto dir = std::filesystem::temp_directory_path() / "imtfa_test_min";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "manifest.json").string();
    {
        // 3x3 mask, column-major counts {0,2,1,2,4}: pixels (0,0),(1,0),(0,1),(1,1)
        std::ofstream out(path);
        out << R"({"schema_version":1, "unknown_extra_field": 42,
                   "classes":[{"id":1,"name":"circle"}],
                   "images":[{"id":0,"file":"x.pgm","height":3,"width":3}],
                   "annotations":[{"image_id":0,"class_id":1,"bbox":[0,0,2,2],
                                   "rle":{"height":3,"width":3,"counts":[0,2,1,2,4]}}]})";
    }
    const DatasetManifest m = load_manifest(path);
    REQUIRE(m.annotations.size() == 1);
    const auto& mask = *m.annotations[0].ann.mask;
    CHECK(mask.count() == 4);
    CHECK(mask.at(0, 0) == 1);
    CHECK(mask.at(1, 0) == 1);
    CHECK(mask.at(0, 1) == 1);
    CHECK(mask.at(1, 1) == 1);
    CHECK(mask.at(2, 2) == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sample_shots") {
    const auto ds = generate_dataset(toy_params(40, 3), toy_split());
    SECTION("deterministic given seed") {
        const auto a = sample_shots(ds.manifest, {7, 8}, 3, 11);
        const auto b = sample_shots(ds.manifest, {7, 8}, 3, 11);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].shots.size() == 3);
            for (size_t j = 0; j < a[i].shots.size(); ++j)
                CHECK(a[i].shots[j].ann_index == b[i].shots[j].ann_index);
        }
    }
    SECTION("all shots carry the declared class and are distinct") {
        const auto sets = sample_shots(ds.manifest, {1, 2, 7}, 2, 5);
        for (const auto& set : sets) {
            std::set<int> seen;
            for (const auto& s : set.shots) {
                CHECK(s.ann.class_id == set.class_id);
                CHECK(seen.insert(s.ann_index).second);
            }
        }
    }
    SECTION("insufficient instances errors with class and count") {
        CHECK_THROWS_WITH(sample_shots(ds.manifest, {7}, 10000, 0),
                          Catch::Matchers::ContainsSubstring("7"));
    }
    SECTION("coverage: every instance of a class eventually selected") {
        int n_candidates = 0;
        for (const auto& a : ds.manifest.annotations)
            if (a.ann.class_id == 1) ++n_candidates;
        REQUIRE(n_candidates >= 5);
        std::set<int> seen;
        for (int seed = 0; seed < 300; ++seed) {
            const auto sets = sample_shots(ds.manifest, {1}, 2, seed);
            for (const auto& s : sets[0].shots) seen.insert(s.ann_index);
        }
        CHECK(int(seen.size()) == n_candidates);
    }
}

TEST_CASE("build_balanced_finetune_set") {
    const auto ds = generate_dataset(toy_params(60, 21), toy_split());
    const auto split = toy_split();
    const auto balanced = build_balanced_finetune_set(ds.manifest, split, 2, 9);
    // exactly K non-ignored instances per class
    std::map<int, int> hist;
    for (const auto& a : balanced.annotations)
        if (!a.ann.ignore) hist[a.ann.class_id]++;
    CHECK(hist.size() == 9);
    for (const auto& [cid, count] : hist) CHECK(count == 2);
    // every image in the set carries at least one selected instance
    for (const auto& im : balanced.images) {
        bool has_selected = false;
        for (const auto* a : balanced.annotations_of(im.id))
            if (!a->ann.ignore) has_selected = true;
        CHECK(has_selected);
    }
}
