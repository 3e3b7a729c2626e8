#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "disagg/error.hpp"
#include "disagg/scene.hpp"
#include "support.hpp"

using namespace disagg;

namespace {

SceneConfig small_config() {
    SceneConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.parcel_rows = 2;
    cfg.parcel_cols = 2;
    return cfg;
}

// Per-region totals by a plain scan, independent of the generator's accumulation.
std::vector<double> oracle_sums(const Sample& s) {
    std::vector<double> sums(static_cast<std::size_t>(s.regions.region_count), 0.0);
    for (int y = 0; y < s.regions.mask.height; ++y) {
        for (int x = 0; x < s.regions.mask.width; ++x) {
            const int k = s.regions.mask(y, x);
            if (k > 0) sums[static_cast<std::size_t>(k - 1)] += (*s.oracle)(y, x);
        }
    }
    return sums;
}

Sample two_region_sample(double a, double b, int h = 2, int w = 2, std::vector<int> ids = {1, 1, 2, 2}) {
    Sample s;
    s.id = "pair";
    s.chip = Chip(h, w, 3, 0.5);
    s.regions = testing::region_set(h, w, ids);
    s.labels = {a, b};
    return s;
}

}  // namespace

TEST_CASE("constant field gives equal parcel labels") {
    SceneConfig cfg = small_config();
    cfg.building_prob = 0.0;
    cfg.land_value_min = cfg.land_value_max = 1.0;
    cfg.noise_sigma = 0.0;
    const Sample s = generate_scene(cfg);
    for (double v : s.oracle->data) CHECK(v == 1.0);
    REQUIRE(s.labels.size() == 4);
    for (double y : s.labels) CHECK(y == 64.0);
}

TEST_CASE("building replaces land inside its rectangle") {
    SceneConfig cfg = small_config();
    cfg.building_prob = 1.0;
    cfg.land_value_min = cfg.land_value_max = 1.0;
    cfg.building_value_min = cfg.building_value_max = 10.0;
    cfg.building_size_min = cfg.building_size_max = 2;
    const Sample s = generate_scene(cfg);
    const auto sums = oracle_sums(s);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(sums[i] == 100.0);
        CHECK(s.labels[i] == 100.0);
    }
}

TEST_CASE("generation is deterministic and seed dependent") {
    const SceneConfig cfg;
    CHECK(generate_scene(cfg, "a") == generate_scene(cfg, "a"));
    SceneConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK_FALSE(generate_scene(other, "a") == generate_scene(cfg, "a"));
    CHECK(generate_dataset(cfg, 3) == generate_dataset(cfg, 3));
}

TEST_CASE("labels equal oracle sums for generated scenes") {
    SceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        cfg.seed = seed;
        const Sample s = generate_scene(cfg);
        validate_sample(s);
        const auto sums = oracle_sums(s);
        for (std::size_t i = 0; i < sums.size(); ++i) CHECK(testing::rel_err(sums[i], s.labels[i]) <= 1e-6);
        for (double v : s.chip.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("integer_values produces count labels") {
    SceneConfig cfg;
    cfg.integer_values = true;
    const Sample s = generate_scene(cfg);
    for (double y : s.labels) CHECK(y == std::floor(y));
}

TEST_CASE("invalid scene config names the field") {
    SceneConfig cfg;
    cfg.building_prob = 1.5;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("building_prob"), ConfigError);
    cfg = SceneConfig{};
    cfg.parcel_rows = 3;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("parcel_rows"), ConfigError);
    CHECK_THROWS_WITH_AS(scene_config_from_json(nlohmann::json{{"bogus", 1}}), doctest::Contains("bogus"), ConfigError);
}

TEST_CASE("scene config json round trip") {
    SceneConfig cfg;
    cfg.height = 32;
    cfg.parcel_cols = 2;
    cfg.seed = 9;
    const SceneConfig back = scene_config_from_json(scene_config_to_json(cfg));
    CHECK(scene_config_to_json(back) == scene_config_to_json(cfg));
}

TEST_CASE("zero-valued regions are filtered and the mask reindexed") {
    const Sample s = two_region_sample(0.0, 100.0);
    const auto f = filter_sample(s, FilterRules{});
    REQUIRE(f.has_value());
    CHECK(f->labels == std::vector<double>{100.0});
    CHECK(f->regions.region_count == 1);
    CHECK(f->regions.mask.data == std::vector<std::int32_t>{0, 0, 1, 1});
}

TEST_CASE("density filter drops dense regions") {
    std::vector<int> ids(20, 1);
    for (int i = 10; i < 20; ++i) ids[static_cast<std::size_t>(i)] = 2;
    Sample s = two_region_sample(20000.0, 5000.0, 4, 5, ids);
    FilterRules rules;
    rules.max_density = 1000.0;
    const auto f = filter_sample(s, rules);
    REQUIRE(f.has_value());
    CHECK(f->labels == std::vector<double>{5000.0});
}

TEST_CASE("samples without surviving regions are dropped") {
    std::vector<Sample> data{two_region_sample(0.0, 0.0), two_region_sample(1.0, 2.0)};
    data[1].id = "other";
    const auto f = filter_dataset(data, FilterRules{});
    REQUIRE(f.size() == 1);
    CHECK(f[0].id == "other");
}

TEST_CASE("filter is idempotent") {
    SceneConfig cfg;
    cfg.land_value_min = 0.0;
    cfg.land_value_max = 3.0;
    cfg.building_prob = 0.3;
    cfg.integer_values = true;
    FilterRules rules;
    rules.max_density = 60.0;
    const auto data = generate_dataset(cfg, 30);
    const auto once = filter_dataset(data, rules);
    CHECK(filter_dataset(once, rules) == once);
}

TEST_CASE("split sizes, partition and determinism") {
    const auto data = generate_dataset(small_config(), 10);
    const auto split = split_dataset(data, 0.1, 0.1, 7);
    CHECK(split.train.size() == 8);
    CHECK(split.validation.size() == 1);
    CHECK(split.test.size() == 1);
    std::set<std::string> all;
    for (const auto* part : {&split.train, &split.validation, &split.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 10);
    for (const auto& s : data) CHECK(all.contains(s.id));

    const auto again = split_dataset(data, 0.1, 0.1, 7);
    CHECK(again.train == split.train);
    CHECK(again.validation == split.validation);
    CHECK(again.test == split.test);

    const auto all_train = split_dataset(data, 0.0, 0.0, 7);
    CHECK(all_train.train.size() == 10);
    CHECK(all_train.validation.empty());
    CHECK(all_train.test.empty());
    CHECK_THROWS_AS(split_dataset(data, 0.6, 0.5, 7), ConfigError);
}

TEST_CASE("merging two adjacent regions sums their labels") {
    const Sample s = two_region_sample(100000.0, 200000.0);
    const Sample m = merge_regions(s, 1, 1e9);
    CHECK(m.regions.region_count == 1);
    CHECK(m.labels == std::vector<double>{300000.0});
}

TEST_CASE("merge respects the density cap") {
    std::vector<int> ids(10, 1);
    for (int i = 5; i < 10; ++i) ids[static_cast<std::size_t>(i)] = 2;
    const Sample s = two_region_sample(10000.0, 10000.0, 2, 5, ids);
    CHECK(merge_regions(s, 1, 1000.0) == s);
}

TEST_CASE("merge of a single region is the identity") {
    Sample s = two_region_sample(5.0, 0.0);
    s.regions = testing::region_set(2, 2, {1, 1, 1, 1});
    s.labels = {5.0};
    CHECK(merge_regions(s, 3, 1.0) == s);
}

TEST_CASE("merge preserves total value and coverage") {
    SceneConfig cfg;
    cfg.integer_values = true;
    cfg.parcel_rows = 4;
    cfg.parcel_cols = 4;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        cfg.seed = seed;
        const Sample s = generate_scene(cfg);
        const Sample m = merge_regions(s, seed * 31 + 1, 1000.0);
        validate_sample(m);
        CHECK(m.regions.region_count < s.regions.region_count);
        CHECK(std::accumulate(m.labels.begin(), m.labels.end(), 0.0) ==
              std::accumulate(s.labels.begin(), s.labels.end(), 0.0));
        for (std::size_t p = 0; p < s.regions.mask.size(); ++p) {
            CHECK((s.regions.mask[p] > 0) == (m.regions.mask[p] > 0));
        }
    }
}

TEST_CASE("horizontal flip reverses columns and keeps labels") {
    const Sample s = generate_scene(small_config());
    const Sample f = flip(s, true, false);
    CHECK(f.labels == s.labels);
    const int w = s.chip.width;
    for (int y = 0; y < s.chip.height; ++y) {
        for (int x = 0; x < w; ++x) {
            CHECK(f.regions.mask(y, x) == s.regions.mask(y, w - 1 - x));
            CHECK((*f.oracle)(y, x) == (*s.oracle)(y, w - 1 - x));
            for (int c = 0; c < 3; ++c) CHECK(f.chip.at(c, y, x) == s.chip.at(c, y, w - 1 - x));
        }
    }
    CHECK(flip(f, true, false) == s);
    CHECK(flip(flip(s, false, true), false, true) == s);
}

TEST_CASE("flip_augment keeps region labels and sizes") {
    const Sample s = generate_scene(small_config());
    bool saw_identity = false;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        const Sample f = flip_augment(s, seed);
        CHECK(f.labels == s.labels);
        CHECK(region_areas(f.regions) == region_areas(s.regions));
        std::mt19937_64 rng(seed);
        std::bernoulli_distribution coin(0.5);
        const bool h = coin(rng);
        const bool v = coin(rng);
        if (!h && !v) {
            CHECK(f == s);
            saw_identity = true;
        }
    }
    CHECK(saw_identity);
}

TEST_CASE("dataset round trip through the manifest") {
    const auto dir = testing::temp_dir("scene_io");
    const auto data = generate_dataset(SceneConfig{}, 5);
    save_dataset(dir, data);
    const auto back = load_dataset(dir / "manifest.json");
    REQUIRE(back.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(back[i].id == data[i].id);
        CHECK(back[i].chip == data[i].chip);
        CHECK(back[i].regions == data[i].regions);
        CHECK(back[i].labels == data[i].labels);
        REQUIRE(back[i].oracle.has_value());
        CHECK(*back[i].oracle == *data[i].oracle);
    }
    const auto one_dir = testing::temp_dir("scene_io_one");
    save_dataset(one_dir, {data[0]});
    CHECK(load_dataset(one_dir / "manifest.json").size() == 1);
}

TEST_CASE("label count mismatch is a load error") {
    const auto dir = testing::temp_dir("scene_mismatch");
    std::vector<int> ids(64, 3);
    ids[0] = 1;
    ids[1] = 2;
    Sample s = two_region_sample(1.0, 2.0, 8, 8, ids);
    s.labels = {1.0, 2.0, 3.0};
    save_dataset(dir, {s});
    std::ofstream(dir / "pair_labels.csv") << "region_id,value\n1,1\n2,2\n";
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest.json"), doctest::Contains("label count mismatch"), LoadError);
}

TEST_CASE("float map round trip and missing sidecar") {
    const auto dir = testing::temp_dir("float_map");
    Map m(3, 2);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(0.25 * static_cast<double>(i) - 1.0);
    write_float_map(dir / "m.f32", m);
    CHECK(read_float_map(dir / "m.f32") == m);
    std::filesystem::remove(dir / "m.json");
    CHECK_THROWS_AS(read_float_map(dir / "m.f32"), LoadError);
}

TEST_CASE("reindexing is by first occurrence") {
    RegionSet r = testing::region_set(2, 3, {3, 3, 0, 1, 2, 2});
    std::vector<double> labels{10, 20, 30};
    reindex_regions(r, labels);
    CHECK(r.mask.data == std::vector<std::int32_t>{1, 1, 0, 2, 3, 3});
    CHECK(labels == std::vector<double>{30, 10, 20});
}
