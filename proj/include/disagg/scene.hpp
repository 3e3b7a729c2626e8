#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "disagg/grid.hpp"

namespace disagg {

/// Multi-channel raster with intensities in [0,1].
/// Stored channel-planar: data[(c * height + y) * width + x].
struct Chip {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> data;
    double gsd_meters = 1.0;

    Chip() = default;
    Chip(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

    bool operator==(const Chip&) const = default;
};

/// Region index per pixel; 0 is background, 1..region_count are regions.
struct RegionSet {
    Grid<std::int32_t> mask;
    int region_count = 0;

    bool operator==(const RegionSet&) const = default;
};

struct Sample {
    std::string id;
    Chip chip;
    RegionSet regions;
    std::vector<double> labels;  // labels[i] is the value of region i+1
    std::optional<Map> oracle;

    bool operator==(const Sample&) const = default;
};

struct SceneConfig {
    int height = 64;
    int width = 64;
    int parcel_rows = 2;
    int parcel_cols = 4;
    double building_prob = 0.6;
    double land_value_min = 10.0;
    double land_value_max = 100.0;
    double building_value_min = 250.0;
    double building_value_max = 450.0;
    int building_size_min = 6;
    int building_size_max = 14;
    double noise_sigma = 0.05;
    bool integer_values = false;  // round per-pixel values, producing count labels
    std::uint64_t seed = 42;

    void validate() const;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

struct FilterRules {
    bool drop_zero_value = true;
    std::optional<double> max_density;  // currency per pixel
};

/// Throws ShapeError/DomainError when a sample breaks a type invariant.
void validate_sample(const Sample& s);

/// Number of pixels carrying each region index; result[i] is region i+1.
std::vector<std::int64_t> region_areas(const RegionSet& regions);

Sample generate_scene(const SceneConfig& cfg, std::string id = "scene");

/// Scenes for a dataset; scene k derives its seed from cfg.seed and k.
std::vector<Sample> generate_dataset(const SceneConfig& cfg, int count);

std::vector<Sample> filter_dataset(const std::vector<Sample>& samples, const FilterRules& rules);

/// Applies the filter rules to one sample; nullopt when no region survives.
std::optional<Sample> filter_sample(const Sample& s, const FilterRules& rules);

DatasetSplit split_dataset(const std::vector<Sample>& samples, double val_frac, double test_frac,
                           std::uint64_t seed);

/// Selects samples by id, preserving the order of `ids`.
std::vector<Sample> select_samples(const std::vector<Sample>& samples,
                                   const std::vector<std::string>& ids);

/// One pass of seeded random pairwise merging of 8-adjacent regions.
/// Pairs whose combined value per pixel exceeds density_cap are never merged.
Sample merge_regions(const Sample& s, std::uint64_t seed, double density_cap);

Sample flip(const Sample& s, bool horizontal, bool vertical);

/// Horizontal and vertical flips, each with probability 1/2.
Sample flip_augment(const Sample& s, std::uint64_t seed);

/// Compact reindexing by order of first occurrence in a row-major scan.
/// Labels follow their regions; background stays 0.
void reindex_regions(RegionSet& regions, std::vector<double>& labels);

/// Ranges are written as two-element arrays; unknown fields are rejected.
nlohmann::json scene_config_to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const nlohmann::json& j);

// Dataset directory I/O (manifest.json + PNG chips/masks + CSV labels + float32 oracles).

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path);
Chip load_chip_png(const std::filesystem::path& path);

/// Raw little-endian float32 map with a `{height,width}` JSON sidecar next to it.
void write_float_map(const std::filesystem::path& path, const Map& map);
Map read_float_map(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& map_path);

}  // namespace disagg
