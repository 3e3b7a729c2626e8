#include "disagg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "disagg/seed.hpp"

namespace disagg {

namespace {

constexpr int kMinChipSide = 8;

double quantize_intensity(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

}  // namespace

void SceneConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("scene config field '" + field + "': " + why);
    };
    if (height < kMinChipSide) fail("height", "must be >= 8");
    if (width < kMinChipSide) fail("width", "must be >= 8");
    if (parcel_rows < 1) fail("parcel_rows", "must be >= 1");
    if (parcel_cols < 1) fail("parcel_cols", "must be >= 1");
    if (height % parcel_rows != 0) fail("parcel_rows", "must divide height");
    if (width % parcel_cols != 0) fail("parcel_cols", "must divide width");
    if (!(building_prob >= 0.0 && building_prob <= 1.0)) fail("building_prob", "must lie in [0,1]");
    if (!(land_value_min >= 0.0)) fail("land_value_min", "must be nonnegative");
    if (!(land_value_max >= land_value_min)) fail("land_value_max", "must be >= land_value_min");
    if (!(building_value_min >= 0.0)) fail("building_value_min", "must be nonnegative");
    if (!(building_value_max >= building_value_min)) fail("building_value_max", "must be >= building_value_min");
    if (building_size_min < 1) fail("building_size_min", "must be >= 1");
    if (building_size_max < building_size_min) fail("building_size_max", "must be >= building_size_min");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma", "must be finite and >= 0");
}

std::vector<std::int64_t> region_areas(const RegionSet& regions) {
    std::vector<std::int64_t> areas(static_cast<std::size_t>(regions.region_count), 0);
    for (std::int32_t k : regions.mask.data) {
        if (k > 0 && k <= regions.region_count) ++areas[static_cast<std::size_t>(k - 1)];
    }
    return areas;
}

void validate_sample(const Sample& s) {
    const auto where = [&](const std::string& msg) { return "sample '" + s.id + "': " + msg; };
    const Chip& c = s.chip;
    if (c.height < kMinChipSide || c.width < kMinChipSide) throw ShapeError(where("chip smaller than 8x8"));
    if (c.channels < 1) throw ShapeError(where("chip has no channels"));
    if (c.data.size() != c.plane_size() * static_cast<std::size_t>(c.channels)) {
        throw ShapeError(where("chip data size does not match its dimensions"));
    }
    for (double v : c.data) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DomainError(where("chip intensity outside [0,1]"));
    }
    const auto& mask = s.regions.mask;
    if (mask.height != c.height || mask.width != c.width) throw ShapeError(where("mask shape differs from chip"));
    if (mask.data.size() != c.plane_size()) throw ShapeError(where("mask data size does not match its dimensions"));
    const int n = s.regions.region_count;
    for (std::int32_t k : mask.data) {
        if (k < 0 || k > n) throw DomainError(where("mask index outside 0..region_count"));
    }
    if (s.labels.size() != static_cast<std::size_t>(n)) throw ShapeError(where("label count mismatch"));
    const auto areas = region_areas(s.regions);
    for (int i = 0; i < n; ++i) {
        if (areas[static_cast<std::size_t>(i)] == 0) throw DomainError(where("region " + std::to_string(i + 1) + " is empty"));
    }
    for (double y : s.labels) {
        if (!std::isfinite(y) || y < 0.0) throw DomainError(where("label must be finite and nonnegative"));
    }
    if (s.oracle) {
        if (!s.oracle->same_shape(Map(mask.height, mask.width))) throw ShapeError(where("oracle shape differs from chip"));
        std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
        for (std::size_t p = 0; p < mask.size(); ++p) {
            if (mask[p] > 0) sums[static_cast<std::size_t>(mask[p] - 1)] += (*s.oracle)[p];
        }
        for (int i = 0; i < n; ++i) {
            const double y = s.labels[static_cast<std::size_t>(i)];
            if (std::abs(y - sums[static_cast<std::size_t>(i)]) > 1e-6 * std::max(1.0, y)) {
                throw DomainError(where("label of region " + std::to_string(i + 1) + " disagrees with oracle sum"));
            }
        }
    }
}

Sample generate_scene(const SceneConfig& cfg, std::string id) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto maybe_round = [&](double v) { return cfg.integer_values ? std::round(v) : v; };

    const int H = cfg.height;
    const int W = cfg.width;
    const int ph = H / cfg.parcel_rows;
    const int pw = W / cfg.parcel_cols;
    const int n = cfg.parcel_rows * cfg.parcel_cols;

    Sample s;
    s.id = std::move(id);
    s.regions.mask = Grid<std::int32_t>(H, W, 0);
    s.regions.region_count = n;
    Map oracle(H, W, 0.0);
    Grid<std::uint8_t> building(H, W, 0);
    std::vector<double> land_norm(static_cast<std::size_t>(n), 0.5);

    const double land_span = cfg.land_value_max - cfg.land_value_min;
    for (int r = 0; r < cfg.parcel_rows; ++r) {
        for (int c = 0; c < cfg.parcel_cols; ++c) {
            const int k = r * cfg.parcel_cols + c;
            const double land = maybe_round(uniform(cfg.land_value_min, cfg.land_value_max));
            if (land_span > 0.0) land_norm[static_cast<std::size_t>(k)] = std::clamp((land - cfg.land_value_min) / land_span, 0.0, 1.0);
            const int y0 = r * ph;
            const int x0 = c * pw;
            for (int y = y0; y < y0 + ph; ++y) {
                for (int x = x0; x < x0 + pw; ++x) {
                    s.regions.mask(y, x) = k + 1;
                    oracle(y, x) = static_cast<float>(land);
                }
            }
            if (unit(rng) < cfg.building_prob) {
                std::uniform_int_distribution<int> side(cfg.building_size_min, cfg.building_size_max);
                const int bh = std::min(side(rng), ph);
                const int bw = std::min(side(rng), pw);
                const int by = y0 + std::uniform_int_distribution<int>(0, ph - bh)(rng);
                const int bx = x0 + std::uniform_int_distribution<int>(0, pw - bw)(rng);
                const double value = maybe_round(uniform(cfg.building_value_min, cfg.building_value_max));
                for (int y = by; y < by + bh; ++y) {
                    for (int x = bx; x < bx + bw; ++x) {
                        oracle(y, x) = static_cast<float>(value);
                        building(y, x) = 1;
                    }
                }
            }
        }
    }

    s.labels.assign(static_cast<std::size_t>(n), 0.0);
    for (std::size_t p = 0; p < oracle.size(); ++p) {
        s.labels[static_cast<std::size_t>(s.regions.mask[p] - 1)] += oracle[p];
    }

    s.chip = Chip(H, W, 3);
    std::normal_distribution<double> noise(0.0, 1.0);
    auto noisy = [&](double v) {
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * noise(rng);
        return quantize_intensity(v);
    };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int k = s.regions.mask(y, x) - 1;
            s.chip.at(0, y, x) = noisy(building(y, x) ? 1.0 : 0.0);
            s.chip.at(1, y, x) = noisy(land_norm[static_cast<std::size_t>(k)]);
            s.chip.at(2, y, x) = noisy(0.5);
        }
    }
    s.oracle = std::move(oracle);
    return s;
}

std::vector<Sample> generate_dataset(const SceneConfig& cfg, int count) {
    if (count < 0) throw ConfigError("scene count must be nonnegative");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        SceneConfig c = cfg;
        c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(k));
        char id[32];
        std::snprintf(id, sizeof id, "scene_%04d", k);
        out.push_back(generate_scene(c, id));
    }
    return out;
}

void reindex_regions(RegionSet& regions, std::vector<double>& labels) {
    std::unordered_map<std::int32_t, std::int32_t> remap;
    std::vector<double> new_labels;
    for (auto& k : regions.mask.data) {
        if (k <= 0) {
            k = 0;
            continue;
        }
        auto [it, inserted] = remap.try_emplace(k, static_cast<std::int32_t>(remap.size() + 1));
        if (inserted) new_labels.push_back(labels.at(static_cast<std::size_t>(k - 1)));
        k = it->second;
    }
    regions.region_count = static_cast<int>(new_labels.size());
    labels = std::move(new_labels);
}

std::optional<Sample> filter_sample(const Sample& s, const FilterRules& rules) {
    const auto areas = region_areas(s.regions);
    std::vector<bool> drop(s.labels.size(), false);
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        const double y = s.labels[i];
        if (rules.drop_zero_value && y == 0.0) drop[i] = true;
        if (rules.max_density && areas[i] > 0 && y / static_cast<double>(areas[i]) > *rules.max_density) drop[i] = true;
    }
    Sample out = s;
    for (auto& k : out.regions.mask.data) {
        if (k > 0 && drop[static_cast<std::size_t>(k - 1)]) k = 0;
    }
    reindex_regions(out.regions, out.labels);
    if (out.regions.region_count == 0) return std::nullopt;
    return out;
}

std::vector<Sample> filter_dataset(const std::vector<Sample>& samples, const FilterRules& rules) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        if (auto f = filter_sample(s, rules)) out.push_back(std::move(*f));
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<Sample>& samples, double val_frac, double test_frac,
                           std::uint64_t seed) {
    if (!(val_frac >= 0.0) || !(test_frac >= 0.0) || !(val_frac + test_frac < 1.0)) {
        throw ConfigError("split fractions must satisfy 0 <= val_frac + test_frac < 1");
    }
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    const double n = static_cast<double>(ids.size());
    // Tolerance keeps e.g. 0.1 * 10 from flooring to 0 on rounding noise.
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(test_frac * n + 1e-9));

    DatasetSplit split;
    split.validation.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    split.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
    return split;
}

std::vector<Sample> select_samples(const std::vector<Sample>& samples, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, const Sample*> by_id;
    for (const auto& s : samples) by_id.emplace(s.id, &s);
    std::vector<Sample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ConfigError("unknown sample id '" + id + "'");
        out.push_back(*it->second);
    }
    return out;
}

Sample merge_regions(const Sample& s, std::uint64_t seed, double density_cap) {
    const int n = s.regions.region_count;
    if (n < 2) return s;

    const auto& mask = s.regions.mask;
    std::vector<std::set<int>> adjacent(static_cast<std::size_t>(n));
    auto link = [&](std::int32_t a, std::int32_t b) {
        if (a > 0 && b > 0 && a != b) {
            adjacent[static_cast<std::size_t>(a - 1)].insert(b - 1);
            adjacent[static_cast<std::size_t>(b - 1)].insert(a - 1);
        }
    };
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::int32_t k = mask(y, x);
            if (x + 1 < mask.width) link(k, mask(y, x + 1));
            if (y + 1 < mask.height) {
                link(k, mask(y + 1, x));
                if (x + 1 < mask.width) link(k, mask(y + 1, x + 1));
                if (x > 0) link(k, mask(y + 1, x - 1));
            }
        }
    }

    const auto areas = region_areas(s.regions);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<bool> used(static_cast<std::size_t>(n), false);
    std::vector<int> root(static_cast<std::size_t>(n));
    std::iota(root.begin(), root.end(), 0);
    bool any = false;
    for (int r : order) {
        if (used[static_cast<std::size_t>(r)]) continue;
        std::vector<int> candidates;
        for (int nb : adjacent[static_cast<std::size_t>(r)]) {
            if (used[static_cast<std::size_t>(nb)]) continue;
            const double value = s.labels[static_cast<std::size_t>(r)] + s.labels[static_cast<std::size_t>(nb)];
            const double area = static_cast<double>(areas[static_cast<std::size_t>(r)] + areas[static_cast<std::size_t>(nb)]);
            if (value / area > density_cap) continue;
            candidates.push_back(nb);
        }
        if (candidates.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        const int partner = candidates[pick(rng)];
        used[static_cast<std::size_t>(r)] = used[static_cast<std::size_t>(partner)] = true;
        root[static_cast<std::size_t>(partner)] = r;
        any = true;
    }
    if (!any) return s;

    Sample out = s;
    std::vector<double> labels(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(root[static_cast<std::size_t>(i)])] += s.labels[static_cast<std::size_t>(i)];
    for (auto& k : out.regions.mask.data) {
        if (k > 0) k = root[static_cast<std::size_t>(k - 1)] + 1;
    }
    out.labels = std::move(labels);
    reindex_regions(out.regions, out.labels);
    return out;
}

namespace {

template <typename T>
void flip_plane(T* plane, int h, int w, bool horizontal, bool vertical) {
    if (horizontal) {
        for (int y = 0; y < h; ++y) std::reverse(plane + static_cast<std::ptrdiff_t>(y) * w, plane + static_cast<std::ptrdiff_t>(y + 1) * w);
    }
    if (vertical) {
        for (int y = 0; y < h / 2; ++y) {
            std::swap_ranges(plane + static_cast<std::ptrdiff_t>(y) * w, plane + static_cast<std::ptrdiff_t>(y + 1) * w,
                             plane + static_cast<std::ptrdiff_t>(h - 1 - y) * w);
        }
    }
}

}  // namespace

Sample flip(const Sample& s, bool horizontal, bool vertical) {
    Sample out = s;
    if (!horizontal && !vertical) return out;
    const int h = out.chip.height;
    const int w = out.chip.width;
    for (int c = 0; c < out.chip.channels; ++c) {
        flip_plane(out.chip.data.data() + out.chip.plane_size() * static_cast<std::size_t>(c), h, w, horizontal, vertical);
    }
    flip_plane(out.regions.mask.data.data(), h, w, horizontal, vertical);
    if (out.oracle) flip_plane(out.oracle->data.data(), h, w, horizontal, vertical);
    return out;
}

Sample flip_augment(const Sample& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const bool horizontal = coin(rng);
    const bool vertical = coin(rng);
    return flip(s, horizontal, vertical);
}

}  // namespace disagg
