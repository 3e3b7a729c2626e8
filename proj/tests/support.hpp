#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "disagg/scene.hpp"

namespace testing {

inline disagg::RegionSet region_set(int h, int w, const std::vector<int>& ids) {
    disagg::RegionSet r;
    r.mask = disagg::Grid<std::int32_t>(h, w);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        r.mask[i] = ids[i];
        r.region_count = std::max(r.region_count, ids[i]);
    }
    return r;
}

/// Random mask where every region index 1..n appears at least once.
inline disagg::RegionSet random_regions(std::mt19937_64& rng, int h, int w, int n, double background = 0.2) {
    std::uniform_int_distribution<int> pick(1, n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> ids(static_cast<std::size_t>(h) * w);
    for (auto& k : ids) k = u(rng) < background ? 0 : pick(rng);
    std::vector<std::size_t> pos(ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    std::shuffle(pos.begin(), pos.end(), rng);
    for (int k = 1; k <= n; ++k) ids[pos[static_cast<std::size_t>(k - 1)]] = k;
    return region_set(h, w, ids);
}

inline disagg::Map random_map(std::mt19937_64& rng, int h, int w, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    disagg::Map m(h, w);
    for (auto& v : m.data) v = u(rng);
    return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("disagg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::FILE* f = std::fopen(p.string().c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
    std::fclose(f);
    return out;
}

}  // namespace testing
