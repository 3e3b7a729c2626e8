#include "disagg/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace disagg {

RegionIncidence RegionIncidence::from_regions(const RegionSet& regions) {
    const int n = regions.region_count;
    const auto& mask = regions.mask;
    RegionIncidence inc;
    inc.n_pixels_ = static_cast<std::int64_t>(mask.size());
    std::vector<std::size_t> counts(static_cast<std::size_t>(n), 0);
    for (std::int32_t k : mask.data) {
        if (k < 0 || k > n) throw ShapeError("mask index outside 0..region_count");
        if (k > 0) ++counts[static_cast<std::size_t>(k - 1)];
    }
    if (n == 0) throw DomainError("cannot build an incidence without regions");
    inc.row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(i)] == 0) {
            throw DomainError("region " + std::to_string(i + 1) + " has no pixels");
        }
        inc.row_ptr_[static_cast<std::size_t>(i) + 1] = inc.row_ptr_[static_cast<std::size_t>(i)] + counts[static_cast<std::size_t>(i)];
    }
    inc.pixels_.resize(inc.row_ptr_.back());
    inc.weights_.assign(inc.row_ptr_.back(), 1.0);
    std::vector<std::size_t> cursor(inc.row_ptr_.begin(), inc.row_ptr_.end() - 1);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        const std::int32_t k = mask[p];
        if (k > 0) inc.pixels_[cursor[static_cast<std::size_t>(k - 1)]++] = static_cast<std::int64_t>(p);
    }
    return inc;
}

RegionIncidence RegionIncidence::from_entries(int n_regions, std::int64_t n_pixels, std::vector<Entry> entries) {
    if (n_regions <= 0) throw DomainError("cannot build an incidence without regions");
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.region != b.region ? a.region < b.region : a.pixel < b.pixel;
    });
    RegionIncidence inc;
    inc.n_pixels_ = n_pixels;
    inc.row_ptr_.assign(static_cast<std::size_t>(n_regions) + 1, 0);
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const Entry& en = entries[e];
        if (en.region < 0 || en.region >= n_regions) throw ShapeError("incidence entry region out of range");
        if (en.pixel < 0 || en.pixel >= n_pixels) throw ShapeError("incidence entry pixel out of range");
        if (!(en.weight > 0.0 && en.weight <= 1.0)) throw DomainError("incidence weight must lie in (0,1]");
        if (e > 0 && entries[e - 1].region == en.region && entries[e - 1].pixel == en.pixel) {
            throw DomainError("duplicate (region, pixel) incidence entry");
        }
        ++inc.row_ptr_[static_cast<std::size_t>(en.region) + 1];
        inc.pixels_.push_back(en.pixel);
        inc.weights_.push_back(en.weight);
    }
    for (int i = 0; i < n_regions; ++i) {
        if (inc.row_ptr_[static_cast<std::size_t>(i) + 1] == 0) {
            throw DomainError("region " + std::to_string(i + 1) + " has no pixels");
        }
        inc.row_ptr_[static_cast<std::size_t>(i) + 1] += inc.row_ptr_[static_cast<std::size_t>(i)];
    }
    return inc;
}

std::span<const std::int64_t> RegionIncidence::row_pixels(int i) const {
    const auto b = row_ptr_[static_cast<std::size_t>(i)];
    const auto e = row_ptr_[static_cast<std::size_t>(i) + 1];
    return {pixels_.data() + b, e - b};
}

std::span<const double> RegionIncidence::row_weights(int i) const {
    const auto b = row_ptr_[static_cast<std::size_t>(i)];
    const auto e = row_ptr_[static_cast<std::size_t>(i) + 1];
    return {weights_.data() + b, e - b};
}

std::vector<bool> RegionIncidence::covered() const {
    std::vector<bool> out(static_cast<std::size_t>(n_pixels_), false);
    for (auto p : pixels_) out[static_cast<std::size_t>(p)] = true;
    return out;
}

void RegionIncidence::write_csv(std::ostream& out) const {
    out << "region_id,pixel_index,weight\n";
    for (int i = 0; i < n_regions(); ++i) {
        const auto px = row_pixels(i);
        const auto w = row_weights(i);
        for (std::size_t k = 0; k < px.size(); ++k) out << (i + 1) << ',' << px[k] << ',' << w[k] << '\n';
    }
}

std::vector<double> aggregate_sum(const RegionIncidence& inc, std::span<const double> pixel_values) {
    if (static_cast<std::int64_t>(pixel_values.size()) != inc.n_pixels()) {
        throw ShapeError("aggregate_sum: pixel map size differs from incidence");
    }
    std::vector<double> out(static_cast<std::size_t>(inc.n_regions()), 0.0);
    for (int i = 0; i < inc.n_regions(); ++i) {
        const auto px = inc.row_pixels(i);
        const auto w = inc.row_weights(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < px.size(); ++k) acc += w[k] * pixel_values[static_cast<std::size_t>(px[k])];
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::vector<double> aggregate_sum_backward(const RegionIncidence& inc, std::span<const double> region_grads) {
    if (static_cast<int>(region_grads.size()) != inc.n_regions()) {
        throw ShapeError("aggregate_sum_backward: gradient length differs from region count");
    }
    std::vector<double> out(static_cast<std::size_t>(inc.n_pixels()), 0.0);
    for (int i = 0; i < inc.n_regions(); ++i) {
        const auto px = inc.row_pixels(i);
        const auto w = inc.row_weights(i);
        const double g = region_grads[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < px.size(); ++k) out[static_cast<std::size_t>(px[k])] += w[k] * g;
    }
    return out;
}

Map aggregate_sum_backward(const RegionIncidence& inc, std::span<const double> region_grads, int height, int width) {
    if (static_cast<std::int64_t>(height) * width != inc.n_pixels()) {
        throw ShapeError("aggregate_sum_backward: map shape differs from incidence");
    }
    Map out;
    out.height = height;
    out.width = width;
    out.data = aggregate_sum_backward(inc, region_grads);
    return out;
}

namespace {

void require_positive_on_rows(const RegionIncidence& inc, const Map& map, const char* what) {
    if (static_cast<std::int64_t>(map.size()) != inc.n_pixels()) throw ShapeError("pixel map size differs from incidence");
    for (int i = 0; i < inc.n_regions(); ++i) {
        for (auto p : inc.row_pixels(i)) {
            const double v = map[static_cast<std::size_t>(p)];
            if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(std::string(what) + " must be positive and finite on region pixels");
        }
    }
}

}  // namespace

RegionGaussian aggregate_gaussian(const RegionIncidence& inc, const Map& mu_map, const Map& var_map) {
    require_same_shape(mu_map, var_map, "aggregate_gaussian");
    require_positive_on_rows(inc, var_map, "variance");
    return {aggregate_sum(inc, mu_map), aggregate_sum(inc, var_map)};
}

std::vector<double> aggregate_poisson(const RegionIncidence& inc, const Map& lambda_map) {
    require_positive_on_rows(inc, lambda_map, "Poisson rate");
    return aggregate_sum(inc, lambda_map);
}

}  // namespace disagg
