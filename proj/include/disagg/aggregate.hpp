#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "disagg/grid.hpp"
#include "disagg/scene.hpp"

namespace disagg {

/// Sparse region×pixel weight matrix in compressed rows: the region aggregation layer.
///
/// Row i holds the pixels of region i+1 and their membership weights in (0,1].
/// Storage is proportional to the number of non-background pixels. Immutable after
/// construction, so one instance may be shared between threads.
class RegionIncidence {
public:
    struct Entry {
        int region;  // 0-based row
        std::int64_t pixel;
        double weight;
    };

    /// Binary weights from a mask; row order matches label order.
    static RegionIncidence from_regions(const RegionSet& regions);

    /// Fractional weights for overlapping regions. Entries may come in any order;
    /// each row is stored sorted by pixel index.
    static RegionIncidence from_entries(int n_regions, std::int64_t n_pixels, std::vector<Entry> entries);

    int n_regions() const { return static_cast<int>(row_ptr_.size()) - 1; }
    std::int64_t n_pixels() const { return n_pixels_; }
    std::size_t nnz() const { return pixels_.size(); }

    std::span<const std::int64_t> row_pixels(int i) const;
    std::span<const double> row_weights(int i) const;

    /// Pixel mask of pixels referenced by at least one region.
    std::vector<bool> covered() const;

    /// Debug dump, `region_id,pixel_index,weight` with 1-based region ids.
    void write_csv(std::ostream& out) const;

private:
    std::int64_t n_pixels_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::int64_t> pixels_;
    std::vector<double> weights_;
};

inline RegionIncidence build_incidence(const RegionSet& regions) { return RegionIncidence::from_regions(regions); }

/// Per-region weighted sums, accumulated in stored row order.
std::vector<double> aggregate_sum(const RegionIncidence& inc, std::span<const double> pixel_values);
inline std::vector<double> aggregate_sum(const RegionIncidence& inc, const Map& map) {
    return aggregate_sum(inc, map.span());
}

/// Transpose product: scatters region gradients back to pixels. Background pixels get 0.
std::vector<double> aggregate_sum_backward(const RegionIncidence& inc, std::span<const double> region_grads);
Map aggregate_sum_backward(const RegionIncidence& inc, std::span<const double> region_grads, int height, int width);

/// Per-region N(mu*, var*) of a sum of independent per-pixel Gaussians.
struct RegionGaussian {
    std::vector<double> mu_star;
    std::vector<double> var_star;
};

RegionGaussian aggregate_gaussian(const RegionIncidence& inc, const Map& mu_map, const Map& var_map);

/// Per-region Poisson rate of a sum of independent per-pixel Poisson variables.
std::vector<double> aggregate_poisson(const RegionIncidence& inc, const Map& lambda_map);

}  // namespace disagg
