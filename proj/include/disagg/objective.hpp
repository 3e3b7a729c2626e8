#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "disagg/aggregate.hpp"
#include "disagg/grid.hpp"

namespace disagg {

/// Scalar loss with pixel-map gradients.
///
/// `d_first` is the gradient with respect to the mean / value / rate map, `d_second`
/// with respect to the variance map (empty when the loss has no variance input).
struct LossResult {
    double loss = 0.0;
    Map d_first;
    Map d_second;
    std::vector<double> per_region_loss;
};

/// Sum over regions of -log N(y_i; mu*_i, var*_i).
LossResult gaussian_nll(std::span<const double> labels, const RegionGaussian& rg, const RegionIncidence& inc,
                        int height, int width);

/// Sum over regions of (y_i - yhat_i)^2.
LossResult mse_loss(std::span<const double> labels, std::span<const double> region_preds, const RegionIncidence& inc,
                    int height, int width);

/// Sum over regions of -log Poisson(y_i; lambda*_i). Labels must be nonnegative integers.
LossResult poisson_nll(std::span<const double> count_labels, std::span<const double> lambda_star,
                       const RegionIncidence& inc, int height, int width);

/// Pixel-level Gaussian NLL against per-pixel targets, over pixels where `mask` is set.
LossResult pixel_gaussian_nll(const Map& targets, const Map& mu_map, const Map& var_map, const std::vector<bool>& mask);

/// Pixel-level squared error against per-pixel targets, over pixels where `mask` is set.
LossResult pixel_mse(const Map& targets, const Map& mu_map, const std::vector<bool>& mask);

/// ln(y!) for a nonnegative integer y.
double log_factorial(double y);

struct EntropyResult {
    double entropy = 0.0;
    std::vector<double> d_var;
};

/// Sum over pixels of the Gaussian differential entropy 0.5 ln(2 pi e var).
EntropyResult gaussian_entropy(std::span<const double> var);

/// Standard normal draws for every pixel of one sample; depends only on the arguments.
Map standard_normal_map(std::uint64_t seed, std::uint64_t sample_key, int height, int width);

/// Reparameterized sampling objective with entropy regularization.
///
/// v = mu + sqrt(var) * noise, loss = sum_i (y_i - sum_{p in r_i} v_p)^2 - lambda_reg * H,
/// where H sums the per-pixel entropies over pixels that belong to some region.
LossResult sampling_objective(std::span<const double> labels, const Map& mu_map, const Map& var_map,
                              const RegionIncidence& inc, double lambda_reg, const Map& noise);

}  // namespace disagg
