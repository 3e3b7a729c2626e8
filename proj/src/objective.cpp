#include "disagg/objective.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "disagg/seed.hpp"

namespace disagg {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void require_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

LossResult gaussian_nll(std::span<const double> labels, const RegionGaussian& rg, const RegionIncidence& inc,
                        int height, int width) {
    const std::size_t n = labels.size();
    require_lengths(n, rg.mu_star.size(), "gaussian_nll");
    require_lengths(n, rg.var_star.size(), "gaussian_nll");
    require_lengths(n, static_cast<std::size_t>(inc.n_regions()), "gaussian_nll");

    LossResult res;
    res.per_region_loss.resize(n);
    std::vector<double> d_mu(n);
    std::vector<double> d_var(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double var = rg.var_star[i];
        if (!(var > 0.0) || !std::isfinite(var)) throw DomainError("gaussian_nll: aggregated variance must be positive");
        const double r = labels[i] - rg.mu_star[i];
        const double l = kHalfLog2Pi + 0.5 * std::log(var) + r * r / (2.0 * var);
        res.per_region_loss[i] = l;
        res.loss += l;
        d_mu[i] = -r / var;
        d_var[i] = 0.5 * (1.0 / var - r * r / (var * var));
    }
    res.d_first = aggregate_sum_backward(inc, d_mu, height, width);
    res.d_second = aggregate_sum_backward(inc, d_var, height, width);
    return res;
}

LossResult mse_loss(std::span<const double> labels, std::span<const double> region_preds, const RegionIncidence& inc,
                    int height, int width) {
    const std::size_t n = labels.size();
    require_lengths(n, region_preds.size(), "mse_loss");
    require_lengths(n, static_cast<std::size_t>(inc.n_regions()), "mse_loss");
    LossResult res;
    res.per_region_loss.resize(n);
    std::vector<double> d_pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = labels[i] - region_preds[i];
        res.per_region_loss[i] = r * r;
        res.loss += r * r;
        d_pred[i] = -2.0 * r;
    }
    res.d_first = aggregate_sum_backward(inc, d_pred, height, width);
    return res;
}

LossResult pixel_gaussian_nll(const Map& targets, const Map& mu_map, const Map& var_map, const std::vector<bool>& mask) {
    require_same_shape(targets, mu_map, "pixel_gaussian_nll");
    require_same_shape(targets, var_map, "pixel_gaussian_nll");
    require_lengths(mask.size(), targets.size(), "pixel_gaussian_nll");
    LossResult res;
    res.d_first = Map(targets.height, targets.width);
    res.d_second = Map(targets.height, targets.width);
    for (std::size_t p = 0; p < targets.size(); ++p) {
        if (!mask[p]) continue;
        const double var = var_map[p];
        if (!(var > 0.0) || !std::isfinite(var)) throw DomainError("pixel_gaussian_nll: variance must be positive");
        const double r = targets[p] - mu_map[p];
        res.loss += kHalfLog2Pi + 0.5 * std::log(var) + r * r / (2.0 * var);
        res.d_first[p] = -r / var;
        res.d_second[p] = 0.5 * (1.0 / var - r * r / (var * var));
    }
    return res;
}

LossResult pixel_mse(const Map& targets, const Map& mu_map, const std::vector<bool>& mask) {
    require_same_shape(targets, mu_map, "pixel_mse");
    require_lengths(mask.size(), targets.size(), "pixel_mse");
    LossResult res;
    res.d_first = Map(targets.height, targets.width);
    res.d_second = Map(targets.height, targets.width);
    for (std::size_t p = 0; p < targets.size(); ++p) {
        if (!mask[p]) continue;
        const double r = targets[p] - mu_map[p];
        res.loss += r * r;
        res.d_first[p] = -2.0 * r;
    }
    return res;
}

double log_factorial(double y) {
    static const std::array<double, 21> table = [] {
        std::array<double, 21> t{};
        for (int k = 1; k <= 20; ++k) t[static_cast<std::size_t>(k)] = t[static_cast<std::size_t>(k - 1)] + std::log(static_cast<double>(k));
        return t;
    }();
    if (y <= 20.0) return table[static_cast<std::size_t>(y)];
    return std::lgamma(y + 1.0);
}

LossResult poisson_nll(std::span<const double> count_labels, std::span<const double> lambda_star,
                       const RegionIncidence& inc, int height, int width) {
    const std::size_t n = count_labels.size();
    require_lengths(n, lambda_star.size(), "poisson_nll");
    require_lengths(n, static_cast<std::size_t>(inc.n_regions()), "poisson_nll");
    LossResult res;
    res.per_region_loss.resize(n);
    std::vector<double> d_lambda(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = count_labels[i];
        const double lam = lambda_star[i];
        if (!(y >= 0.0) || y != std::floor(y) || !std::isfinite(y)) {
            throw DomainError("poisson_nll: labels must be nonnegative integers");
        }
        if (!(lam > 0.0) || !std::isfinite(lam)) throw DomainError("poisson_nll: rate must be positive");
        const double l = lam - y * std::log(lam) + log_factorial(y);
        res.per_region_loss[i] = l;
        res.loss += l;
        d_lambda[i] = 1.0 - y / lam;
    }
    res.d_first = aggregate_sum_backward(inc, d_lambda, height, width);
    return res;
}

EntropyResult gaussian_entropy(std::span<const double> var) {
    const double half_log_2pi_e = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    EntropyResult res;
    res.d_var.resize(var.size());
    for (std::size_t p = 0; p < var.size(); ++p) {
        if (!(var[p] > 0.0) || !std::isfinite(var[p])) throw DomainError("gaussian_entropy: variance must be positive");
        res.entropy += half_log_2pi_e + 0.5 * std::log(var[p]);
        res.d_var[p] = 0.5 / var[p];
    }
    return res;
}

Map standard_normal_map(std::uint64_t seed, std::uint64_t sample_key, int height, int width) {
    std::mt19937_64 rng(mix_seed(seed, sample_key));
    std::normal_distribution<double> normal(0.0, 1.0);
    Map out(height, width);
    for (auto& v : out.data) v = normal(rng);
    return out;
}

LossResult sampling_objective(std::span<const double> labels, const Map& mu_map, const Map& var_map,
                              const RegionIncidence& inc, double lambda_reg, const Map& noise) {
    require_same_shape(mu_map, var_map, "sampling_objective");
    require_same_shape(mu_map, noise, "sampling_objective");
    const std::vector<bool> covered = inc.covered();
    require_lengths(covered.size(), mu_map.size(), "sampling_objective");

    Map sampled(mu_map.height, mu_map.width);
    std::vector<double> covered_var;
    for (std::size_t p = 0; p < mu_map.size(); ++p) {
        if (!covered[p]) continue;
        if (!(var_map[p] > 0.0) || !std::isfinite(var_map[p])) throw DomainError("sampling_objective: variance must be positive");
        sampled[p] = mu_map[p] + std::sqrt(var_map[p]) * noise[p];
        covered_var.push_back(var_map[p]);
    }
    const auto preds = aggregate_sum(inc, sampled);
    LossResult res = mse_loss(labels, preds, inc, mu_map.height, mu_map.width);
    const EntropyResult ent = gaussian_entropy(covered_var);
    res.loss -= lambda_reg * ent.entropy;

    res.d_second = Map(mu_map.height, mu_map.width);
    std::size_t k = 0;
    for (std::size_t p = 0; p < mu_map.size(); ++p) {
        if (!covered[p]) continue;
        const double sigma = std::sqrt(var_map[p]);
        res.d_second[p] = res.d_first[p] * noise[p] / (2.0 * sigma) - lambda_reg * ent.d_var[k++];
    }
    return res;
}

}  // namespace disagg
