#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "disagg/aggregate.hpp"
#include "disagg/checkpoint.hpp"
#include "disagg/scene.hpp"

namespace disagg {

/// Per-pixel prediction in raw currency units. `var` is absent for deterministic models.
struct PixelPrediction {
    Map mu;
    std::optional<Map> var;
};

/// Runs forward + head and undoes label scaling. Poisson models report var = rate.
PixelPrediction predict_pixels(const Checkpoint& ckpt, const Chip& chip);

/// Standard normal CDF.
double normal_cdf(double x);

struct PointMetrics {
    double mae = 0.0;
    double mape = 0.0;  // percent
};

PointMetrics point_metrics(std::span<const double> labels, std::span<const double> predictions);

/// Mean over regions of P(|Y - y_i| <= t) for Y ~ N(mu*_i, var*_i).
double p_within(std::span<const double> labels, const RegionGaussian& rg, double t);

/// Mean over regions of log N(y_i; mu*_i, var*_i).
double mean_log_prob(std::span<const double> labels, const RegionGaussian& rg);

/// Missing optionals print as "NA" (the model has no predictive distribution).
struct MetricsReport {
    std::string method;
    double mae = 0.0;
    double mape = 0.0;
    std::vector<double> thresholds;
    std::optional<std::vector<double>> p_within;  // aligned with thresholds
    std::optional<double> avg_sigma;
    std::optional<double> mean_log_prob;
    int n_regions = 0;
    std::optional<double> pixel_mae;
    std::optional<double> pixel_corr;
};

enum class SigmaAverage { region, pixel };

struct EvalOptions {
    std::vector<double> thresholds{1e4, 1e5};
    SigmaAverage sigma_average = SigmaAverage::region;
};

/// Metrics for given per-pixel predictions (one per sample, same order).
MetricsReport evaluate_predictions(const std::string& method, const std::vector<Sample>& samples,
                                   const std::vector<PixelPrediction>& predictions, const EvalOptions& opts = {},
                                   bool poisson = false);

MetricsReport evaluate(const Checkpoint& ckpt, const std::vector<Sample>& samples, const EvalOptions& opts = {});

// ---- non-trained baselines ----

struct GaussianFit {
    double mu = 0.0;
    double var = 0.0;
};

/// Maximum-likelihood fit (population variance), variance floored at kMinPositive.
GaussianFit gaussian_fit(std::span<const double> train_labels);

MetricsReport gaussian_fit_baseline(std::span<const double> train_labels, std::span<const double> test_labels,
                                    const EvalOptions& opts = {});

/// Value per pixel: total training value over total training region area.
double size_density(const std::vector<Sample>& train);

MetricsReport size_estimation_baseline(const std::vector<Sample>& train, const std::vector<Sample>& test);

/// Each region's value spread evenly over its pixels; exact at region level,
/// so only the pixel metrics say anything.
MetricsReport uniform_baseline(const std::vector<Sample>& test);

/// Uniform-value pixel map of a sample: y_i / |r_i| inside region i, 0 on background.
Map uniform_label_targets(const Sample& s);

std::vector<double> all_labels(const std::vector<Sample>& samples);

nlohmann::json report_to_json(const MetricsReport& r);

/// Aligned text table with one row per report.
std::string format_table(const std::vector<MetricsReport>& reports);

}  // namespace disagg
