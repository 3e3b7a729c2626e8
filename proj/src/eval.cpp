#include "disagg/eval.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "disagg/objective.hpp"

namespace disagg {

using nlohmann::json;

PixelPrediction predict_pixels(const Checkpoint& ckpt, const Chip& chip) {
    if (head_for(ckpt.method) != ckpt.config.head) {
        throw ConfigError("checkpoint method '" + to_string(ckpt.method) + "' does not match head '" +
                          to_string(ckpt.config.head) + "'");
    }
    const auto fwd = forward(ckpt.config, ckpt.params, chip);
    const HeadOutput head = apply_head(fwd.raw_mu, fwd.raw_s, ckpt.config.head);
    const double s = ckpt.label_scale;
    PixelPrediction out;
    out.mu = head.first;
    for (auto& v : out.mu.data) v *= s;
    if (ckpt.config.head == HeadKind::gaussian) {
        out.var = head.second;
        for (auto& v : out.var->data) v *= s * s;
    } else if (ckpt.config.head == HeadKind::poisson) {
        out.var = out.mu;
    }
    return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

PointMetrics point_metrics(std::span<const double> labels, std::span<const double> predictions) {
    if (labels.size() != predictions.size()) throw ShapeError("point_metrics: length mismatch");
    if (labels.empty()) throw DomainError("point_metrics: no regions");
    PointMetrics m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!(labels[i] > 0.0)) throw DomainError("point_metrics: labels must be positive");
        const double err = std::abs(labels[i] - predictions[i]);
        m.mae += err;
        m.mape += err / labels[i];
    }
    const double n = static_cast<double>(labels.size());
    m.mae /= n;
    m.mape = 100.0 * m.mape / n;
    return m;
}

namespace {

void check_distribution(std::span<const double> labels, const RegionGaussian& rg) {
    if (labels.size() != rg.mu_star.size() || labels.size() != rg.var_star.size()) {
        throw ShapeError("length mismatch between labels and predicted distribution");
    }
    if (labels.empty()) throw DomainError("no regions");
    for (double v : rg.var_star) {
        if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("predicted variance must be positive");
    }
}

}  // namespace

double p_within(std::span<const double> labels, const RegionGaussian& rg, double t) {
    check_distribution(labels, rg);
    if (!(t > 0.0)) throw DomainError("p_within: threshold must be positive");
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double sigma = std::sqrt(rg.var_star[i]);
        const double hi = (labels[i] + t - rg.mu_star[i]) / sigma;
        const double lo = (labels[i] - t - rg.mu_star[i]) / sigma;
        // Upper-tail form keeps precision when both bounds sit far in the right tail.
        const double p = lo > 0.0 ? normal_cdf(-lo) - normal_cdf(-hi) : normal_cdf(hi) - normal_cdf(lo);
        acc += p;
    }
    return acc / static_cast<double>(labels.size());
}

double mean_log_prob(std::span<const double> labels, const RegionGaussian& rg) {
    check_distribution(labels, rg);
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double r = labels[i] - rg.mu_star[i];
        acc -= half_log_2pi + 0.5 * std::log(rg.var_star[i]) + r * r / (2.0 * rg.var_star[i]);
    }
    return acc / static_cast<double>(labels.size());
}

Map uniform_label_targets(const Sample& s) {
    const auto areas = region_areas(s.regions);
    Map out(s.regions.mask.height, s.regions.mask.width, 0.0);
    for (std::size_t p = 0; p < out.size(); ++p) {
        const std::int32_t k = s.regions.mask[p];
        if (k > 0) out[p] = s.labels[static_cast<std::size_t>(k - 1)] / static_cast<double>(areas[static_cast<std::size_t>(k - 1)]);
    }
    return out;
}

std::vector<double> all_labels(const std::vector<Sample>& samples) {
    std::vector<double> out;
    for (const auto& s : samples) out.insert(out.end(), s.labels.begin(), s.labels.end());
    return out;
}

MetricsReport evaluate_predictions(const std::string& method, const std::vector<Sample>& samples,
                                   const std::vector<PixelPrediction>& predictions, const EvalOptions& opts,
                                   bool poisson) {
    if (samples.size() != predictions.size()) throw ShapeError("one prediction per sample required");
    const bool probabilistic = !predictions.empty() && predictions.front().var.has_value();

    std::vector<double> labels;
    RegionGaussian rg;
    double pixel_sigma_sum = 0.0;
    std::size_t pixel_count = 0;
    double abs_err = 0.0;
    std::size_t oracle_pixels = 0;
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;

    for (std::size_t k = 0; k < samples.size(); ++k) {
        const Sample& s = samples[k];
        const PixelPrediction& pred = predictions[k];
        if (pred.var.has_value() != probabilistic) throw ConfigError("mixed probabilistic and deterministic predictions");
        const auto inc = build_incidence(s.regions);
        const auto mu_star = aggregate_sum(inc, pred.mu);
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        rg.mu_star.insert(rg.mu_star.end(), mu_star.begin(), mu_star.end());
        if (probabilistic) {
            const auto var_star = aggregate_sum(inc, *pred.var);
            rg.var_star.insert(rg.var_star.end(), var_star.begin(), var_star.end());
        }
        const auto covered = inc.covered();
        for (std::size_t p = 0; p < covered.size(); ++p) {
            if (!covered[p]) continue;
            if (probabilistic) {
                pixel_sigma_sum += std::sqrt((*pred.var)[p]);
                ++pixel_count;
            }
            if (s.oracle) {
                const double x = pred.mu[p];
                const double y = (*s.oracle)[p];
                abs_err += std::abs(x - y);
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
                ++oracle_pixels;
            }
        }
    }

    MetricsReport r;
    r.method = method;
    r.thresholds = opts.thresholds;
    r.n_regions = static_cast<int>(labels.size());
    const PointMetrics pm = point_metrics(labels, rg.mu_star);
    r.mae = pm.mae;
    r.mape = pm.mape;
    if (probabilistic) {
        double sigma_sum = 0.0;
        for (double v : rg.var_star) sigma_sum += std::sqrt(v);
        r.avg_sigma = opts.sigma_average == SigmaAverage::region ? sigma_sum / static_cast<double>(labels.size())
                                                                 : pixel_sigma_sum / static_cast<double>(pixel_count);
        if (poisson) {
            double acc = 0.0;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                const double lam = rg.mu_star[i];
                acc -= lam - labels[i] * std::log(lam) + log_factorial(labels[i]);
            }
            r.mean_log_prob = acc / static_cast<double>(labels.size());
        } else {
            r.mean_log_prob = mean_log_prob(labels, rg);
            std::vector<double> pw;
            for (double t : opts.thresholds) pw.push_back(p_within(labels, rg, t));
            r.p_within = std::move(pw);
        }
    }
    if (oracle_pixels > 0) {
        const double n = static_cast<double>(oracle_pixels);
        r.pixel_mae = abs_err / n;
        const double cov = sxy - sx * sy / n;
        const double vx = sxx - sx * sx / n;
        const double vy = syy - sy * sy / n;
        if (vx > 0.0 && vy > 0.0) r.pixel_corr = cov / std::sqrt(vx * vy);
    }
    return r;
}

MetricsReport evaluate(const Checkpoint& ckpt, const std::vector<Sample>& samples, const EvalOptions& opts) {
    std::vector<PixelPrediction> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) preds.push_back(predict_pixels(ckpt, s.chip));
    return evaluate_predictions(to_string(ckpt.method), samples, preds, opts, ckpt.method == Method::poisson);
}

GaussianFit gaussian_fit(std::span<const double> train_labels) {
    if (train_labels.size() < 2) throw DomainError("gaussian_fit needs at least 2 labels");
    const double n = static_cast<double>(train_labels.size());
    double mean = 0.0;
    for (double y : train_labels) mean += y;
    mean /= n;
    double var = 0.0;
    for (double y : train_labels) var += (y - mean) * (y - mean);
    var /= n;
    return {mean, std::max(var, kMinPositive)};
}

MetricsReport gaussian_fit_baseline(std::span<const double> train_labels, std::span<const double> test_labels,
                                    const EvalOptions& opts) {
    const GaussianFit fit = gaussian_fit(train_labels);
    RegionGaussian rg{std::vector<double>(test_labels.size(), fit.mu), std::vector<double>(test_labels.size(), fit.var)};
    MetricsReport r;
    r.method = "gaussian-fit";
    r.thresholds = opts.thresholds;
    r.n_regions = static_cast<int>(test_labels.size());
    const PointMetrics pm = point_metrics(test_labels, rg.mu_star);
    r.mae = pm.mae;
    r.mape = pm.mape;
    r.avg_sigma = std::sqrt(fit.var);
    r.mean_log_prob = mean_log_prob(test_labels, rg);
    std::vector<double> pw;
    for (double t : opts.thresholds) pw.push_back(p_within(test_labels, rg, t));
    r.p_within = std::move(pw);
    return r;
}

double size_density(const std::vector<Sample>& train) {
    if (train.empty()) throw DomainError("size estimation needs training samples");
    double value = 0.0;
    double area = 0.0;
    for (const auto& s : train) {
        const auto areas = region_areas(s.regions);
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            value += s.labels[i];
            area += static_cast<double>(areas[i]);
        }
    }
    if (!(area > 0.0)) throw DomainError("size estimation: training regions have no pixels");
    return value / area;
}

MetricsReport size_estimation_baseline(const std::vector<Sample>& train, const std::vector<Sample>& test) {
    const double rho = size_density(train);
    std::vector<PixelPrediction> preds;
    for (const auto& s : test) {
        PixelPrediction p;
        p.mu = Map(s.regions.mask.height, s.regions.mask.width, 0.0);
        for (std::size_t q = 0; q < p.mu.size(); ++q) {
            if (s.regions.mask[q] > 0) p.mu[q] = rho;
        }
        preds.push_back(std::move(p));
    }
    return evaluate_predictions("size", test, preds);
}

MetricsReport uniform_baseline(const std::vector<Sample>& test) {
    std::vector<PixelPrediction> preds;
    for (const auto& s : test) preds.push_back(PixelPrediction{uniform_label_targets(s), std::nullopt});
    return evaluate_predictions("uniform", test, preds);
}

json report_to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json pw = json::object();
    for (std::size_t k = 0; k < r.thresholds.size(); ++k) {
        char key[32];
        std::snprintf(key, sizeof key, "%.0f", r.thresholds[k]);
        pw[key] = r.p_within ? json((*r.p_within)[k]) : json(nullptr);
    }
    return json{{"method", r.method},
                {"mae", r.mae},
                {"mape", r.mape},
                {"p_within", pw},
                {"avg_sigma", opt(r.avg_sigma)},
                {"mean_log_prob", opt(r.mean_log_prob)},
                {"n_regions", r.n_regions},
                {"pixel_mae", opt(r.pixel_mae)},
                {"pixel_corr", opt(r.pixel_corr)}};
}

std::string format_table(const std::vector<MetricsReport>& reports) {
    std::vector<double> thresholds = reports.empty() ? std::vector<double>{} : reports.front().thresholds;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Method", "MAE", "MAPE"};
    for (double t : thresholds) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "P+-(%g)", t);
        header.emplace_back(buf);
    }
    header.insert(header.end(), {"Average sigma", "Log Prob (avg)"});
    rows.push_back(header);
    auto num = [](double v, const char* fmt) {
        char buf[64];
        std::snprintf(buf, sizeof buf, fmt, v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        std::vector<std::string> row{r.method, num(r.mae, "$%.0f"), num(r.mape, "%.2f%%")};
        for (std::size_t k = 0; k < thresholds.size(); ++k) {
            row.push_back(r.p_within && k < r.p_within->size() ? num(100.0 * (*r.p_within)[k], "%.2f%%") : "NA");
        }
        row.push_back(r.avg_sigma ? num(*r.avg_sigma, "$%.0f") : "NA");
        row.push_back(r.mean_log_prob ? num(*r.mean_log_prob, "%.2f") : "NA");
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::string out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            std::string cell = rows[r][c];
            cell.resize(widths[c], ' ');
            out += cell;
            out += c + 1 < rows[r].size() ? "  " : "";
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : widths) total += w + 2;
            out += std::string(total - 2, '-') + '\n';
        }
    }
    return out;
}

}  // namespace disagg
