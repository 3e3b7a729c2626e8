#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "disagg/error.hpp"
#include "disagg/eval.hpp"
#include "disagg/objective.hpp"
#include "support.hpp"

using namespace disagg;

namespace {

RegionGaussian gauss(std::vector<double> mu, std::vector<double> var) { return {std::move(mu), std::move(var)}; }

std::vector<Sample> synthetic(int count, std::uint64_t seed = 42) {
    SceneConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.parcel_rows = 2;
    cfg.parcel_cols = 2;
    cfg.seed = seed;
    return generate_dataset(cfg, count);
}

std::vector<PixelPrediction> noisy_predictions(const std::vector<Sample>& samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<PixelPrediction> out;
    for (const auto& s : samples) {
        PixelPrediction p{*s.oracle, testing::random_map(rng, 16, 16, 1.0, 50.0)};
        for (auto& v : p.mu.data) v *= std::uniform_real_distribution<double>(0.7, 1.3)(rng);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

TEST_CASE("normal cdf values") {
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-15));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-8.0, 8.0);
    for (int k = 0; k < 200; ++k) {
        const double x = u(rng);
        CHECK(std::abs(normal_cdf(x) + normal_cdf(-x) - 1.0) <= 1e-12);
    }
}

TEST_CASE("point metrics") {
    auto m = point_metrics(std::vector<double>{100.0}, std::vector<double>{110.0});
    CHECK(m.mae == 10.0);
    CHECK(m.mape == doctest::Approx(10.0).epsilon(1e-14));
    m = point_metrics(std::vector<double>{100.0, 200.0}, std::vector<double>{100.0, 200.0});
    CHECK(m.mae == 0.0);
    CHECK(m.mape == 0.0);
    m = point_metrics(std::vector<double>{100.0, 200.0}, std::vector<double>{110.0, 180.0});
    CHECK(m.mae == 15.0);
    CHECK(m.mape == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("interval probabilities") {
    const double t = 250.0;
    CHECK(p_within(std::vector<double>{1000.0}, gauss({1000.0}, {t * t}), t) ==
          doctest::Approx(2.0 * normal_cdf(1.0) - 1.0).epsilon(1e-14));
    CHECK(p_within(std::vector<double>{1000.0}, gauss({1000.0}, {t * t}), t) ==
          doctest::Approx(0.6826894921370859).epsilon(1e-14));
    CHECK(p_within(std::vector<double>{1000.0}, gauss({1000.0}, {kMinPositive}), 0.5) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p_within(std::vector<double>{1000.0}, gauss({1000.0 + 10 * t}, {t * t}), t) < 1e-15);

    const std::vector<double> y{10.0, 20.0, 30.0};
    const auto rg = gauss({12.0, 15.0, 31.0}, {4.0, 9.0, 1.0});
    double prev = 0.0;
    for (double tt = 0.1; tt < 20.0; tt += 0.37) {
        const double p = p_within(y, rg, tt);
        CHECK(p >= prev);
        prev = p;
    }
}

TEST_CASE("mean log probability") {
    CHECK(mean_log_prob(std::vector<double>{5.0}, gauss({5.0}, {1.0})) ==
          doctest::Approx(-0.918938533204672742).epsilon(1e-15));
    CHECK(mean_log_prob(std::vector<double>{5.0}, gauss({5.0}, {1e8})) ==
          doctest::Approx(-0.918938533204672742 - std::log(1e4)).epsilon(1e-15));

    std::mt19937_64 rng(3);
    auto regions = testing::random_regions(rng, 6, 6, 4);
    const auto inc = build_incidence(regions);
    const auto rg = aggregate_gaussian(inc, testing::random_map(rng, 6, 6, 0, 3), testing::random_map(rng, 6, 6, 0.1, 2));
    const std::vector<double> labels{1.0, 4.0, 2.0, 7.0};
    const double nll = gaussian_nll(labels, rg, inc, 6, 6).loss;
    CHECK(testing::rel_err(mean_log_prob(labels, rg), -nll / 4.0) <= 1e-15);
}

TEST_CASE("Gaussian fit baseline") {
    const auto fit = gaussian_fit(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(fit.mu == 2.0);
    CHECK(fit.var == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const auto r = gaussian_fit_baseline(std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{2.0});
    CHECK(r.mae == 0.0);

    const auto degenerate = gaussian_fit(std::vector<double>{5.0, 5.0, 5.0});
    CHECK(degenerate.var == kMinPositive);
    EvalOptions opts;
    opts.thresholds = {1.0};
    const auto d = gaussian_fit_baseline(std::vector<double>{5.0, 5.0}, std::vector<double>{5.0}, opts);
    CHECK((*d.p_within)[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*d.mean_log_prob > 5.0);
}

TEST_CASE("size estimation baseline") {
    Sample train;
    train.id = "train";
    train.chip = Chip(2, 5, 3, 0.5);
    train.regions = testing::region_set(2, 5, std::vector<int>(10, 1));
    train.labels = {1000.0};
    CHECK(size_density({train}) == 100.0);

    Sample test;
    test.id = "test";
    test.chip = Chip(1, 5, 3, 0.5);
    test.regions = testing::region_set(1, 5, {1, 1, 1, 1, 1});
    test.labels = {500.0};
    auto r = size_estimation_baseline({train}, {test});
    CHECK(r.mae == 0.0);
    CHECK(r.mape == 0.0);

    test.labels = {600.0};
    r = size_estimation_baseline({train}, {test});
    CHECK(r.mae == 100.0);
    CHECK_FALSE(r.p_within.has_value());
}

TEST_CASE("uniform targets invert aggregation") {
    for (const auto& s : synthetic(5)) {
        const auto back = aggregate_sum(build_incidence(s.regions), uniform_label_targets(s));
        for (std::size_t i = 0; i < back.size(); ++i) CHECK(testing::rel_err(back[i], s.labels[i]) <= 1e-12);
    }
    Sample s;
    s.regions = testing::region_set(1, 5, {1, 1, 1, 1, 2});
    s.labels = {100.0, 100.0};
    const Map t = uniform_label_targets(s);
    CHECK(t.data == std::vector<double>{25.0, 25.0, 25.0, 25.0, 100.0});
}

TEST_CASE("uniform baseline is exact at region level but not at pixel level") {
    const auto test = synthetic(6);
    const auto r = uniform_baseline(test);
    CHECK(r.mae < 1e-9);
    REQUIRE(r.pixel_mae.has_value());
    CHECK(*r.pixel_mae > 0.0);
}

TEST_CASE("oracle predictions give perfect pixel metrics") {
    const auto samples = synthetic(4);
    std::vector<PixelPrediction> preds;
    for (const auto& s : samples) preds.push_back({*s.oracle, std::nullopt});
    const auto r = evaluate_predictions("oracle", samples, preds);
    CHECK(r.mae == 0.0);
    CHECK(*r.pixel_mae == 0.0);
    CHECK(*r.pixel_corr == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(r.p_within.has_value());
    CHECK_FALSE(r.avg_sigma.has_value());
    CHECK_FALSE(r.mean_log_prob.has_value());
    const auto j = report_to_json(r);
    CHECK(j["avg_sigma"].is_null());
    CHECK(j["p_within"]["10000"].is_null());
    CHECK(format_table({r}).find("NA") != std::string::npos);
}

TEST_CASE("metrics do not depend on sample order") {
    const auto samples = synthetic(8);
    const auto preds = noisy_predictions(samples, 5);
    const auto a = evaluate_predictions("x", samples, preds);
    auto s2 = samples;
    auto p2 = preds;
    std::reverse(s2.begin(), s2.end());
    std::reverse(p2.begin(), p2.end());
    const auto b = evaluate_predictions("x", s2, p2);
    CHECK(testing::rel_err(a.mae, b.mae) <= 1e-12);
    CHECK(testing::rel_err(a.mape, b.mape) <= 1e-12);
    CHECK(testing::rel_err(*a.avg_sigma, *b.avg_sigma) <= 1e-12);
    CHECK(testing::rel_err(*a.mean_log_prob, *b.mean_log_prob) <= 1e-12);
    CHECK(testing::rel_err(*a.pixel_mae, *b.pixel_mae) <= 1e-12);
    CHECK(testing::rel_err(*a.pixel_corr, *b.pixel_corr) <= 1e-9);
    for (std::size_t k = 0; k < a.thresholds.size(); ++k) CHECK(testing::rel_err((*a.p_within)[k], (*b.p_within)[k]) <= 1e-12);
}

TEST_CASE("scaling laws of the metrics") {
    const double s = 1000.0;
    const auto raw_samples = synthetic(6);
    const auto raw_preds = noisy_predictions(raw_samples, 9);
    auto samples = raw_samples;
    auto preds = raw_preds;
    for (auto& x : samples) {
        for (auto& y : x.labels) y /= s;
        for (auto& v : x.oracle->data) v /= s;
    }
    for (auto& p : preds) {
        for (auto& v : p.mu.data) v /= s;
        for (auto& v : p.var->data) v /= s * s;
    }
    EvalOptions raw_opts;
    raw_opts.thresholds = {50.0, 500.0};
    EvalOptions scaled_opts;
    scaled_opts.thresholds = {50.0 / s, 500.0 / s};
    const auto r = evaluate_predictions("x", raw_samples, raw_preds, raw_opts);
    const auto q = evaluate_predictions("x", samples, preds, scaled_opts);
    CHECK(testing::rel_err(r.mae, s * q.mae) <= 1e-9);
    CHECK(testing::rel_err(r.mape, q.mape) <= 1e-9);
    CHECK(testing::rel_err(*r.avg_sigma, s * *q.avg_sigma) <= 1e-9);
    CHECK(std::abs(*r.mean_log_prob - (*q.mean_log_prob - std::log(s))) <= 1e-9);
    for (int k = 0; k < 2; ++k) CHECK(std::abs((*r.p_within)[k] - (*q.p_within)[k]) <= 1e-9);
}

TEST_CASE("pixel averaged sigma") {
    const auto samples = synthetic(2);
    auto preds = noisy_predictions(samples, 2);
    for (auto& p : preds) std::fill(p.var->data.begin(), p.var->data.end(), 4.0);
    EvalOptions opts;
    opts.sigma_average = SigmaAverage::pixel;
    CHECK(*evaluate_predictions("x", samples, preds, opts).avg_sigma == doctest::Approx(2.0).epsilon(1e-14));
    // 64 pixels per region: sigma* = sqrt(64 * 4).
    CHECK(*evaluate_predictions("x", samples, preds).avg_sigma == doctest::Approx(16.0).epsilon(1e-14));
}

TEST_CASE("checkpoint predictions undo label scaling") {
    Checkpoint ck;
    ck.config.widths = {};
    ck.config.downsample_levels = 0;
    ck.params = init_params(ck.config);
    ck.label_scale = 1000.0;
    Chip chip(4, 4, 3, 0.5);
    const auto fwd = forward(ck.config, ck.params, chip);
    const auto head = apply_head(fwd.raw_mu, fwd.raw_s, HeadKind::gaussian);
    const auto p = predict_pixels(ck, chip);
    CHECK(p.mu[0] == head.first[0] * 1000.0);
    CHECK((*p.var)[0] == head.second[0] * 1e6);

    ck.method = Method::deterministic;
    CHECK_THROWS_AS(predict_pixels(ck, chip), ConfigError);
    ck.config.head = HeadKind::deterministic;
    CHECK_FALSE(predict_pixels(ck, chip).var.has_value());
}
