#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "disagg/error.hpp"
#include "disagg/train.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace disagg;

namespace {

Parameters scalar_param(double v) {
    Parameters p;
    p.blocks.push_back({"theta", {1}, {v}});
    return p;
}

std::vector<Sample> small_dataset(int count, std::uint64_t seed = 42) {
    SceneConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.parcel_rows = 2;
    cfg.parcel_cols = 2;
    cfg.building_size_min = 3;
    cfg.building_size_max = 6;
    cfg.seed = seed;
    return generate_dataset(cfg, count);
}

TrainConfig tiny_config(Method m, int epochs) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-2;
    cfg.predictor.widths = {4};
    cfg.predictor.downsample_levels = 0;
    cfg.predictor.head = head_for(m);
    cfg.threads = 1;
    return cfg;
}

DatasetSplit split_of(const std::vector<Sample>& data, const TrainConfig& cfg) {
    return split_dataset(data, cfg.val_frac, cfg.test_frac, cfg.seed);
}

}  // namespace

TEST_CASE("first Adam step") {
    Parameters p = scalar_param(0.5);
    AdamState st;
    adam_step(p, scalar_param(1.0), st, AdamHyper{});
    CHECK(testing::rel_err(p.blocks[0].values[0] - 0.5, -1e-3 / (1.0 + 1e-8)) < 1e-12);
    CHECK(std::abs(p.blocks[0].values[0] - 0.5 + 9.99999990e-4) < 1e-12);
    CHECK(st.step == 1);
}

TEST_CASE("zero gradient leaves parameters and decays moments") {
    Parameters p = scalar_param(0.5);
    AdamState st;
    adam_step(p, scalar_param(2.0), st, AdamHyper{});
    const double after_first = p.blocks[0].values[0];
    const double m1 = st.m[0][0];
    const double v1 = st.v[0][0];
    Parameters q = p;
    AdamState st2 = st;
    adam_step(q, scalar_param(0.0), st2, AdamHyper{});
    CHECK(st2.m[0][0] == 0.9 * m1);
    CHECK(st2.v[0][0] == 0.999 * v1);
    // Bias-corrected momentum keeps moving the parameter after the gradient vanishes.
    CHECK(q.blocks[0].values[0] < after_first);

    Parameters fresh = scalar_param(0.25);
    AdamState st3;
    adam_step(fresh, scalar_param(0.0), st3, AdamHyper{});
    CHECK(fresh.blocks[0].values[0] == 0.25);
}

TEST_CASE("Adam on a quadratic follows the textbook update") {
    Parameters p = scalar_param(1.0);
    AdamState st;
    const AdamHyper hyper{0.05, 0.9, 0.999, 1e-8};
    // Reference update written out independently.
    double theta = 1.0, m = 0.0, v = 0.0;
    std::vector<double> traj;
    for (int t = 1; t <= 100; ++t) {
        adam_step(p, scalar_param(2.0 * p.blocks[0].values[0]), st, hyper);
        const double g = 2.0 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        theta -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        CHECK(testing::rel_err(p.blocks[0].values[0], theta) < 1e-12);
        traj.push_back(std::abs(theta));
    }
    CHECK(traj.back() < 0.9);
    CHECK(traj[49] < traj[0]);
    CHECK(traj[99] < traj[49]);
}

TEST_CASE("train config json round trip and rejection") {
    TrainConfig cfg = tiny_config(Method::sampling, 7);
    cfg.merge.enabled = true;
    cfg.filter.max_density = 900.0;
    const auto j = train_config_to_json(cfg);
    CHECK(train_config_to_json(train_config_from_json(j)) == j);

    CHECK_THROWS_WITH_AS(train_config_from_json(nlohmann::json{{"epochz", 3}}), doctest::Contains("epochz"), ConfigError);
    CHECK_THROWS_WITH_AS(train_config_from_json(nlohmann::json{{"merge", {{"cap", 1}}}}), doctest::Contains("merge.cap"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(train_config_from_json(nlohmann::json{{"learning_rate", -1}}),
                         doctest::Contains("learning_rate"), ConfigError);
    CHECK_THROWS_WITH_AS(train_config_from_json(nlohmann::json{{"method", "magic"}}), doctest::Contains("method"),
                         ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"method", "poisson"}, {"predictor", {{"head", "gaussian"}}}}),
                    ConfigError);
    CHECK(train_config_from_json(nlohmann::json{{"method", "poisson"}}).predictor.head == HeadKind::poisson);
    CHECK(train_config_from_json(nlohmann::json{{"method", "poisson"}}).effective_label_scale() == 1.0);
}

TEST_CASE("composed pipeline gradients match central differences") {
    for (Method m : {Method::analytical, Method::sampling, Method::deterministic, Method::uniform, Method::poisson}) {
        CAPTURE(to_string(m));
        const auto cfg = testing::gradcheck_config(m);
        const auto s = testing::gradcheck_scene(m == Method::poisson);
        const auto gc = testing::check_sample_gradient(cfg, init_params(cfg.predictor), s, 11, 1e-6, 1e-4);
        CHECK(static_cast<double>(gc.within) >= 0.99 * static_cast<double>(gc.coords));
        CHECK(gc.vector_rel < 1e-4);
    }
}

TEST_CASE("zero epochs returns the initial checkpoint") {
    const auto data = small_dataset(10);
    const auto cfg = tiny_config(Method::analytical, 0);
    const auto res = train(cfg, split_of(data, cfg), data);
    CHECK(res.log.epochs.empty());
    CHECK(res.best.epoch == 0);
    CHECK(res.best.params == round_to_float(init_params(cfg.predictor)));
    std::ostringstream csv;
    res.log.write_csv(csv);
    CHECK(csv.str() == "epoch,train_loss,val_mae\n");
}

TEST_CASE("training is deterministic and independent of thread count") {
    const auto data = small_dataset(10);
    auto cfg = tiny_config(Method::sampling, 3);
    const auto a = train(cfg, split_of(data, cfg), data);
    const auto b = train(cfg, split_of(data, cfg), data);
    CHECK(serialize_checkpoint(a.best) == serialize_checkpoint(b.best));
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t k = 0; k < a.log.epochs.size(); ++k) CHECK(a.log.epochs[k].train_loss == b.log.epochs[k].train_loss);
    cfg.threads = 3;
    const auto c = train(cfg, split_of(data, cfg), data);
    CHECK(c.best.params == a.best.params);
}

TEST_CASE("best checkpoint carries the minimum validation MAE") {
    const auto data = small_dataset(10);
    const auto cfg = tiny_config(Method::analytical, 8);
    const auto res = train(cfg, split_of(data, cfg), data);
    double best = 1e300;
    int best_epoch = 0;
    for (const auto& e : res.log.epochs) {
        if (e.val_mae < best) {
            best = e.val_mae;
            best_epoch = e.epoch;
        }
    }
    CHECK(*res.best.validation_metric == best);
    CHECK(res.best.epoch == best_epoch);
    const auto val = select_samples(data, split_of(data, cfg).validation);
    CHECK(validation_mae(res.best, val) == best);
}

TEST_CASE("deterministic fit of a constant scene") {
    SceneConfig sc;
    sc.height = 16;
    sc.width = 16;
    sc.parcel_rows = 2;
    sc.parcel_cols = 2;
    sc.building_prob = 0.0;
    sc.land_value_min = sc.land_value_max = 50.0;
    sc.noise_sigma = 0.0;
    const Sample s = generate_scene(sc, "constant");
    auto cfg = tiny_config(Method::deterministic, 200);
    cfg.batch_size = 1;
    const DatasetSplit split{{s.id}, {s.id}, {}};
    const auto res = train(cfg, split, {s});
    const double first = res.log.epochs.front().val_mae;
    CHECK(*res.best.validation_metric <= 0.1 * first);
}

TEST_CASE("analytical training improves over epoch windows on linear data") {
    // The first chip channel is the oracle scaled to [0,1]; the rest is constant.
    auto data = small_dataset(24, 3);
    for (auto& s : data) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                s.chip.at(0, y, x) = std::round((*s.oracle)(y, x) / 450.0 * 255.0) / 255.0;
                s.chip.at(1, y, x) = 0.5;
                s.chip.at(2, y, x) = 0.5;
            }
        }
    }
    auto cfg = tiny_config(Method::analytical, 30);
    cfg.val_frac = 0.25;
    cfg.learning_rate = 1e-3;
    const auto res = train(cfg, split_of(data, cfg), data);
    double w[3] = {0, 0, 0};
    for (const auto& e : res.log.epochs) w[(e.epoch - 1) / 10] += e.val_mae / 10.0;
    CHECK(w[1] < w[0]);
    CHECK(w[2] < w[1]);
}

TEST_CASE("merged training evaluates on single parcels") {
    const auto data = small_dataset(10);
    auto cfg = tiny_config(Method::analytical, 2);
    cfg.merge.enabled = true;
    cfg.merge.density_cap = 1e9;
    const auto split = split_of(data, cfg);
    const auto res = train(cfg, split, data);
    const auto test = select_samples(data, split.test);
    const auto report = evaluate(res.best, test);
    CHECK(report.n_regions == static_cast<int>(all_labels(test).size()));
}

TEST_CASE("Poisson training needs count labels") {
    const auto data = small_dataset(10);
    const auto cfg = tiny_config(Method::poisson, 1);
    CHECK_THROWS_AS(train(cfg, split_of(data, cfg), data), ConfigError);

    SceneConfig sc;
    sc.height = 16;
    sc.width = 16;
    sc.parcel_rows = 2;
    sc.parcel_cols = 2;
    sc.integer_values = true;
    sc.land_value_min = 0;
    sc.land_value_max = 3;
    sc.building_value_min = 3;
    sc.building_value_max = 8;
    const auto counts = generate_dataset(sc, 10);
    const auto res = train(cfg, split_of(counts, cfg), counts);
    const auto report = evaluate(res.best, select_samples(counts, split_of(counts, cfg).test));
    CHECK_FALSE(report.p_within.has_value());
    CHECK(report.mean_log_prob.has_value());
}

TEST_CASE("divergence raises a numerical error") {
    const auto data = small_dataset(10);
    auto cfg = tiny_config(Method::analytical, 5);
    cfg.learning_rate = 1e200;
    cfg.grad_clip = 1e300;
    CHECK_THROWS_AS(train(cfg, split_of(data, cfg), data), NumericalError);
}

TEST_CASE("empty splits are configuration errors") {
    const auto data = small_dataset(4);
    const auto cfg = tiny_config(Method::analytical, 1);
    CHECK_THROWS_AS(train(cfg, DatasetSplit{{}, {data[0].id}, {}}, data), ConfigError);
    CHECK_THROWS_AS(train(cfg, DatasetSplit{{data[0].id}, {}, {}}, data), ConfigError);
}
