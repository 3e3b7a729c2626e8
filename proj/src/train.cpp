#include "disagg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "disagg/aggregate.hpp"
#include "disagg/objective.hpp"
#include "disagg/seed.hpp"

namespace disagg {

using nlohmann::json;

namespace {

// Stream tags keep the seeded draws of different purposes independent.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kMergeStream = 0x4d45524745ULL;
constexpr std::uint64_t kValMergeStream = 0x56414c4dULL;
constexpr std::uint64_t kFlipStream = 0x464c4950ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw ConfigError("unknown config field '" + where + it.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where = "") {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + where + key + "' has the wrong type");
    }
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train config field '" + field + "': " + why);
    };
    if (epochs < 0) fail("epochs", "must be >= 0");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0,1)");
    if (!(adam_eps > 0.0)) fail("adam_eps", "must be positive");
    if (!(label_scale > 0.0) || !std::isfinite(label_scale)) fail("label_scale", "must be positive");
    if (!(lambda_reg >= 0.0)) fail("lambda_reg", "must be >= 0");
    if (!(merge.density_cap > 0.0)) fail("merge.density_cap", "must be positive");
    if (!(val_frac >= 0.0) || !(test_frac >= 0.0) || !(val_frac + test_frac < 1.0)) {
        fail("val_frac", "val_frac + test_frac must lie in [0,1)");
    }
    if (filter.max_density && !(*filter.max_density > 0.0)) fail("filter.max_density", "must be positive");
    if (!(grad_clip > 0.0)) fail("grad_clip", "must be positive");
    if (uniform_loss != "nll" && uniform_loss != "mse") fail("uniform_loss", "must be 'nll' or 'mse'");
    if (threads < 0) fail("threads", "must be >= 0");
    predictor.validate();
    if (predictor.head != head_for(method)) fail("predictor.head", "does not match method '" + to_string(method) + "'");
}

json train_config_to_json(const TrainConfig& cfg) {
    return json{{"epochs", cfg.epochs},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},
                {"method", to_string(cfg.method)},
                {"label_scale", cfg.label_scale},
                {"lambda_reg", cfg.lambda_reg},
                {"merge", {{"enabled", cfg.merge.enabled}, {"per_epoch", cfg.merge.per_epoch}, {"density_cap", cfg.merge.density_cap}}},
                {"augment_flips", cfg.augment_flips},
                {"normalization", "unit_scale"},
                {"seed", cfg.seed},
                {"val_frac", cfg.val_frac},
                {"test_frac", cfg.test_frac},
                {"filter",
                 {{"drop_zero_value", cfg.filter.drop_zero_value},
                  {"max_density", cfg.filter.max_density ? json(*cfg.filter.max_density) : json(nullptr)}}},
                {"predictor", predictor_config_to_json(cfg.predictor)},
                {"grad_clip", cfg.grad_clip},
                {"uniform_loss", cfg.uniform_loss},
                {"threads", cfg.threads}};
}

TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    reject_unknown(j,
                   {"epochs", "learning_rate", "batch_size", "beta1", "beta2", "adam_eps", "method", "label_scale",
                    "lambda_reg", "merge", "augment_flips", "normalization", "seed", "val_frac", "test_frac", "filter",
                    "predictor", "grad_clip", "uniform_loss", "threads"},
                   "");
    TrainConfig cfg;
    read_field(j, "epochs", cfg.epochs);
    read_field(j, "learning_rate", cfg.learning_rate);
    read_field(j, "batch_size", cfg.batch_size);
    read_field(j, "beta1", cfg.beta1);
    read_field(j, "beta2", cfg.beta2);
    read_field(j, "adam_eps", cfg.adam_eps);
    if (j.contains("method")) {
        std::string m;
        read_field(j, "method", m);
        try {
            cfg.method = method_from_string(m);
        } catch (const ConfigError&) {
            throw ConfigError("config field 'method': unknown method '" + m + "'");
        }
    }
    read_field(j, "label_scale", cfg.label_scale);
    read_field(j, "lambda_reg", cfg.lambda_reg);
    if (j.contains("merge")) {
        const json& m = j.at("merge");
        if (!m.is_object()) throw ConfigError("config field 'merge' must be an object");
        reject_unknown(m, {"enabled", "per_epoch", "density_cap"}, "merge.");
        read_field(m, "enabled", cfg.merge.enabled, "merge.");
        read_field(m, "per_epoch", cfg.merge.per_epoch, "merge.");
        read_field(m, "density_cap", cfg.merge.density_cap, "merge.");
    }
    read_field(j, "augment_flips", cfg.augment_flips);
    if (j.contains("normalization") && j.at("normalization") != "unit_scale") {
        throw ConfigError("config field 'normalization': only 'unit_scale' is supported");
    }
    read_field(j, "seed", cfg.seed);
    read_field(j, "val_frac", cfg.val_frac);
    read_field(j, "test_frac", cfg.test_frac);
    if (j.contains("filter")) {
        const json& f = j.at("filter");
        if (!f.is_object()) throw ConfigError("config field 'filter' must be an object");
        reject_unknown(f, {"drop_zero_value", "max_density"}, "filter.");
        read_field(f, "drop_zero_value", cfg.filter.drop_zero_value, "filter.");
        if (f.contains("max_density") && !f.at("max_density").is_null()) {
            double d = 0.0;
            read_field(f, "max_density", d, "filter.");
            cfg.filter.max_density = d;
        }
    }
    if (j.contains("predictor")) {
        const json& p = j.at("predictor");
        if (!p.is_object()) throw ConfigError("config field 'predictor' must be an object");
        reject_unknown(p, {"channels_in", "widths", "downsample_levels", "out_channels", "seed", "head"}, "predictor.");
        json with_head = p;
        if (!with_head.contains("head")) with_head["head"] = to_string(head_for(cfg.method));
        cfg.predictor = predictor_config_from_json(with_head);
    } else {
        cfg.predictor.head = head_for(cfg.method);
    }
    read_field(j, "grad_clip", cfg.grad_clip);
    read_field(j, "uniform_loss", cfg.uniform_loss);
    read_field(j, "threads", cfg.threads);
    cfg.validate();
    return cfg;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamHyper& hyper) {
    if (grads.blocks.size() != params.blocks.size()) throw ContractError("adam_step: gradient blocks differ from parameters");
    if (state.m.empty() && state.v.empty()) {
        for (const auto& b : params.blocks) {
            state.m.emplace_back(b.values.size(), 0.0);
            state.v.emplace_back(b.values.size(), 0.0);
        }
    }
    if (state.m.size() != params.blocks.size() || state.v.size() != params.blocks.size()) {
        throw ContractError("adam_step: optimizer state does not match parameters");
    }
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        if (grads.blocks[b].values.size() != params.blocks[b].values.size() ||
            state.m[b].size() != params.blocks[b].values.size() || state.v[b].size() != params.blocks[b].values.size()) {
            throw ContractError("adam_step: shape mismatch in block '" + params.blocks[b].name + "'");
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        auto& theta = params.blocks[b].values;
        const auto& g = grads.blocks[b].values;
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

void TrainLog::write_csv(std::ostream& out) const {
    out << "epoch,train_loss,val_mae\n";
    char buf[96];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_mae);
        out << buf;
    }
}

SampleGradient sample_gradient(const TrainConfig& cfg, const Parameters& params, const Sample& s,
                               std::uint64_t noise_seed) {
    const double scale = cfg.effective_label_scale();
    std::vector<double> labels(s.labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = s.labels[i] / scale;
    const HeadKind kind = head_for(cfg.method);
    const auto inc = build_incidence(s.regions);
    const int H = s.chip.height;
    const int W = s.chip.width;

    auto fwd = forward(cfg.predictor, params, s.chip);
    const HeadOutput head = apply_head(fwd.raw_mu, fwd.raw_s, kind);

    LossResult loss;
    switch (cfg.method) {
        case Method::analytical:
            loss = gaussian_nll(labels, aggregate_gaussian(inc, head.first, head.second), inc, H, W);
            break;
        case Method::sampling:
            loss = sampling_objective(labels, head.first, head.second, inc, cfg.lambda_reg,
                                      standard_normal_map(noise_seed, hash_id(s.id), H, W));
            break;
        case Method::deterministic:
            loss = mse_loss(labels, aggregate_sum(inc, head.first), inc, H, W);
            break;
        case Method::uniform: {
            Map targets = uniform_label_targets(s);
            for (auto& v : targets.data) v /= scale;
            const auto mask = inc.covered();
            loss = cfg.uniform_loss == "mse" ? pixel_mse(targets, head.first, mask)
                                             : pixel_gaussian_nll(targets, head.first, head.second, mask);
            break;
        }
        case Method::poisson:
            loss = poisson_nll(labels, aggregate_poisson(inc, head.first), inc, H, W);
            break;
    }
    if (loss.d_second.size() == 0) loss.d_second = Map(H, W);
    const RawGrads raw = head_backward(fwd.raw_mu, fwd.raw_s, kind, loss.d_first, loss.d_second);
    return {loss.loss, backward(cfg.predictor, params, fwd.cache, raw.d_raw_mu, raw.d_raw_s)};
}

double validation_mae(const Checkpoint& ckpt, const std::vector<Sample>& samples) {
    double err = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        const PixelPrediction pred = predict_pixels(ckpt, s.chip);
        const auto inc = build_incidence(s.regions);
        const auto mu_star = aggregate_sum(inc, pred.mu);
        for (std::size_t i = 0; i < mu_star.size(); ++i) err += std::abs(s.labels[i] - mu_star[i]);
        n += mu_star.size();
    }
    if (n == 0) throw ConfigError("validation set has no regions");
    return err / static_cast<double>(n);
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("DISAGG_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Computes every sample gradient of a batch; results land in batch order.
std::vector<SampleGradient> batch_gradients(const TrainConfig& cfg, const Parameters& params,
                                            const std::vector<const Sample*>& batch,
                                            const std::vector<std::uint64_t>& noise_seeds, int threads) {
    std::vector<SampleGradient> out(batch.size());
    const int workers = std::min<int>(threads, static_cast<int>(batch.size()));
    if (workers <= 1) {
        for (std::size_t k = 0; k < batch.size(); ++k) out[k] = sample_gradient(cfg, params, *batch[k], noise_seeds[k]);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t k = static_cast<std::size_t>(t); k < batch.size(); k += static_cast<std::size_t>(workers)) {
                    out[k] = sample_gradient(cfg, params, *batch[k], noise_seeds[k]);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

bool all_counts(const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
        for (double y : s.labels) {
            if (!(y >= 0.0) || y != std::floor(y)) return false;
        }
    }
    return true;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const std::vector<Sample>& samples) {
    cfg.validate();
    const std::vector<Sample> train_set = select_samples(samples, split.train);
    std::vector<Sample> val_set = select_samples(samples, split.validation);
    if (train_set.empty()) throw ConfigError("training split is empty");
    if (val_set.empty()) throw ConfigError("validation split is empty");
    if (cfg.method == Method::poisson && (!all_counts(train_set) || !all_counts(val_set))) {
        throw ConfigError("method 'poisson' requires nonnegative integer count labels");
    }
    if (cfg.merge.enabled) {
        for (auto& s : val_set) s = merge_regions(s, mix_seed(cfg.seed, kValMergeStream, hash_id(s.id)), cfg.merge.density_cap);
    }

    const int threads = resolve_threads(cfg.threads);
    const json run_config = train_config_to_json(cfg);
    Parameters params = init_params(cfg.predictor);

    auto snapshot = [&](int epoch) {
        Checkpoint ck;
        ck.config = cfg.predictor;
        ck.params = round_to_float(params);
        ck.method = cfg.method;
        ck.label_scale = cfg.effective_label_scale();
        ck.epoch = epoch;
        ck.run_config = run_config;
        ck.validation_metric = validation_mae(ck, val_set);
        return ck;
    };

    TrainResult result;
    result.best = snapshot(0);
    if (cfg.epochs == 0) return result;

    std::vector<Sample> base = train_set;
    if (cfg.merge.enabled && !cfg.merge.per_epoch) {
        for (auto& s : base) s = merge_regions(s, mix_seed(cfg.seed, kMergeStream, 0, hash_id(s.id)), cfg.merge.density_cap);
    }

    AdamState adam;
    const AdamHyper hyper{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
    bool have_best = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<Sample> epoch_samples;
        epoch_samples.reserve(base.size());
        for (const auto& s0 : base) {
            Sample s = s0;
            if (cfg.merge.enabled && cfg.merge.per_epoch) {
                s = merge_regions(s, mix_seed(cfg.seed, kMergeStream, epoch, hash_id(s.id)), cfg.merge.density_cap);
            }
            if (cfg.augment_flips) s = flip_augment(s, mix_seed(cfg.seed, kFlipStream, epoch, hash_id(s.id)));
            epoch_samples.push_back(std::move(s));
        }
        std::vector<std::size_t> order(epoch_samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, kShuffleStream, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Sample*> batch;
            std::vector<std::uint64_t> noise_seeds;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(&epoch_samples[order[k]]);
                noise_seeds.push_back(mix_seed(cfg.seed, kNoiseStream, epoch));
            }
            std::vector<SampleGradient> per_sample;
            try {
                per_sample = batch_gradients(cfg, params, batch, noise_seeds, threads);
            } catch (const DomainError& e) {
                // Labels were checked up front, so a domain failure here means the weights diverged.
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index) + ": " + e.what());
            }
            Parameters grads = params.zeros_like();
            double batch_loss = 0.0;
            for (const auto& sg : per_sample) {
                batch_loss += sg.loss;
                for (std::size_t b = 0; b < grads.blocks.size(); ++b) {
                    auto& dst = grads.blocks[b].values;
                    const auto& src = sg.grads.blocks[b].values;
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
            double norm2 = 0.0;
            for (const auto& b : grads.blocks) {
                for (double g : b.values) norm2 += g * g;
            }
            if (!std::isfinite(batch_loss) || !std::isfinite(norm2)) {
                throw NumericalError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            }
            const double norm = std::sqrt(norm2);
            if (norm > cfg.grad_clip) {
                const double f = cfg.grad_clip / norm;
                for (auto& b : grads.blocks) {
                    for (double& g : b.values) g *= f;
                }
            }
            adam_step(params, grads, adam, hyper);
            epoch_loss += batch_loss;
        }

        Checkpoint ck = snapshot(epoch);
        const double val = *ck.validation_metric;
        if (!std::isfinite(val)) throw NumericalError("non-finite validation MAE at epoch " + std::to_string(epoch));
        result.log.epochs.push_back({epoch, epoch_loss / static_cast<double>(epoch_samples.size()), val});
        if (!have_best || val < *result.best.validation_metric) {
            result.best = std::move(ck);
            have_best = true;
        }
    }
    return result;
}

}  // namespace disagg
