#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "disagg/checkpoint.hpp"
#include "disagg/eval.hpp"
#include "disagg/predictor.hpp"
#include "disagg/scene.hpp"

namespace disagg {

struct MergeConfig {
    bool enabled = false;
    bool per_epoch = true;
    double density_cap = 1000.0;
};

struct TrainConfig {
    int epochs = 300;
    double learning_rate = 1e-3;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Method method = Method::analytical;
    double label_scale = 1000.0;
    /// Entropy weight of the sampling objective in scaled units (1e7 for raw dollars / 1000^2).
    double lambda_reg = 10.0;
    MergeConfig merge;
    bool augment_flips = false;
    std::uint64_t seed = 0;
    double val_frac = 0.1;
    double test_frac = 0.1;
    FilterRules filter;
    PredictorConfig predictor;
    double grad_clip = 1e3;
    /// "nll" or "mse": pixel-level loss of the uniform-value baseline.
    std::string uniform_loss = "nll";
    /// Worker threads per batch; 0 reads DISAGG_THREADS, else all logical cores.
    int threads = 0;

    void validate() const;
    /// Label scale actually used: Poisson models train on raw counts.
    double effective_label_scale() const { return method == Method::poisson ? 1.0 : label_scale; }
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update. An empty state is initialized to zero moments.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamHyper& hyper);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;  // mean per-sample loss
    double val_mae = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    /// CSV `epoch,train_loss,val_mae`.
    void write_csv(std::ostream& out) const;
};

struct TrainResult {
    Checkpoint best;
    TrainLog log;
};

/// Loss of one sample in scaled units and its parameter gradient.
struct SampleGradient {
    double loss = 0.0;
    Parameters grads;
};

/// One training sample through forward, head, aggregation and loss, and back.
/// `noise_seed` drives the sampling objective's noise.
SampleGradient sample_gradient(const TrainConfig& cfg, const Parameters& params, const Sample& s,
                               std::uint64_t noise_seed);

/// Mean absolute parcel error in raw currency, using aggregated means.
double validation_mae(const Checkpoint& ckpt, const std::vector<Sample>& samples);

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const std::vector<Sample>& samples);

/// Worker count from a config value, DISAGG_THREADS, or the hardware.
int resolve_threads(int requested);

}  // namespace disagg
