#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "disagg/predictor.hpp"

namespace disagg {

/// Training method; also decides which output head a checkpoint uses.
enum class Method { analytical, sampling, deterministic, uniform, poisson };

std::string to_string(Method m);
Method method_from_string(const std::string& name);
HeadKind head_for(Method m);

/// A trained (or freshly initialized) predictor plus what is needed to use it.
///
/// File layout: 8-byte magic "DSGCKPT1", little-endian uint32 header length, a JSON
/// header, then every parameter block as little-endian float32 in declaration order.
/// Parameters are rounded to float32 when the checkpoint is created, so in-memory
/// and on-disk checkpoints evaluate identically.
struct Checkpoint {
    PredictorConfig config;
    Parameters params;
    Method method = Method::analytical;
    double label_scale = 1000.0;
    int epoch = 0;
    std::optional<double> validation_metric;
    nlohmann::json run_config = nlohmann::json::object();

    bool operator==(const Checkpoint&) const = default;
};

/// Copies parameters, rounding each value to the nearest float32.
Parameters round_to_float(const Parameters& params);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json predictor_config_to_json(const PredictorConfig& cfg);
PredictorConfig predictor_config_from_json(const nlohmann::json& j);

}  // namespace disagg
