#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disagg/grid.hpp"
#include "disagg/scene.hpp"

namespace disagg {

enum class HeadKind { gaussian, deterministic, poisson };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

/// Encoder-decoder layout.
///
/// `widths` lists the 3×3 convolution widths from the first encoder layer through the
/// bottleneck to the last decoder layer, so it has 2·downsample_levels + 1 entries and
/// must be symmetric (decoder outputs are added to the matching encoder activations).
/// Each encoder level ends in a 2×2 average pool, each decoder level starts with a
/// nearest-neighbour upsample. A final 1×1 convolution produces the two raw channels.
/// Empty `widths` (with zero levels) leaves only the 1×1 convolution: a per-pixel
/// linear model of the input channels.
struct PredictorConfig {
    int channels_in = 3;
    std::vector<int> widths{16, 32, 16};
    int downsample_levels = 1;
    int out_channels = 2;
    std::uint64_t seed = 0;
    HeadKind head = HeadKind::gaussian;

    void validate() const;
    bool operator==(const PredictorConfig&) const = default;
};

struct ParamBlock {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;

    bool operator==(const ParamBlock&) const = default;
};

/// Ordered kernels and biases, in declaration order.
struct Parameters {
    std::vector<ParamBlock> blocks;

    std::size_t count() const;
    Parameters zeros_like() const;
    /// Bitwise fingerprint of every value, used to detect stale caches.
    std::uint64_t fingerprint() const;
    ParamBlock& block(const std::string& name);
    const ParamBlock& block(const std::string& name) const;

    bool operator==(const Parameters&) const = default;
};

/// Activations kept by forward() for backward().
struct ForwardCache {
    int height = 0;
    int width = 0;
    std::uint64_t params_fingerprint = 0;
    std::vector<std::vector<double>> layer_inputs;  // one per 3×3 layer, then the 1×1 head input
    std::vector<std::vector<double>> pre_activations;
};

struct ForwardResult {
    Map raw_mu;
    Map raw_s;
    ForwardCache cache;
};

/// Kernels ~ U(-b, b) with b = sqrt(2 / fan_in); zero biases except the
/// variance-channel output bias, set to ln(e - 1) so softplus(bias) = 1.
Parameters init_params(const PredictorConfig& cfg);

ForwardResult forward(const PredictorConfig& cfg, const Parameters& params, const Chip& chip);

/// Gradient of sum(d_raw_mu * raw_mu + d_raw_s * raw_s) with respect to every parameter.
Parameters backward(const PredictorConfig& cfg, const Parameters& params, const ForwardCache& cache,
                    const Map& d_raw_mu, const Map& d_raw_s);

// ---- output heads ----

/// Floor added after softplus so variances and Poisson rates stay strictly positive.
inline constexpr double kMinPositive = 1e-6;

double softplus(double x);
double sigmoid(double x);

/// gaussian: (mu, variance); deterministic: (value, empty); poisson: (rate, empty).
struct HeadOutput {
    Map first;
    Map second;
};

HeadOutput apply_head(const Map& raw_mu, const Map& raw_s, HeadKind kind);

struct RawGrads {
    Map d_raw_mu;
    Map d_raw_s;
};

RawGrads head_backward(const Map& raw_mu, const Map& raw_s, HeadKind kind, const Map& d_first, const Map& d_second);

}  // namespace disagg
