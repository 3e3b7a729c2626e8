#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "disagg/grid.hpp"
#include "disagg/image_io.hpp"
#include "disagg/scene.hpp"

namespace disagg {

enum class Ramp { viridis, gray };

std::string to_string(Ramp r);
Ramp ramp_from_string(const std::string& name);

struct RenderSpec {
    Ramp ramp = Ramp::viridis;
    std::optional<double> vmin;  // auto: 2nd percentile
    std::optional<double> vmax;  // auto: 98th percentile
    bool overlay_regions = false;

    void validate() const;
};

/// Unknown fields are rejected.
RenderSpec render_spec_from_json(const nlohmann::json& j);

/// Color of t in [0,1]; t is clamped.
std::array<std::uint8_t, 3> ramp_color(Ramp ramp, double t);

/// Linear-interpolated percentile (p in [0,100]) of the finite values of a map.
double percentile(const Map& map, double p);

/// Heatmap of a map. `regions` is required when the spec overlays boundaries.
Rgb8Image render_map(const Map& map, const RenderSpec& spec, const RegionSet* regions = nullptr);

}  // namespace disagg
