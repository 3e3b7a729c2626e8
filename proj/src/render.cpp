#include "disagg/render.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "disagg/error.hpp"

namespace disagg {

namespace {

// Samples of the viridis ramp at t = 0, 1/8, ..., 1.
constexpr std::array<std::array<double, 3>, 9> kViridis{{
    {0.267004, 0.004874, 0.329415},
    {0.278826, 0.175490, 0.483397},
    {0.229739, 0.322361, 0.545706},
    {0.172719, 0.448791, 0.557885},
    {0.127568, 0.566949, 0.550556},
    {0.157851, 0.683765, 0.501686},
    {0.369214, 0.788888, 0.382914},
    {0.678489, 0.863742, 0.189503},
    {0.993248, 0.906157, 0.143936},
}};

constexpr std::array<std::uint8_t, 3> kOutline{255, 0, 255};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::string to_string(Ramp r) { return r == Ramp::gray ? "gray" : "viridis"; }

Ramp ramp_from_string(const std::string& name) {
    if (name == "viridis") return Ramp::viridis;
    if (name == "gray" || name == "grey") return Ramp::gray;
    throw ConfigError("render spec field 'ramp': unknown ramp '" + name + "'");
}

void RenderSpec::validate() const {
    if (vmin && !std::isfinite(*vmin)) throw ConfigError("render spec field 'vmin' must be finite");
    if (vmax && !std::isfinite(*vmax)) throw ConfigError("render spec field 'vmax' must be finite");
    if (vmin && vmax && !(*vmin < *vmax)) throw ConfigError("render spec: vmin must be below vmax");
}

RenderSpec render_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("render spec must be a JSON object");
    static const std::set<std::string> known{"ramp", "vmin", "vmax", "overlay_regions"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw ConfigError("unknown render spec field '" + it.key() + "'");
    }
    RenderSpec spec;
    try {
        if (j.contains("ramp")) spec.ramp = ramp_from_string(j.at("ramp").get<std::string>());
        if (j.contains("vmin") && !j.at("vmin").is_null()) spec.vmin = j.at("vmin").get<double>();
        if (j.contains("vmax") && !j.at("vmax").is_null()) spec.vmax = j.at("vmax").get<double>();
        if (j.contains("overlay_regions")) spec.overlay_regions = j.at("overlay_regions").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("render spec has a field of the wrong type: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::array<std::uint8_t, 3> ramp_color(Ramp ramp, double t) {
    t = std::isfinite(t) ? std::clamp(t, 0.0, 1.0) : 0.0;
    if (ramp == Ramp::gray) {
        const auto g = to_byte(t);
        return {g, g, g};
    }
    const double pos = t * (kViridis.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), kViridis.size() - 2);
    const double f = pos - static_cast<double>(i);
    std::array<std::uint8_t, 3> out{};
    for (int c = 0; c < 3; ++c) out[c] = to_byte(kViridis[i][c] * (1.0 - f) + kViridis[i + 1][c] * f);
    return out;
}

double percentile(const Map& map, double p) {
    std::vector<double> v;
    v.reserve(map.data.size());
    for (double x : map.data) {
        if (std::isfinite(x)) v.push_back(x);
    }
    if (v.empty()) throw DomainError("percentile of a map without finite values");
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

Rgb8Image render_map(const Map& map, const RenderSpec& spec, const RegionSet* regions) {
    spec.validate();
    if (map.height <= 0 || map.width <= 0) throw ShapeError("render: empty map");
    if (spec.overlay_regions) {
        if (!regions) throw ConfigError("render: overlay_regions needs a region mask");
        require_same_shape(map, regions->mask, "render overlay mask");
    }
    const double lo = spec.vmin ? *spec.vmin : percentile(map, 2.0);
    const double hi = spec.vmax ? *spec.vmax : percentile(map, 98.0);
    const double range = hi - lo;

    Rgb8Image img{map.height, map.width, std::vector<std::uint8_t>(map.data.size() * 3)};
    for (std::size_t i = 0; i < map.data.size(); ++i) {
        const double t = range > 0.0 ? (map.data[i] - lo) / range : 0.5;
        const auto c = ramp_color(spec.ramp, t);
        std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    if (spec.overlay_regions) {
        const auto& m = regions->mask;
        for (int y = 0; y < m.height; ++y) {
            for (int x = 0; x < m.width; ++x) {
                const int id = m(y, x);
                const bool edge = (x + 1 < m.width && m(y, x + 1) != id) || (y + 1 < m.height && m(y + 1, x) != id);
                if (!edge) continue;
                const std::size_t k = 3 * (static_cast<std::size_t>(y) * m.width + x);
                std::copy(kOutline.begin(), kOutline.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(k));
            }
        }
    }
    return img;
}

}  // namespace disagg
