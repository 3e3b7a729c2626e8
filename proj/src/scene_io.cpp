#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "disagg/error.hpp"
#include "disagg/image_io.hpp"
#include "disagg/scene.hpp"

namespace disagg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw LoadError("failed writing '" + path.string() + "'");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_labels_csv(const fs::path& path, const std::vector<double>& labels) {
    std::string text = "region_id,value\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        text += std::to_string(i + 1) + "," + format_double(labels[i]) + "\n";
    }
    write_text(path, text);
}

std::vector<double> read_labels_csv(const fs::path& path, const std::string& id) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw LoadError("sample '" + id + "': empty label file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "region_id,value") throw LoadError("sample '" + id + "': label header must be 'region_id,value'");
    std::vector<std::pair<long, double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw LoadError("sample '" + id + "': malformed label row '" + line + "'");
        char* end = nullptr;
        const std::string region = line.substr(0, comma);
        const long rid = std::strtol(region.c_str(), &end, 10);
        if (end == region.c_str() || *end != '\0') throw LoadError("sample '" + id + "': bad region_id '" + region + "'");
        const std::string value = line.substr(comma + 1);
        const double v = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0') throw LoadError("sample '" + id + "': bad value '" + value + "'");
        rows.emplace_back(rid, v);
    }
    std::vector<double> labels(rows.size(), 0.0);
    std::vector<bool> seen(rows.size(), false);
    for (auto [rid, v] : rows) {
        if (rid < 1 || rid > static_cast<long>(rows.size()) || seen[static_cast<std::size_t>(rid - 1)]) {
            throw LoadError("sample '" + id + "': region ids must be 1..n without repeats");
        }
        seen[static_cast<std::size_t>(rid - 1)] = true;
        labels[static_cast<std::size_t>(rid - 1)] = v;
    }
    return labels;
}

Chip chip_from_png(const Rgb8Image& img) {
    Chip chip(img.height, img.width, 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                chip.at(c, y, x) = img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
            }
        }
    }
    return chip;
}

Rgb8Image chip_to_png(const Chip& chip) {
    if (chip.channels != 3) throw ShapeError("only 3-channel chips can be stored as RGB PNG");
    Rgb8Image img{chip.height, chip.width, std::vector<std::uint8_t>(chip.plane_size() * 3)};
    for (int y = 0; y < chip.height; ++y) {
        for (int x = 0; x < chip.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(chip.at(c, y, x), 0.0, 1.0);
                img.rgb[(static_cast<std::size_t>(y) * chip.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

}  // namespace

json scene_config_to_json(const SceneConfig& cfg) {
    return json{{"height", cfg.height},
                {"width", cfg.width},
                {"parcel_grid", {cfg.parcel_rows, cfg.parcel_cols}},
                {"building_prob", cfg.building_prob},
                {"land_value_range", {cfg.land_value_min, cfg.land_value_max}},
                {"building_value_range", {cfg.building_value_min, cfg.building_value_max}},
                {"building_size_range", {cfg.building_size_min, cfg.building_size_max}},
                {"noise_sigma", cfg.noise_sigma},
                {"integer_values", cfg.integer_values},
                {"seed", cfg.seed}};
}

SceneConfig scene_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("scene config must be a JSON object");
    SceneConfig cfg;
    auto pair = [&](const std::string& key, auto& a, auto& b) {
        const json& v = j.at(key);
        if (!v.is_array() || v.size() != 2) throw ConfigError("scene config field '" + key + "' must be a two-element array");
        a = v[0].get<std::decay_t<decltype(a)>>();
        b = v[1].get<std::decay_t<decltype(b)>>();
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "height") cfg.height = it->get<int>();
            else if (key == "width") cfg.width = it->get<int>();
            else if (key == "parcel_grid") pair(key, cfg.parcel_rows, cfg.parcel_cols);
            else if (key == "building_prob") cfg.building_prob = it->get<double>();
            else if (key == "land_value_range") pair(key, cfg.land_value_min, cfg.land_value_max);
            else if (key == "building_value_range") pair(key, cfg.building_value_min, cfg.building_value_max);
            else if (key == "building_size_range") pair(key, cfg.building_size_min, cfg.building_size_max);
            else if (key == "noise_sigma") cfg.noise_sigma = it->get<double>();
            else if (key == "integer_values") cfg.integer_values = it->get<bool>();
            else if (key == "seed") cfg.seed = it->get<std::uint64_t>();
            else throw ConfigError("unknown scene config field '" + key + "'");
        } catch (const json::exception&) {
            throw ConfigError("scene config field '" + key + "' has the wrong type");
        }
    }
    cfg.validate();
    return cfg;
}

Chip load_chip_png(const fs::path& path) { return chip_from_png(read_png_rgb8(path)); }

fs::path sidecar_path(const fs::path& map_path) {
    fs::path p = map_path;
    p.replace_extension(".json");
    return p;
}

void write_float_map(const fs::path& path, const Map& map) {
    std::vector<float> buf(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) buf[i] = static_cast<float>(map[i]);
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& f : buf) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = __builtin_bswap32(u);
            f = std::bit_cast<float>(u);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw LoadError("failed writing '" + path.string() + "'");
    write_text(sidecar_path(path), json{{"height", map.height}, {"width", map.width}}.dump() + "\n");
}

Map read_float_map(const fs::path& path) {
    const fs::path side = sidecar_path(path);
    if (!fs::exists(side)) throw LoadError("missing sidecar '" + side.string() + "'");
    json meta;
    try {
        meta = json::parse(read_text(side));
    } catch (const json::exception& e) {
        throw LoadError("bad sidecar '" + side.string() + "': " + e.what());
    }
    if (!meta.contains("height") || !meta.contains("width")) throw LoadError("sidecar '" + side.string() + "' lacks height/width");
    const int h = meta["height"].get<int>();
    const int w = meta["width"].get<int>();
    if (h <= 0 || w <= 0) throw LoadError("sidecar '" + side.string() + "' has nonpositive dimensions");
    const std::string bytes = read_text(path);
    Map map(h, w);
    if (bytes.size() != map.size() * sizeof(float)) {
        throw LoadError("'" + path.string() + "' size does not match sidecar dimensions");
    }
    for (std::size_t i = 0; i < map.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, bytes.data() + i * 4, 4);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        map[i] = static_cast<double>(std::bit_cast<float>(u));
    }
    return map;
}

void save_dataset(const fs::path& dir, const std::vector<Sample>& samples) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw LoadError("cannot create directory '" + dir.string() + "'");
    json manifest = json::array();
    for (const auto& s : samples) {
        validate_sample(s);
        json entry{{"id", s.id},
                   {"chip", s.id + "_chip.png"},
                   {"mask", s.id + "_mask.png"},
                   {"labels", s.id + "_labels.csv"}};
        write_png_rgb8(dir / (s.id + "_chip.png"), chip_to_png(s.chip));
        Grid<std::uint16_t> mask(s.regions.mask.height, s.regions.mask.width);
        if (s.regions.region_count > 65535) throw ShapeError("sample '" + s.id + "': more than 65535 regions");
        for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = static_cast<std::uint16_t>(s.regions.mask[p]);
        write_png_gray16(dir / (s.id + "_mask.png"), mask);
        write_labels_csv(dir / (s.id + "_labels.csv"), s.labels);
        if (s.oracle) {
            entry["oracle"] = s.id + "_oracle.f32";
            write_float_map(dir / (s.id + "_oracle.f32"), *s.oracle);
        }
        manifest.push_back(std::move(entry));
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<Sample> load_dataset(const fs::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
        throw LoadError("bad manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (!manifest.is_array()) throw LoadError("manifest must be a JSON array");
    const fs::path base = manifest_path.parent_path();
    std::vector<Sample> samples;
    samples.reserve(manifest.size());
    for (const auto& entry : manifest) {
        const std::string id = entry.value("id", std::string());
        if (id.empty()) throw LoadError("manifest entry without id");
        for (const char* key : {"chip", "mask", "labels"}) {
            if (!entry.contains(key) || !entry[key].is_string()) {
                throw LoadError("sample '" + id + "': manifest entry lacks '" + key + "'");
            }
        }
        try {
            Sample s;
            s.id = id;
            s.chip = chip_from_png(read_png_rgb8(base / entry["chip"].get<std::string>()));
            const auto mask16 = read_png_gray16(base / entry["mask"].get<std::string>());
            if (mask16.height != s.chip.height || mask16.width != s.chip.width) {
                throw LoadError("shape mismatch between chip and mask");
            }
            s.regions.mask = Grid<std::int32_t>(mask16.height, mask16.width);
            int max_index = 0;
            for (std::size_t p = 0; p < mask16.size(); ++p) {
                s.regions.mask[p] = mask16[p];
                max_index = std::max<int>(max_index, mask16[p]);
            }
            s.regions.region_count = max_index;
            s.labels = read_labels_csv(base / entry["labels"].get<std::string>(), id);
            if (s.labels.size() != static_cast<std::size_t>(max_index)) {
                throw LoadError("label count mismatch (mask has " + std::to_string(max_index) + " regions, labels " +
                                std::to_string(s.labels.size()) + ")");
            }
            if (entry.contains("oracle") && entry["oracle"].is_string()) {
                s.oracle = read_float_map(base / entry["oracle"].get<std::string>());
            }
            validate_sample(s);
            samples.push_back(std::move(s));
        } catch (const LoadError& e) {
            const std::string msg = e.what();
            if (msg.rfind("sample '", 0) == 0) throw;
            throw LoadError("sample '" + id + "': " + msg);
        } catch (const std::runtime_error& e) {
            const std::string msg = e.what();
            if (msg.rfind("sample '", 0) == 0) throw LoadError(msg);
            throw LoadError("sample '" + id + "': " + msg);
        }
    }
    return samples;
}

}  // namespace disagg
