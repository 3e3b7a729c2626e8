#include "disagg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace disagg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'S', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::analytical: return "analytical";
        case Method::sampling: return "sampling";
        case Method::deterministic: return "deterministic";
        case Method::uniform: return "uniform";
        case Method::poisson: return "poisson";
    }
    return "analytical";
}

Method method_from_string(const std::string& name) {
    if (name == "analytical") return Method::analytical;
    if (name == "sampling") return Method::sampling;
    if (name == "deterministic") return Method::deterministic;
    if (name == "uniform") return Method::uniform;
    if (name == "poisson") return Method::poisson;
    throw ConfigError("unknown method '" + name + "'");
}

HeadKind head_for(Method m) {
    switch (m) {
        case Method::deterministic: return HeadKind::deterministic;
        case Method::poisson: return HeadKind::poisson;
        default: return HeadKind::gaussian;
    }
}

json predictor_config_to_json(const PredictorConfig& cfg) {
    return json{{"channels_in", cfg.channels_in},
                {"widths", cfg.widths},
                {"downsample_levels", cfg.downsample_levels},
                {"out_channels", cfg.out_channels},
                {"seed", cfg.seed},
                {"head", to_string(cfg.head)}};
}

PredictorConfig predictor_config_from_json(const json& j) {
    PredictorConfig cfg;
    try {
        if (j.contains("channels_in")) cfg.channels_in = j.at("channels_in").get<int>();
        if (j.contains("widths")) cfg.widths = j.at("widths").get<std::vector<int>>();
        if (j.contains("downsample_levels")) cfg.downsample_levels = j.at("downsample_levels").get<int>();
        if (j.contains("out_channels")) cfg.out_channels = j.at("out_channels").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("head")) cfg.head = head_kind_from_string(j.at("head").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("predictor config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Parameters round_to_float(const Parameters& params) {
    Parameters out = params;
    for (auto& b : out.blocks) {
        for (auto& v : b.values) v = static_cast<double>(static_cast<float>(v));
    }
    return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    json blocks = json::array();
    for (const auto& b : ckpt.params.blocks) blocks.push_back(json{{"name", b.name}, {"shape", b.shape}});
    json header{{"format_version", kFormatVersion},
                {"config", predictor_config_to_json(ckpt.config)},
                {"method", to_string(ckpt.method)},
                {"label_scale", ckpt.label_scale},
                {"epoch", ckpt.epoch},
                {"validation_metric", ckpt.validation_metric ? json(*ckpt.validation_metric) : json(nullptr)},
                {"run_config", ckpt.run_config},
                {"blocks", blocks}};
    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto& b : ckpt.params.blocks) {
        for (double v : b.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw LoadError("not a checkpoint file (bad magic)");
    }
    const std::uint32_t header_len = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) throw LoadError("truncated checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(12, header_len));
    } catch (const json::exception& e) {
        throw LoadError(std::string("bad checkpoint header: ") + e.what());
    }
    if (header.value("format_version", 0) != kFormatVersion) throw LoadError("unsupported checkpoint version");

    Checkpoint ckpt;
    try {
        ckpt.config = predictor_config_from_json(header.at("config"));
        ckpt.method = method_from_string(header.at("method").get<std::string>());
        ckpt.label_scale = header.at("label_scale").get<double>();
        ckpt.epoch = header.at("epoch").get<int>();
        if (!header.at("validation_metric").is_null()) ckpt.validation_metric = header["validation_metric"].get<double>();
        ckpt.run_config = header.at("run_config");
        std::size_t pos = 12 + header_len;
        for (const auto& jb : header.at("blocks")) {
            ParamBlock b;
            b.name = jb.at("name").get<std::string>();
            b.shape = jb.at("shape").get<std::vector<int>>();
            std::size_t n = 1;
            for (int d : b.shape) n *= static_cast<std::size_t>(d);
            if (bytes.size() < pos + 4 * n) throw LoadError("truncated checkpoint parameters");
            b.values.resize(n);
            for (std::size_t i = 0; i < n; ++i, pos += 4) b.values[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos)));
            ckpt.params.blocks.push_back(std::move(b));
        }
        if (pos != bytes.size()) throw LoadError("trailing bytes after checkpoint parameters");
    } catch (const json::exception& e) {
        throw LoadError(std::string("bad checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw LoadError(std::string("bad checkpoint header: ") + e.what());
    }
    if (head_for(ckpt.method) != ckpt.config.head) throw LoadError("checkpoint method and head disagree");
    // Validates block shapes against the config.
    const Parameters expected = init_params(ckpt.config);
    if (expected.blocks.size() != ckpt.params.blocks.size()) throw LoadError("checkpoint parameters do not match its config");
    for (std::size_t i = 0; i < expected.blocks.size(); ++i) {
        if (expected.blocks[i].name != ckpt.params.blocks[i].name || expected.blocks[i].shape != ckpt.params.blocks[i].shape) {
            throw LoadError("checkpoint block '" + ckpt.params.blocks[i].name + "' does not match its config");
        }
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write checkpoint '" + path.string() + "'");
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace disagg
