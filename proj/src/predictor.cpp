#include "disagg/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "disagg/seed.hpp"

namespace disagg {

std::string to_string(HeadKind kind) {
    switch (kind) {
        case HeadKind::gaussian: return "gaussian";
        case HeadKind::deterministic: return "deterministic";
        case HeadKind::poisson: return "poisson";
    }
    return "gaussian";
}

HeadKind head_kind_from_string(const std::string& name) {
    if (name == "gaussian") return HeadKind::gaussian;
    if (name == "deterministic") return HeadKind::deterministic;
    if (name == "poisson") return HeadKind::poisson;
    throw ConfigError("unknown head '" + name + "'");
}

void PredictorConfig::validate() const {
    if (channels_in < 1) throw ConfigError("predictor field 'channels_in' must be >= 1");
    if (out_channels != 2) throw ConfigError("predictor field 'out_channels' must be 2");
    if (downsample_levels < 0) throw ConfigError("predictor field 'downsample_levels' must be >= 0");
    if (widths.empty()) {
        if (downsample_levels != 0) throw ConfigError("predictor field 'widths' is empty but downsample_levels > 0");
        return;
    }
    if (widths.size() != static_cast<std::size_t>(2 * downsample_levels + 1)) {
        throw ConfigError("predictor field 'widths' must have 2*downsample_levels+1 entries");
    }
    for (std::size_t j = 0; j < widths.size(); ++j) {
        if (widths[j] < 1) throw ConfigError("predictor field 'widths' entries must be >= 1");
        if (widths[j] != widths[widths.size() - 1 - j]) throw ConfigError("predictor field 'widths' must be symmetric");
    }
}

std::size_t Parameters::count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.values.size();
    return n;
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    for (auto& b : z.blocks) std::fill(b.values.begin(), b.values.end(), 0.0);
    return z;
}

std::uint64_t Parameters::fingerprint() const {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (const auto& b : blocks) {
        h = mix_seed(h, b.values.size());
        for (double v : b.values) h = mix_seed(h, std::bit_cast<std::uint64_t>(v));
    }
    return h;
}

ParamBlock& Parameters::block(const std::string& name) {
    for (auto& b : blocks) {
        if (b.name == name) return b;
    }
    throw ContractError("no parameter block '" + name + "'");
}

const ParamBlock& Parameters::block(const std::string& name) const {
    return const_cast<Parameters*>(this)->block(name);
}

namespace {

struct Layer {
    int in_channels;
    int out_channels;
    int kernel;
    std::size_t weight_block;  // bias block follows
};

std::vector<Layer> layout(const PredictorConfig& cfg) {
    std::vector<Layer> layers;
    int in = cfg.channels_in;
    for (std::size_t j = 0; j < cfg.widths.size(); ++j) {
        layers.push_back({in, cfg.widths[j], 3, 2 * j});
        in = cfg.widths[j];
    }
    layers.push_back({in, cfg.out_channels, 1, 2 * cfg.widths.size()});
    return layers;
}

void check_params(const PredictorConfig& cfg, const Parameters& params) {
    const auto layers = layout(cfg);
    if (params.blocks.size() != 2 * layers.size()) throw ContractError("parameters do not match predictor config");
    for (const auto& l : layers) {
        const auto& w = params.blocks[l.weight_block];
        const auto& b = params.blocks[l.weight_block + 1];
        if (w.values.size() != static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel ||
            b.values.size() != static_cast<std::size_t>(l.out_channels)) {
            throw ContractError("parameter block '" + w.name + "' has the wrong size");
        }
    }
}

// Planar (C×H×W) convolution with zero padding kernel/2; out is overwritten.
void conv_forward(const double* in, int cin, int h, int w, const double* weight, const double* bias, int cout, int k,
                  double* out) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int oc = 0; oc < cout; ++oc) {
        double* o = out + plane * oc;
        std::fill(o, o + plane, bias[oc]);
        for (int ic = 0; ic < cin; ++ic) {
            const double* src = in + plane * ic;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    const double wt = weight[((static_cast<std::size_t>(oc) * cin + ic) * k + ky) * k + kx];
                    if (wt == 0.0) continue;
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + static_cast<std::size_t>(y) * w;
                        const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wt * srow[x];
                    }
                }
            }
        }
    }
}

// Accumulates weight/bias gradients; writes the input gradient when d_in is non-null.
void conv_backward(const double* in, int cin, int h, int w, const double* weight, int cout, int k, const double* d_out,
                   double* d_weight, double* d_bias, double* d_in) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (d_in) std::fill(d_in, d_in + plane * cin, 0.0);
    for (int oc = 0; oc < cout; ++oc) {
        const double* g = d_out + plane * oc;
        double bsum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) bsum += g[p];
        d_bias[oc] += bsum;
        for (int ic = 0; ic < cin; ++ic) {
            const double* src = in + plane * ic;
            double* dsrc = d_in ? d_in + plane * ic : nullptr;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    const std::size_t widx = ((static_cast<std::size_t>(oc) * cin + ic) * k + ky) * k + kx;
                    const double wt = weight[widx];
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = g + static_cast<std::size_t>(y) * w;
                        const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
                        if (dsrc) {
                            double* drow = dsrc + static_cast<std::size_t>(y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += wt * grow[x];
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

std::vector<double> avg_pool2(const std::vector<double>& in, int c, int h, int w) {
    const int ho = h / 2;
    const int wo = w / 2;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = in.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                const double* s0 = src + static_cast<std::size_t>(2 * y) * w + 2 * x;
                dst[static_cast<std::size_t>(y) * wo + x] = 0.25 * (s0[0] + s0[1] + s0[w] + s0[w + 1]);
            }
        }
    }
    return out;
}

// Gradient of avg_pool2 with respect to its (h×w) input.
std::vector<double> avg_pool2_backward(const std::vector<double>& d_out, int c, int h, int w) {
    const int ho = h / 2;
    const int wo = w / 2;
    std::vector<double> d_in(static_cast<std::size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch) {
        const double* g = d_out.data() + static_cast<std::size_t>(ch) * ho * wo;
        double* dst = d_in.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) dst[static_cast<std::size_t>(y) * w + x] = 0.25 * g[static_cast<std::size_t>(y / 2) * wo + x / 2];
        }
    }
    return d_in;
}

// Nearest-neighbour 2× upsample of a (h×w) input.
std::vector<double> upsample2(const std::vector<double>& in, int c, int h, int w) {
    const int ho = 2 * h;
    const int wo = 2 * w;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = in.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) dst[static_cast<std::size_t>(y) * wo + x] = src[static_cast<std::size_t>(y / 2) * w + x / 2];
        }
    }
    return out;
}

// Gradient of upsample2 with respect to its (h×w) input.
std::vector<double> upsample2_backward(const std::vector<double>& d_out, int c, int h, int w) {
    const int wo = 2 * w;
    std::vector<double> d_in(static_cast<std::size_t>(c) * h * w, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* g = d_out.data() + static_cast<std::size_t>(ch) * 4 * h * w;
        double* dst = d_in.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double* g0 = g + static_cast<std::size_t>(2 * y) * wo + 2 * x;
                dst[static_cast<std::size_t>(y) * w + x] = g0[0] + g0[1] + g0[wo] + g0[wo + 1];
            }
        }
    }
    return d_in;
}

}  // namespace

Parameters init_params(const PredictorConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Parameters params;
    const auto layers = layout(cfg);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& layer = layers[l];
        const bool is_head = l + 1 == layers.size();
        const std::string name = is_head ? "head" : "conv" + std::to_string(l);
        const int fan_in = layer.in_channels * layer.kernel * layer.kernel;
        const double bound = std::sqrt(2.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        ParamBlock w{name + ".weight", {layer.out_channels, layer.in_channels, layer.kernel, layer.kernel}, {}};
        w.values.resize(static_cast<std::size_t>(layer.out_channels) * fan_in);
        for (auto& v : w.values) v = dist(rng);
        ParamBlock b{name + ".bias", {layer.out_channels}, std::vector<double>(static_cast<std::size_t>(layer.out_channels), 0.0)};
        if (is_head) b.values[1] = std::log(std::expm1(1.0));
        params.blocks.push_back(std::move(w));
        params.blocks.push_back(std::move(b));
    }
    return params;
}

ForwardResult forward(const PredictorConfig& cfg, const Parameters& params, const Chip& chip) {
    cfg.validate();
    check_params(cfg, params);
    if (chip.channels != cfg.channels_in) throw ShapeError("chip channel count differs from predictor channels_in");
    const int levels = cfg.downsample_levels;
    if (chip.height % (1 << levels) != 0 || chip.width % (1 << levels) != 0) {
        throw ShapeError("chip dimensions must be divisible by 2^downsample_levels");
    }
    if (chip.data.size() != chip.plane_size() * static_cast<std::size_t>(chip.channels)) {
        throw ShapeError("chip data size does not match its dimensions");
    }

    const auto layers = layout(cfg);
    const int n_conv = static_cast<int>(cfg.widths.size());
    ForwardResult res;
    ForwardCache& cache = res.cache;
    cache.height = chip.height;
    cache.width = chip.width;
    cache.params_fingerprint = params.fingerprint();
    cache.layer_inputs.resize(layers.size());
    cache.pre_activations.resize(static_cast<std::size_t>(n_conv));
    std::vector<std::vector<double>> activations(static_cast<std::size_t>(n_conv));

    std::vector<double> cur = chip.data;
    int c = chip.channels;
    int h = chip.height;
    int w = chip.width;
    for (int j = 0; j < n_conv; ++j) {
        if (j > 0 && j <= levels) {
            cur = avg_pool2(cur, c, h, w);
            h /= 2;
            w /= 2;
        } else if (j > levels) {
            cur = upsample2(cur, c, h, w);
            h *= 2;
            w *= 2;
        }
        const Layer& l = layers[static_cast<std::size_t>(j)];
        std::vector<double> z(static_cast<std::size_t>(l.out_channels) * h * w);
        conv_forward(cur.data(), c, h, w, params.blocks[l.weight_block].values.data(),
                     params.blocks[l.weight_block + 1].values.data(), l.out_channels, 3, z.data());
        std::vector<double> a(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0.0 ? z[i] : 0.0;
        if (j > levels) {
            const auto& skip = activations[static_cast<std::size_t>(2 * levels - j)];
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += skip[i];
        }
        cache.layer_inputs[static_cast<std::size_t>(j)] = std::move(cur);
        cache.pre_activations[static_cast<std::size_t>(j)] = std::move(z);
        activations[static_cast<std::size_t>(j)] = a;
        cur = std::move(a);
        c = l.out_channels;
    }

    const Layer& head = layers.back();
    std::vector<double> out(static_cast<std::size_t>(head.out_channels) * h * w);
    conv_forward(cur.data(), c, h, w, params.blocks[head.weight_block].values.data(),
                 params.blocks[head.weight_block + 1].values.data(), head.out_channels, 1, out.data());
    cache.layer_inputs.back() = std::move(cur);

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    res.raw_mu = Map(h, w);
    res.raw_s = Map(h, w);
    std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(plane), res.raw_mu.data.begin());
    std::copy(out.begin() + static_cast<std::ptrdiff_t>(plane), out.begin() + static_cast<std::ptrdiff_t>(2 * plane),
              res.raw_s.data.begin());
    return res;
}

Parameters backward(const PredictorConfig& cfg, const Parameters& params, const ForwardCache& cache,
                    const Map& d_raw_mu, const Map& d_raw_s) {
    check_params(cfg, params);
    const auto layers = layout(cfg);
    const int n_conv = static_cast<int>(cfg.widths.size());
    const int levels = cfg.downsample_levels;
    if (cache.params_fingerprint != params.fingerprint() || cache.layer_inputs.size() != layers.size() ||
        cache.pre_activations.size() != static_cast<std::size_t>(n_conv)) {
        throw ContractError("forward cache does not belong to these parameters");
    }
    if (d_raw_mu.height != cache.height || d_raw_mu.width != cache.width || !d_raw_mu.same_shape(d_raw_s)) {
        throw ShapeError("upstream gradient shape differs from the cached forward pass");
    }

    Parameters grads = params.zeros_like();
    int h = cache.height;
    int w = cache.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    std::vector<double> d_out(2 * plane);
    std::copy(d_raw_mu.data.begin(), d_raw_mu.data.end(), d_out.begin());
    std::copy(d_raw_s.data.begin(), d_raw_s.data.end(), d_out.begin() + static_cast<std::ptrdiff_t>(plane));

    const Layer& head = layers.back();
    std::vector<double> g(static_cast<std::size_t>(head.in_channels) * plane);
    conv_backward(cache.layer_inputs.back().data(), head.in_channels, h, w, params.blocks[head.weight_block].values.data(),
                  head.out_channels, 1, d_out.data(), grads.blocks[head.weight_block].values.data(),
                  grads.blocks[head.weight_block + 1].values.data(), n_conv > 0 ? g.data() : nullptr);

    std::vector<std::vector<double>> skip_grads(static_cast<std::size_t>(n_conv));
    for (int j = n_conv - 1; j >= 0; --j) {
        const Layer& l = layers[static_cast<std::size_t>(j)];
        // g is the gradient with respect to this layer's output.
        if (j > levels) {
            skip_grads[static_cast<std::size_t>(2 * levels - j)] = g;
        } else if (j < levels) {
            const auto& extra = skip_grads[static_cast<std::size_t>(j)];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
        }
        const auto& z = cache.pre_activations[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(z[i] > 0.0)) g[i] = 0.0;
        }
        std::vector<double> d_in(j > 0 ? static_cast<std::size_t>(l.in_channels) * h * w : 0);
        conv_backward(cache.layer_inputs[static_cast<std::size_t>(j)].data(), l.in_channels, h, w,
                      params.blocks[l.weight_block].values.data(), l.out_channels, 3, g.data(),
                      grads.blocks[l.weight_block].values.data(), grads.blocks[l.weight_block + 1].values.data(),
                      j > 0 ? d_in.data() : nullptr);
        if (j == 0) break;
        if (j > levels) {
            g = upsample2_backward(d_in, l.in_channels, h / 2, w / 2);
            h /= 2;
            w /= 2;
        } else {
            g = avg_pool2_backward(d_in, l.in_channels, h * 2, w * 2);
            h *= 2;
            w *= 2;
        }
    }
    return grads;
}

double softplus(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

HeadOutput apply_head(const Map& raw_mu, const Map& raw_s, HeadKind kind) {
    require_same_shape(raw_mu, raw_s, "apply_head");
    HeadOutput out;
    switch (kind) {
        case HeadKind::gaussian:
            out.first = raw_mu;
            out.second = Map(raw_s.height, raw_s.width);
            for (std::size_t i = 0; i < raw_s.size(); ++i) out.second[i] = softplus(raw_s[i]) + kMinPositive;
            break;
        case HeadKind::deterministic:
            out.first = raw_mu;
            break;
        case HeadKind::poisson:
            out.first = Map(raw_mu.height, raw_mu.width);
            for (std::size_t i = 0; i < raw_mu.size(); ++i) out.first[i] = softplus(raw_mu[i]) + kMinPositive;
            break;
    }
    return out;
}

RawGrads head_backward(const Map& raw_mu, const Map& raw_s, HeadKind kind, const Map& d_first, const Map& d_second) {
    require_same_shape(raw_mu, raw_s, "head_backward");
    require_same_shape(raw_mu, d_first, "head_backward");
    RawGrads g{Map(raw_mu.height, raw_mu.width), Map(raw_mu.height, raw_mu.width)};
    switch (kind) {
        case HeadKind::gaussian:
            require_same_shape(raw_s, d_second, "head_backward");
            g.d_raw_mu = d_first;
            for (std::size_t i = 0; i < raw_s.size(); ++i) g.d_raw_s[i] = d_second[i] * sigmoid(raw_s[i]);
            break;
        case HeadKind::deterministic:
            g.d_raw_mu = d_first;
            break;
        case HeadKind::poisson:
            for (std::size_t i = 0; i < raw_mu.size(); ++i) g.d_raw_mu[i] = d_first[i] * sigmoid(raw_mu[i]);
            break;
    }
    return g;
}

}  // namespace disagg
