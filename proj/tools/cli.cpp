#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "disagg/checkpoint.hpp"
#include "disagg/error.hpp"
#include "disagg/eval.hpp"
#include "disagg/image_io.hpp"
#include "disagg/render.hpp"
#include "disagg/scene.hpp"
#include "disagg/train.hpp"

namespace disagg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw LoadError("failed writing '" + path.string() + "'");
}

std::vector<Sample> load_data_dir(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    if (!fs::exists(manifest)) throw LoadError("no manifest.json in '" + dir.string() + "'");
    return load_dataset(manifest);
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

struct GenDataArgs {
    std::string config;
    std::string out;
    int count = 200;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    SceneConfig cfg;
    if (!a.config.empty()) cfg = scene_config_from_json(read_json_file(a.config));
    if (a.count < 0) throw ConfigError("--count must be >= 0");
    const auto samples = generate_dataset(cfg, a.count);
    save_dataset(a.out, samples);
    out << "wrote " << samples.size() << " scenes to " << a.out << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::string log;
    int threads = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = train_config_from_json(read_json_file(a.config));
    if (a.threads > 0) cfg.threads = a.threads;
    const auto samples = filter_dataset(load_data_dir(a.data), cfg.filter);
    const auto split = split_dataset(samples, cfg.val_frac, cfg.test_frac, cfg.seed);
    const TrainResult result = train(cfg, split, samples);
    save_checkpoint(a.out, result.best);
    if (!a.log.empty()) {
        std::ostringstream csv;
        result.log.write_csv(csv);
        write_text_file(a.log, csv.str());
    }
    out << "best_epoch=" << result.best.epoch << "\n";
    out << "val_mae=" << format_number(*result.best.validation_metric) << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data;
    std::string ckpt;
    std::string split = "test";
    std::string out;
    std::string config;
    std::string baseline;
    std::vector<double> thresholds{1e4, 1e5};
    std::string sigma_average = "region";
};

std::vector<std::string> split_ids(const DatasetSplit& split, const std::vector<Sample>& samples, const std::string& which) {
    if (which == "train") return split.train;
    if (which == "val") return split.validation;
    if (which == "test") return split.test;
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    return ids;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.ckpt.empty() == a.baseline.empty()) throw ConfigError("eval needs exactly one of --ckpt or --baseline");
    std::optional<Checkpoint> ckpt;
    if (!a.ckpt.empty()) ckpt = load_checkpoint(a.ckpt);

    TrainConfig cfg;
    if (!a.config.empty()) {
        cfg = train_config_from_json(read_json_file(a.config));
    } else if (ckpt && !ckpt->run_config.empty()) {
        cfg = train_config_from_json(ckpt->run_config);
    }
    const auto samples = filter_dataset(load_data_dir(a.data), cfg.filter);
    const auto split = split_dataset(samples, cfg.val_frac, cfg.test_frac, cfg.seed);
    const auto eval_set = select_samples(samples, split_ids(split, samples, a.split));
    if (eval_set.empty()) throw ConfigError("split '" + a.split + "' is empty");

    EvalOptions opts;
    opts.thresholds = a.thresholds;
    opts.sigma_average = a.sigma_average == "pixel" ? SigmaAverage::pixel : SigmaAverage::region;

    MetricsReport report;
    if (ckpt) {
        report = evaluate(*ckpt, eval_set, opts);
    } else {
        const auto train_set = select_samples(samples, split.train);
        if (a.baseline == "gaussian-fit") {
            report = gaussian_fit_baseline(all_labels(train_set), all_labels(eval_set), opts);
        } else if (a.baseline == "size") {
            report = size_estimation_baseline(train_set, eval_set);
        } else {
            report = uniform_baseline(eval_set);
        }
    }
    if (!a.out.empty()) write_text_file(a.out, report_to_json(report).dump(2) + "\n");
    out << format_table({report});
    return kExitOk;
}

struct PredictArgs {
    std::string ckpt;
    std::string chip;
    std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Chip chip = load_chip_png(a.chip);
    const PixelPrediction pred = predict_pixels(ckpt, chip);
    const fs::path mu_path = a.out + "_mu.f32";
    write_float_map(mu_path, pred.mu);
    out << "wrote " << mu_path.string() << "\n";
    if (pred.var) {
        Map sigma = *pred.var;
        for (auto& v : sigma.data) v = std::sqrt(v);
        const fs::path sigma_path = a.out + "_sigma.f32";
        write_float_map(sigma_path, sigma);
        out << "wrote " << sigma_path.string() << "\n";
    }
    return kExitOk;
}

struct RenderArgs {
    std::string map;
    std::string spec;
    std::string out;
    std::string mask;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
    RenderSpec spec;
    if (!a.spec.empty()) spec = render_spec_from_json(read_json_file(a.spec));
    const Map map = read_float_map(a.map);
    std::optional<RegionSet> regions;
    if (!a.mask.empty()) {
        const auto m16 = read_png_gray16(a.mask);
        RegionSet r;
        r.mask = Grid<std::int32_t>(m16.height, m16.width);
        for (std::size_t p = 0; p < m16.size(); ++p) {
            r.mask[p] = m16[p];
            r.region_count = std::max<int>(r.region_count, m16[p]);
        }
        regions = std::move(r);
    }
    write_png_rgb8(a.out, render_map(map, spec, regions ? &*regions : nullptr));
    out << "wrote " << a.out << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pixel-level value estimation from region-level labels"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--config", gen.config, "Scene config JSON");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of scenes");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
    train_cmd->add_option("--config", tr.config, "Train config JSON");
    train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
    train_cmd->add_option("--log", tr.log, "CSV log path");
    train_cmd->add_option("--threads", tr.threads, "Worker threads");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline");
    eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path");
    eval_cmd->add_option("--split", ev.split, "train|val|test|all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval_cmd->add_option("--out", ev.out, "Report JSON path");
    eval_cmd->add_option("--config", ev.config, "Train config JSON (split and filter)");
    eval_cmd->add_option("--baseline", ev.baseline, "gaussian-fit|size|uniform")
        ->check(CLI::IsMember({"gaussian-fit", "size", "uniform"}));
    eval_cmd->add_option("--thresholds", ev.thresholds, "P+- thresholds");
    eval_cmd->add_option("--sigma-average", ev.sigma_average, "region|pixel")
        ->check(CLI::IsMember({"region", "pixel"}));

    PredictArgs pr;
    auto* predict_cmd = app.add_subcommand("predict", "Predict per-pixel maps for one chip");
    predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint path")->required();
    predict_cmd->add_option("--chip", pr.chip, "Chip PNG")->required();
    predict_cmd->add_option("--out", pr.out, "Output prefix")->required();

    RenderArgs rd;
    auto* render_cmd = app.add_subcommand("render", "Render a float map as a PNG heatmap");
    render_cmd->add_option("--map", rd.map, "Float map path")->required();
    render_cmd->add_option("--spec", rd.spec, "Render spec JSON");
    render_cmd->add_option("--out", rd.out, "PNG path")->required();
    render_cmd->add_option("--mask", rd.mask, "Region mask PNG for overlays");

    std::vector<std::string> argv_store{"disagg"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
        if (train_cmd->parsed()) return cmd_train(tr, out);
        if (eval_cmd->parsed()) return cmd_eval(ev, out);
        if (predict_cmd->parsed()) return cmd_predict(pr, out);
        if (render_cmd->parsed()) return cmd_render(rd, out);
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace disagg::cli
