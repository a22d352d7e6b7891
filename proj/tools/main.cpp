#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blobsense/ablation.hpp"
#include "blobsense/checkpoint.hpp"
#include "blobsense/froc.hpp"
#include "blobsense/fsio.hpp"
#include "blobsense/synth.hpp"
#include "blobsense/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blobsense;

namespace {

constexpr const char* kToolVersion = "blobsense 0.1.0";

// exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 validation
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;
constexpr int kExitValidation = 5;

json load_json_file(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config field '") + key + "': " + e.what());
        }
    }
}

GenConfig gen_config_from_json(const json& j) {
    GenConfig cfg;
    if (j.contains("n_images")) {
        const auto& n = j.at("n_images");
        maybe(n, "train", cfg.n_images.train);
        maybe(n, "val", cfg.n_images.val);
        maybe(n, "test", cfg.n_images.test);
    }
    maybe(j, "image_size", cfg.image_size);
    if (j.contains("incidence")) {
        const auto& p = j.at("incidence");
        maybe(p, "normal", cfg.p_normal);
        maybe(p, "benign", cfg.p_benign);
        maybe(p, "high_risk", cfg.p_high_risk);
        maybe(p, "malignant", cfg.p_malignant);
    }
    if (j.contains("findings_per_image")) {
        const auto range = j.at("findings_per_image").get<std::vector<int>>();
        if (range.size() != 2) {
            throw ConfigError("findings_per_image must be [min, max]");
        }
        cfg.findings_min = range[0];
        cfg.findings_max = range[1];
    }
    if (j.contains("amplitude")) {
        const auto range = j.at("amplitude").get<std::vector<double>>();
        if (range.size() != 2) {
            throw ConfigError("amplitude must be [min, max]");
        }
        cfg.amp_min = range[0];
        cfg.amp_max = range[1];
    }
    if (j.contains("sigma")) {
        const auto range = j.at("sigma").get<std::vector<double>>();
        if (range.size() != 2) {
            throw ConfigError("sigma must be [min, max]");
        }
        cfg.sigma_min = range[0];
        cfg.sigma_max = range[1];
    }
    maybe(j, "looseness", cfg.looseness);
    maybe(j, "jitter", cfg.jitter);
    maybe(j, "texture_scale", cfg.texture_scale);
    maybe(j, "seed", cfg.seed);
    return cfg;
}

json gen_config_to_json(const GenConfig& cfg) {
    return {{"n_images",
             {{"train", cfg.n_images.train},
              {"val", cfg.n_images.val},
              {"test", cfg.n_images.test}}},
            {"image_size", cfg.image_size},
            {"incidence",
             {{"normal", cfg.p_normal},
              {"benign", cfg.p_benign},
              {"high_risk", cfg.p_high_risk},
              {"malignant", cfg.p_malignant}}},
            {"findings_per_image", {cfg.findings_min, cfg.findings_max}},
            {"amplitude", {cfg.amp_min, cfg.amp_max}},
            {"sigma", {cfg.sigma_min, cfg.sigma_max}},
            {"looseness", cfg.looseness},
            {"jitter", cfg.jitter},
            {"texture_scale", cfg.texture_scale},
            {"seed", cfg.seed}};
}

struct TrainBundle {
    HourglassConfig model{1, 3, 8, 0};
    TrainConfig train;
};

TrainBundle train_bundle_from_json(const json& j) {
    TrainBundle bundle;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        maybe(m, "stacks", bundle.model.stacks);
        maybe(m, "depth", bundle.model.depth);
        maybe(m, "channels", bundle.model.channels);
        maybe(m, "seed", bundle.model.seed);
    }
    TrainConfig& t = bundle.train;
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        maybe(o, "learning_rate", t.adam.learning_rate);
        maybe(o, "beta1", t.adam.beta1);
        maybe(o, "beta2", t.adam.beta2);
        maybe(o, "epsilon", t.adam.epsilon);
    }
    maybe(j, "images_per_epoch", t.images_per_epoch);
    if (j.contains("phase1")) {
        const auto& p = j.at("phase1");
        maybe(p, "crop_size", t.phase1.crop_size);
        maybe(p, "epochs", t.phase1.epochs);
        maybe(p, "include_normals", t.phase1.include_normals);
    }
    if (j.contains("phase2")) {
        maybe(j.at("phase2"), "epochs", t.phase2.epochs);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        maybe(l, "patch_size", t.loss.patch_size);
        if (l.contains("bank")) {
            t.loss.bank.sigmas = l.at("bank").get<std::vector<double>>();
        }
        maybe(l, "top_k", t.loss.top_k);
        maybe(l, "omega", t.loss.omega);
        maybe(l, "mass_epsilon", t.loss.mass_epsilon);
        maybe(l, "peak_threshold", t.loss.peak_params.threshold);
        maybe(l, "nms_window", t.loss.peak_params.window);
    }
    if (j.contains("variant")) {
        t.variant = variant_from_name(j.at("variant").get<std::string>());
    }
    maybe(j, "seed", t.seed);
    maybe(j, "checkpoint_every", t.checkpoint_every);
    return bundle;
}

json train_bundle_to_json(const TrainBundle& bundle) {
    const TrainConfig& t = bundle.train;
    return {{"model",
             {{"stacks", bundle.model.stacks},
              {"depth", bundle.model.depth},
              {"channels", bundle.model.channels},
              {"seed", bundle.model.seed}}},
            {"optimizer",
             {{"learning_rate", t.adam.learning_rate},
              {"beta1", t.adam.beta1},
              {"beta2", t.adam.beta2},
              {"epsilon", t.adam.epsilon}}},
            {"images_per_epoch", t.images_per_epoch},
            {"phase1",
             {{"crop_size", t.phase1.crop_size},
              {"epochs", t.phase1.epochs},
              {"include_normals", t.phase1.include_normals}}},
            {"phase2", {{"epochs", t.phase2.epochs}}},
            {"loss",
             {{"patch_size", t.loss.patch_size},
              {"bank", t.loss.bank.sigmas},
              {"top_k", t.loss.top_k},
              {"omega", t.loss.omega},
              {"mass_epsilon", t.loss.mass_epsilon},
              {"peak_threshold", t.loss.peak_params.threshold},
              {"nms_window", t.loss.peak_params.window}}},
            {"variant", variant_name(t.variant)},
            {"seed", t.seed},
            {"checkpoint_every", t.checkpoint_every}};
}

/// Written beside the run's outputs as <out>.run_manifest.json, so the
/// outputs themselves stay byte-reproducible while the manifest carries the
/// effective config snapshot and wall-clock duration.
struct RunManifest {
    std::string subcommand;
    json config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const fs::path& out_path) const {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        const json j = {{"tool_version", kToolVersion}, {"subcommand", subcommand},
                        {"seed", seed},                 {"config", config},
                        {"inputs", inputs},             {"outputs", outputs},
                        {"duration_seconds", seconds}};
        fs::path path = out_path;
        path += ".run_manifest.json";
        write_file_atomic(path, j.dump(2));
    }
};

std::vector<double> parse_thresholds(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t next = csv.find(',', pos);
        if (next == std::string::npos) {
            next = csv.size();
        }
        try {
            out.push_back(std::stod(csv.substr(pos, next - pos)));
        } catch (const std::exception&) {
            throw ConfigError("bad threshold list: " + csv);
        }
        pos = next + 1;
    }
    if (out.empty()) {
        throw ConfigError("threshold list is empty");
    }
    return out;
}

int run_gen(const std::string& config_path, const std::string& out_dir, long seed) {
    json file = config_path.empty() ? json::object() : load_json_file(config_path);
    GenConfig cfg = gen_config_from_json(file);
    if (seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed);
    }

    RunManifest manifest;
    manifest.subcommand = "gen";
    manifest.config = gen_config_to_json(cfg);
    manifest.seed = cfg.seed;
    manifest.inputs = {config_path};
    manifest.outputs = {out_dir};

    const GenSummary summary = generate(cfg, out_dir);
    manifest.write(out_dir);

    long images = 0;
    for (const auto& [split, counts] : summary.images) {
        for (long c : counts) {
            images += c;
        }
    }
    std::printf("generated %ld images in %s\n", images, out_dir.c_str());
    return 0;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, long seed, const std::string& variant,
              double lr, const std::string& resume) {
    json file = config_path.empty() ? json::object() : load_json_file(config_path);
    TrainBundle bundle = train_bundle_from_json(file);
    if (seed >= 0) {
        bundle.train.seed = static_cast<std::uint64_t>(seed);
    }
    if (!variant.empty()) {
        bundle.train.variant = variant_from_name(variant);
    }
    if (lr > 0) {
        bundle.train.adam.learning_rate = lr;
    }

    RunManifest manifest;
    manifest.subcommand = "train";
    manifest.config = train_bundle_to_json(bundle);
    manifest.seed = bundle.train.seed;
    manifest.inputs = {data_dir, config_path};
    manifest.outputs = {out_dir};

    const LoadedDataset data = load_into_memory(data_dir, "train");
    Trainer trainer =
        resume.empty() ? Trainer(Model::build(bundle.model), &data, bundle.train)
                       : Trainer::resume(resume, &data, bundle.train);
    trainer.run(out_dir);
    manifest.write(out_dir);

    std::printf("trained %s for %d epochs (%ld steps); model at %s/model.ckpt\n",
                variant_name(bundle.train.variant), trainer.epochs_done(),
                trainer.global_step(), out_dir.c_str());
    return 0;
}

int run_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& split, const std::string& out_csv,
             const std::string& thresholds_csv, int window) {
    RunManifest manifest;
    manifest.subcommand = "eval";
    manifest.inputs = {data_dir, ckpt_path};
    manifest.outputs = {out_csv};

    const std::vector<double> thresholds = thresholds_csv.empty()
                                               ? default_thresholds()
                                               : parse_thresholds(thresholds_csv);
    PeakParams params{0.0, window};
    manifest.config = {{"split", split}, {"thresholds", thresholds}, {"nms_window", window}};

    const Model model = model_from_checkpoint(load_checkpoint(ckpt_path));
    manifest.seed = model.config().seed;
    const LoadedDataset data = load_into_memory(data_dir, split);
    const auto heatmaps = infer_heatmaps(model, data, thread_budget());
    const auto curve = froc_curve(heatmaps, annotations_of(data), thresholds, params);
    write_froc_csv(out_csv, curve);
    manifest.write(out_csv);

    const auto best = operating_point(curve, 5.0);
    if (best) {
        std::printf("eval %s: max sensitivity %.3f at %.2f FPI (tau=%.2f); curve in %s\n",
                    split.c_str(), best->sensitivity, best->fpi, best->threshold,
                    out_csv.c_str());
    } else {
        std::printf("eval %s: no operating point under 5 FPI; curve in %s\n",
                    split.c_str(), out_csv.c_str());
    }
    return 0;
}

int run_ablate(const std::string& data_dir, const std::string& config_path,
               const std::string& out_dir, long seed,
               const std::string& thresholds_csv) {
    json file = config_path.empty() ? json::object() : load_json_file(config_path);
    TrainBundle bundle = train_bundle_from_json(file);
    if (seed >= 0) {
        bundle.train.seed = static_cast<std::uint64_t>(seed);
    }
    const std::vector<double> thresholds = thresholds_csv.empty()
                                               ? default_thresholds()
                                               : parse_thresholds(thresholds_csv);

    RunManifest manifest;
    manifest.subcommand = "ablate";
    manifest.config = train_bundle_to_json(bundle);
    manifest.config["thresholds"] = thresholds;
    manifest.seed = bundle.train.seed;
    manifest.inputs = {data_dir, config_path};
    manifest.outputs = {out_dir};

    const LoadedDataset train_data = load_into_memory(data_dir, "train");
    const LoadedDataset test_data = load_into_memory(data_dir, "test");
    const AblationOutput output =
        ablation_suite(train_data, test_data, bundle.model, bundle.train, thresholds,
                       out_dir, thread_budget());
    manifest.write(out_dir);

    for (const auto& row : output.rows) {
        std::printf("%-12s max_sensitivity=%.3f fpi_at_max=%.2f\n", row.variant.c_str(),
                    row.max_sensitivity, row.fpi_at_max);
    }
    return 0;
}

int run_peaks(const std::string& data_dir, const std::string& ckpt_path,
              const std::string& split, const std::string& out_csv, double threshold,
              int window) {
    RunManifest manifest;
    manifest.subcommand = "peaks";
    manifest.inputs = {data_dir, ckpt_path};
    manifest.outputs = {out_csv};
    manifest.config = {{"split", split}, {"threshold", threshold}, {"nms_window", window}};

    const Model model = model_from_checkpoint(load_checkpoint(ckpt_path));
    manifest.seed = model.config().seed;
    const LoadedDataset data = load_into_memory(data_dir, split);
    const auto heatmaps = infer_heatmaps(model, data, thread_budget());

    std::string csv = "image_id,row,col,confidence\n";
    char line[160];
    for (std::size_t i = 0; i < heatmaps.size(); ++i) {
        for (const auto& p : find_peaks<float>(heatmaps[i], {threshold, window})) {
            std::snprintf(line, sizeof(line), "%s,%d,%d,%.9g\n",
                          data.samples[i].record.image_id.c_str(), p.row, p.col,
                          static_cast<double>(p.confidence));
            csv += line;
        }
    }
    write_file_atomic(out_csv, csv);
    manifest.write(out_csv);
    std::printf("peaks for %zu images written to %s\n", heatmaps.size(), out_csv.c_str());
    return 0;
}

int run_plot(const std::vector<std::string>& inputs, const std::string& out_svg) {
    RunManifest manifest;
    manifest.subcommand = "plot";
    manifest.inputs = inputs;
    manifest.outputs = {out_svg};
    manifest.config = {{"inputs", inputs}};

    std::vector<NamedCurve> curves;
    for (const auto& path : inputs) {
        NamedCurve curve;
        curve.name = fs::path(path).stem().string();
        curve.points = read_froc_csv(path);
        curves.push_back(std::move(curve));
    }
    write_curves_svg(out_svg, curves);
    manifest.write(out_svg);
    std::printf("plotted %zu curves to %s\n", curves.size(), out_svg.c_str());
    return 0;
}

int fail(const char* kind, int code, const std::string& message) {
    std::string one_line = message;
    for (auto& c : one_line) {
        if (c == '\n') {
            c = ' ';
        }
    }
    std::fprintf(stderr, "error kind=%s code=%d: %s\n", kind, code, one_line.c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hypersensitive blob detection pipeline"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, split = "test", ckpt_path;
    std::string variant, thresholds_csv, resume;
    std::vector<std::string> plot_inputs;
    long seed = -1;
    double lr = -1.0, threshold = 0.0;
    int window = 5;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "gen config json");
    gen->add_option("--out", out_path, "output dataset directory")->required();
    gen->add_option("--seed", seed, "override the config seed");

    CLI::App* train = app.add_subcommand("train", "train a detector");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "train config json");
    train->add_option("--out", out_path, "output run directory")->required();
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--variant", variant,
                      "full|no-align|no-size|no-topk|no-weight|l2-baseline");
    train->add_option("--lr", lr, "override the learning rate");
    train->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* eval = app.add_subcommand("eval", "sweep thresholds into a FROC curve");
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    eval->add_option("--split", split, "train|val|test");
    eval->add_option("--out", out_path, "output csv")->required();
    eval->add_option("--thresholds", thresholds_csv, "comma-separated ascending taus");
    eval->add_option("--window", window, "nms window (odd)");

    CLI::App* ablate =
        app.add_subcommand("ablate", "train and evaluate all six loss arms");
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--config", config_path, "train config json");
    ablate->add_option("--out", out_path, "output directory")->required();
    ablate->add_option("--seed", seed, "override the config seed");
    ablate->add_option("--thresholds", thresholds_csv, "comma-separated ascending taus");

    CLI::App* peaks = app.add_subcommand("peaks", "extract peak coordinates as csv");
    peaks->add_option("--data", data_dir, "dataset directory")->required();
    peaks->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    peaks->add_option("--split", split, "train|val|test");
    peaks->add_option("--out", out_path, "output csv")->required();
    peaks->add_option("--threshold", threshold, "minimum confidence");
    peaks->add_option("--window", window, "nms window (odd)");

    CLI::App* plot = app.add_subcommand("plot", "render FROC csv files as svg");
    plot->add_option("--in", plot_inputs, "froc csv file (repeatable)")->required();
    plot->add_option("--out", out_path, "output svg")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            return run_gen(config_path, out_path, seed);
        }
        if (train->parsed()) {
            return run_train(data_dir, config_path, out_path, seed, variant, lr, resume);
        }
        if (eval->parsed()) {
            return run_eval(data_dir, ckpt_path, split, out_path, thresholds_csv, window);
        }
        if (ablate->parsed()) {
            return run_ablate(data_dir, config_path, out_path, seed, thresholds_csv);
        }
        if (peaks->parsed()) {
            return run_peaks(data_dir, ckpt_path, split, out_path, threshold, window);
        }
        if (plot->parsed()) {
            return run_plot(plot_inputs, out_path);
        }
        return fail("usage", kExitUsage, "no subcommand given");
    } catch (const ConfigError& e) {
        return fail("config", kExitConfig, e.what());
    } catch (const IoError& e) {
        return fail("io", kExitIo, e.what());
    } catch (const ValidationError& e) {
        return fail("validation", kExitValidation, e.what());
    } catch (const DimensionError& e) {
        return fail("validation", kExitValidation, e.what());
    } catch (const RangeError& e) {
        return fail("validation", kExitValidation, e.what());
    } catch (const std::exception& e) {
        return fail("internal", 1, e.what());
    }
}
