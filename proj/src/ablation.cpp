#include "blobsense/ablation.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "blobsense/fsio.hpp"

namespace blobsense {

int thread_budget() {
    if (const char* env = std::getenv("BLOBSENSE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) {
                return n;
            }
        } catch (const std::exception&) {
        }
        throw ConfigError("BLOBSENSE_THREADS must be a positive integer");
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<double> default_thresholds() {
    std::vector<double> thresholds;
    for (int i = 1; i <= 19; ++i) {
        thresholds.push_back(i * 0.05);
    }
    return thresholds;
}

std::vector<Tensor> infer_heatmaps(const Model& model, const LoadedDataset& data,
                                   int threads) {
    std::vector<Tensor> heatmaps(data.samples.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        const int size = data.image_size;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= data.samples.size()) {
                return;
            }
            heatmaps[i] = model.forward(
                nullptr, Tensor::from({1, size, size}, data.samples[i].pixels));
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(data.samples.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return heatmaps;
}

std::vector<std::vector<Annotation>> annotations_of(const LoadedDataset& data) {
    std::vector<std::vector<Annotation>> annotations;
    annotations.reserve(data.samples.size());
    for (const auto& sample : data.samples) {
        annotations.push_back(sample.record.annotations);
    }
    return annotations;
}

AblationRow summarize_curve(const std::string& variant,
                            std::span<const FrocPoint> curve) {
    AblationRow row{variant, 0.0, 0.0};
    bool first = true;
    for (const auto& point : curve) {
        if (first || point.sensitivity > row.max_sensitivity ||
            (point.sensitivity == row.max_sensitivity && point.fpi < row.fpi_at_max)) {
            row.max_sensitivity = point.sensitivity;
            row.fpi_at_max = point.fpi;
            first = false;
        }
    }
    return row;
}

void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const AblationRow> rows) {
    std::string out = "variant,max_sensitivity,fpi_at_max\n";
    char line[128];
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%s,%.10g,%.10g\n", row.variant.c_str(),
                      row.max_sensitivity, row.fpi_at_max);
        out += line;
    }
    write_file_atomic(path, out);
}

AblationOutput ablation_suite(const LoadedDataset& train_data,
                              const LoadedDataset& test_data,
                              const HourglassConfig& model_config,
                              const TrainConfig& base_config,
                              std::span<const double> thresholds,
                              const std::filesystem::path& out_dir, int threads) {
    base_config.validate();
    const std::vector<std::vector<Annotation>> test_annotations =
        annotations_of(test_data);

    const int n_variants = static_cast<int>(std::size(kAllVariants));
    std::vector<std::vector<FrocPoint>> curves(n_variants);
    std::vector<std::string> errors(n_variants);

    std::atomic<int> next{0};
    auto run_variant = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_variants) {
                return;
            }
            const LossVariant variant = kAllVariants[i];
            try {
                TrainConfig config = base_config;
                config.variant = variant;
                Trainer trainer(Model::build(model_config), &train_data, config);
                std::filesystem::path variant_dir;
                if (!out_dir.empty()) {
                    variant_dir = out_dir / variant_name(variant);
                }
                trainer.run(variant_dir);

                const auto heatmaps = infer_heatmaps(trainer.model(), test_data, 1);
                curves[i] = froc_curve(heatmaps, test_annotations, thresholds,
                                       base_config.loss.peak_params);
                if (!out_dir.empty()) {
                    write_froc_csv(out_dir / ("froc_" + std::string(variant_name(variant)) +
                                              ".csv"),
                                   curves[i]);
                }
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };

    const int n = std::max(1, std::min(threads, n_variants));
    if (n == 1) {
        run_variant();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) {
            pool.emplace_back(run_variant);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    for (int i = 0; i < n_variants; ++i) {
        if (!errors[i].empty()) {
            throw ValidationError(std::string("ablation variant '") +
                                  variant_name(kAllVariants[i]) + "' failed: " + errors[i]);
        }
    }

    AblationOutput output;
    for (int i = 0; i < n_variants; ++i) {
        output.rows.push_back(summarize_curve(variant_name(kAllVariants[i]), curves[i]));
        output.curves.push_back({variant_name(kAllVariants[i]), std::move(curves[i])});
    }
    if (!out_dir.empty()) {
        write_ablation_csv(out_dir / "ablation.csv", output.rows);
        write_curves_svg(out_dir / "ablation.svg", output.curves);
    }
    return output;
}

}  // namespace blobsense
