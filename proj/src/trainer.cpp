#include "blobsense/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "blobsense/fsio.hpp"

namespace blobsense {

void adam_step(std::vector<NamedParam>& params, AdamState& state,
               const AdamConfig& config) {
    config.validate();
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValidationError("optimizer state does not match parameter list");
    }
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) {
            throw ValidationError("missing gradient for parameter '" + p.name + "'");
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto value = params[i].tensor.value();
        auto grad = params[i].tensor.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = static_cast<double>(grad[j]);
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            value[j] = static_cast<float>(
                static_cast<double>(value[j]) -
                config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
        }
    }
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows) {
    std::string out = "step,epoch,l_det,l_bg,total\n";
    char line[160];
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%ld,%d,%.9g,%.9g,%.9g\n", row.step, row.epoch,
                      static_cast<double>(row.l_det), static_cast<double>(row.l_bg),
                      static_cast<double>(row.total));
        out += line;
    }
    write_file_atomic(path, out);
}

namespace {

constexpr const char* kMetaEpoch = "epoch_next";
constexpr const char* kMetaStep = "global_step";
constexpr const char* kMetaAdamStep = "adam_step";
constexpr const char* kMetaRng = "rng";
constexpr const char* kMetaVariant = "variant";

}  // namespace

Trainer::Trainer(Model model, const LoadedDataset* data, TrainConfig config)
    : model_(std::move(model)),
      data_(data),
      config_(std::move(config)),
      adam_(AdamState::init(model_.parameters())),
      rng_(config_.seed) {
    config_.validate();
    if (data_ == nullptr || data_->samples.empty()) {
        throw ConfigError("trainer requires a non-empty dataset");
    }
    if (config_.phase1.epochs > 0) {
        const int crop = config_.phase1.crop_size;
        if (crop < model_.config().scale() || crop % model_.config().scale() != 0) {
            throw ConfigError("phase-1 crop size must be divisible by 2^depth");
        }
        if (crop > data_->image_size) {
            throw ConfigError("phase-1 crop size exceeds the image size");
        }
    }
    if (config_.phase2.epochs > 0 &&
        data_->image_size % model_.config().scale() != 0) {
        throw ConfigError("image size must be divisible by 2^depth");
    }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint_path,
                        const LoadedDataset* data, TrainConfig config) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Trainer trainer(model_from_checkpoint(ckpt), data, std::move(config));

    std::size_t moment_index = 0;
    auto take = [&](const std::string& prefix,
                    std::vector<std::vector<double>>& dst) {
        for (std::size_t i = 0; i < trainer.model_.parameters().size(); ++i) {
            const auto& param = trainer.model_.parameters()[i];
            if (moment_index >= ckpt.moments.size() ||
                ckpt.moments[moment_index].first != prefix + param.name) {
                throw ValidationError("checkpoint missing optimizer state for " +
                                      param.name);
            }
            if (ckpt.moments[moment_index].second.size() != param.tensor.size()) {
                throw ValidationError("optimizer state size mismatch for " + param.name);
            }
            dst[i] = ckpt.moments[moment_index].second;
            ++moment_index;
        }
    };
    take("adam.m.", trainer.adam_.m);
    take("adam.v.", trainer.adam_.v);

    try {
        trainer.adam_.step = std::stol(ckpt.meta.at(kMetaAdamStep));
        trainer.epoch_next_ = std::stoi(ckpt.meta.at(kMetaEpoch));
        trainer.global_step_ = std::stol(ckpt.meta.at(kMetaStep));
        trainer.rng_.load_state(ckpt.meta.at(kMetaRng));
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception&) {
        throw ValidationError("checkpoint lacks usable training state, cannot resume");
    }
    return trainer;
}

Checkpoint Trainer::snapshot() const {
    Checkpoint ckpt = checkpoint_of(model_);
    for (std::size_t i = 0; i < model_.parameters().size(); ++i) {
        ckpt.moments.emplace_back("adam.m." + model_.parameters()[i].name, adam_.m[i]);
    }
    for (std::size_t i = 0; i < model_.parameters().size(); ++i) {
        ckpt.moments.emplace_back("adam.v." + model_.parameters()[i].name, adam_.v[i]);
    }
    ckpt.meta[kMetaAdamStep] = std::to_string(adam_.step);
    ckpt.meta[kMetaEpoch] = std::to_string(epoch_next_);
    ckpt.meta[kMetaStep] = std::to_string(global_step_);
    ckpt.meta[kMetaRng] = rng_.save_state();
    ckpt.meta[kMetaVariant] = variant_name(config_.variant);
    return ckpt;
}

void Trainer::step_on(const Tensor& image, std::span<const Annotation> annotations,
                      int epoch) {
    Graph graph;
    const Tensor out = model_.forward(&graph, image);
    const LossBreakdown lb =
        compute_loss<float>(&graph, out, annotations, config_.loss, config_.variant);
    if (!std::isfinite(lb.total)) {
        throw ValidationError("non-finite loss at step " + std::to_string(global_step_));
    }
    model_.zero_grads();
    graph.backward(lb.node);
    adam_step(model_.parameters(), adam_, config_.adam);
    global_step_ += 1;
    trace_.push_back({global_step_, epoch, lb.l_det, lb.l_bg, lb.total});
}

void Trainer::phase1_epoch(int epoch) {
    const int size = data_->image_size;
    const int crop = config_.phase1.crop_size;

    // strata that can anchor a crop: annotated ones, plus normals if enabled
    std::array<std::vector<std::size_t>, 4> strata;
    for (std::size_t i = 0; i < data_->samples.size(); ++i) {
        strata[stratum_of(data_->samples[i].record)].push_back(i);
    }
    std::vector<const std::vector<std::size_t>*> pools;
    if (config_.phase1.include_normals && !strata[0].empty()) {
        pools.push_back(&strata[0]);
    }
    for (int s = 1; s < 4; ++s) {
        if (!strata[s].empty()) {
            pools.push_back(&strata[s]);
        }
    }
    if (pools.empty() || (pools.size() == 1 && pools[0] == &strata[0])) {
        throw ConfigError("phase-1 pretraining requires annotated images");
    }

    for (int i = 0; i < config_.images_per_epoch; ++i) {
        const auto& pool = *pools[rng_.uniform_int(static_cast<int>(pools.size()))];
        const auto& sample = data_->samples[pool[rng_.uniform_int(static_cast<int>(pool.size()))]];
        const auto& annotations = sample.record.annotations;

        int center_row, center_col;
        if (!annotations.empty()) {
            const auto& anchor =
                annotations[rng_.uniform_int(static_cast<int>(annotations.size()))];
            std::tie(center_row, center_col) = annotation_center(anchor);
        } else {
            center_row = crop / 2 + rng_.uniform_int(size - crop + 1);
            center_col = crop / 2 + rng_.uniform_int(size - crop + 1);
        }
        // clip-shift so the window stays in bounds
        const int row0 = std::clamp(center_row - crop / 2, 0, size - crop);
        const int col0 = std::clamp(center_col - crop / 2, 0, size - crop);

        std::vector<float> window(static_cast<std::size_t>(crop) * crop);
        for (int r = 0; r < crop; ++r) {
            const float* src = sample.pixels.data() +
                               static_cast<std::size_t>(row0 + r) * size + col0;
            std::copy(src, src + crop, window.data() + static_cast<std::size_t>(r) * crop);
        }

        std::vector<Annotation> cropped;
        for (const auto& ann : annotations) {
            const auto [ar, ac] = annotation_center(ann);
            if (ar < row0 || ar >= row0 + crop || ac < col0 || ac >= col0 + crop) {
                continue;
            }
            Annotation shifted = ann;
            shifted.box.row_min = std::max(ann.box.row_min - row0, 0);
            shifted.box.col_min = std::max(ann.box.col_min - col0, 0);
            shifted.box.row_max = std::min(ann.box.row_max - row0, crop - 1);
            shifted.box.col_max = std::min(ann.box.col_max - col0, crop - 1);
            shifted.true_center_row = ann.true_center_row - row0;
            shifted.true_center_col = ann.true_center_col - col0;
            cropped.push_back(shifted);
        }

        step_on(Tensor::from({1, crop, crop}, std::move(window)), cropped, epoch);
    }
}

void Trainer::phase2_epoch(int epoch) {
    const StratifiedSampler sampler = [this] {
        std::vector<SampleRecord> records;
        records.reserve(data_->samples.size());
        for (const auto& sample : data_->samples) {
            records.push_back(sample.record);
        }
        return StratifiedSampler(records);
    }();

    const int size = data_->image_size;
    for (int i = 0; i < config_.images_per_epoch; ++i) {
        const auto& sample = data_->samples[sampler.draw(rng_)];
        step_on(Tensor::from({1, size, size}, sample.pixels),
                sample.record.annotations, epoch);
    }
}

void Trainer::run(const std::filesystem::path& out_dir) {
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) {
            throw IoError("cannot create output directory: " + out_dir.string());
        }
    }
    const int total = config_.phase1.epochs + config_.phase2.epochs;
    for (int epoch = epoch_next_; epoch < total; ++epoch) {
        if (epoch < config_.phase1.epochs) {
            phase1_epoch(epoch);
        } else {
            phase2_epoch(epoch);
        }
        epoch_next_ = epoch + 1;
        if (!out_dir.empty() && (epoch + 1) % config_.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.ckpt", epoch + 1);
            save_checkpoint(snapshot(), out_dir / name);
        }
    }
    if (!out_dir.empty()) {
        save_checkpoint(snapshot(), out_dir / "model.ckpt");
        write_trace_csv(out_dir / "trace.csv", trace_);
    }
}

Model train_phase1(Model model, const LoadedDataset& data, TrainConfig config) {
    config.phase2.epochs = 0;
    Trainer trainer(std::move(model), &data, std::move(config));
    trainer.run();
    return trainer.model();
}

Model train_phase2(Model model, const LoadedDataset& data, TrainConfig config) {
    config.phase1.epochs = 0;
    Trainer trainer(std::move(model), &data, std::move(config));
    trainer.run();
    return trainer.model();
}

}  // namespace blobsense
