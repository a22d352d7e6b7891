#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "blobsense/checkpoint.hpp"
#include "blobsense/hourglass.hpp"
#include "blobsense/loss.hpp"
#include "blobsense/synth.hpp"

// Two-phase optimization: annotation-centered crops first, then full images
// drawn by the stratified sampler, one image per step, Adam updates.
// Training is fully deterministic given (dataset, config): parameters, loss
// traces, and checkpoints are bit-identical across runs, and a run resumed
// from a checkpoint matches the uninterrupted run bit-exactly.

namespace blobsense {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) {
            throw ConfigError("learning rate must be positive");
        }
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ConfigError("adam betas must lie in [0,1)");
        }
        if (!(epsilon > 0.0)) {
            throw ConfigError("adam epsilon must be positive");
        }
    }
};

/// First/second moment accumulators, one pair per parameter. Kept in double
/// so checkpointed state resumes without rounding drift.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;

    static AdamState init(const std::vector<NamedParam>& params) {
        AdamState state;
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.size(), 0.0);
            state.v.emplace_back(p.tensor.size(), 0.0);
        }
        return state;
    }
};

/// Standard bias-corrected update. Every parameter must carry a gradient.
void adam_step(std::vector<NamedParam>& params, AdamState& state,
               const AdamConfig& config);

struct Phase1Config {
    int crop_size = 64;  // must be divisible by 2^depth
    int epochs = 2;
    bool include_normals = true;  // random crops of normal images at the stratum rate
};

struct Phase2Config {
    int epochs = 4;
};

struct TrainConfig {
    AdamConfig adam;
    int images_per_epoch = 400;
    Phase1Config phase1;
    Phase2Config phase2;
    LossConfig loss;
    LossVariant variant = LossVariant::kFull;
    std::uint64_t seed = 0;
    int checkpoint_every = 1;  // epochs

    void validate() const {
        adam.validate();
        loss.validate();
        if (images_per_epoch < 1) {
            throw ConfigError("images_per_epoch must be >= 1");
        }
        if (phase1.epochs < 0 || phase2.epochs < 0) {
            throw ConfigError("epoch counts must be >= 0");
        }
        if (checkpoint_every < 1) {
            throw ConfigError("checkpoint_every must be >= 1");
        }
    }
};

struct TraceRow {
    long step = 0;
    int epoch = 0;
    float l_det = 0;
    float l_bg = 0;
    float total = 0;
};

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows);

class Trainer {
  public:
    Trainer(Model model, const LoadedDataset* data, TrainConfig config);

    /// Restores parameters, optimizer moments, RNG state, and the epoch
    /// cursor from a checkpoint produced by run().
    static Trainer resume(const std::filesystem::path& checkpoint_path,
                          const LoadedDataset* data, TrainConfig config);

    /// Runs the remaining epochs (phase 1 then phase 2). With a non-empty
    /// out_dir, writes ckpt_epoch_NNNN.ckpt every checkpoint_every epochs,
    /// a final model.ckpt, and trace.csv.
    void run(const std::filesystem::path& out_dir = {});

    Checkpoint snapshot() const;

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    std::span<const TraceRow> trace() const { return trace_; }
    int epochs_done() const { return epoch_next_; }
    long global_step() const { return global_step_; }

  private:
    void phase1_epoch(int epoch);
    void phase2_epoch(int epoch);
    void step_on(const Tensor& image, std::span<const Annotation> annotations, int epoch);

    Model model_;
    const LoadedDataset* data_;
    TrainConfig config_;
    AdamState adam_;
    Rng rng_;
    int epoch_next_ = 0;
    long global_step_ = 0;
    std::vector<TraceRow> trace_;
};

/// Patch pretraining only (phase 2 disabled).
Model train_phase1(Model model, const LoadedDataset& data, TrainConfig config);

/// Full-image fine-tuning only (phase 1 disabled).
Model train_phase2(Model model, const LoadedDataset& data, TrainConfig config);

}  // namespace blobsense
