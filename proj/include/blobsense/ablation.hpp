#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "blobsense/froc.hpp"
#include "blobsense/trainer.hpp"

// Trains and evaluates the six loss arms (full, four single-principle
// removals, and the plain-L2 baseline) with identical seeds and schedules,
// then reports each arm's best sensitivity and the FPI where it occurs.

namespace blobsense {

/// Evaluation-thread budget: BLOBSENSE_THREADS when set, otherwise the
/// hardware concurrency.
int thread_budget();

/// 0.05 .. 0.95 in steps of 0.05.
std::vector<double> default_thresholds();

/// Per-image forward passes over a read-only model, fanned out across
/// up to `threads` workers; results are ordered by sample index.
std::vector<Tensor> infer_heatmaps(const Model& model, const LoadedDataset& data,
                                   int threads);

std::vector<std::vector<Annotation>> annotations_of(const LoadedDataset& data);

struct AblationRow {
    std::string variant;
    double max_sensitivity = 0.0;
    double fpi_at_max = 0.0;
};

struct AblationOutput {
    std::vector<AblationRow> rows;        // one per variant, spec order
    std::vector<NamedCurve> curves;
};

AblationRow summarize_curve(const std::string& variant,
                            std::span<const FrocPoint> curve);

void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const AblationRow> rows);

/// Trains every variant from the same model seed and schedule, evaluates on
/// the test split, and (with a non-empty out_dir) writes per-variant
/// checkpoints, traces, froc_<variant>.csv, ablation.csv, and ablation.svg.
/// Training runs are independent and may execute concurrently; each arm is
/// bit-deterministic regardless of the thread count.
AblationOutput ablation_suite(const LoadedDataset& train_data,
                              const LoadedDataset& test_data,
                              const HourglassConfig& model_config,
                              const TrainConfig& base_config,
                              std::span<const double> thresholds,
                              const std::filesystem::path& out_dir, int threads);

}  // namespace blobsense
