#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blobsense/hourglass.hpp"

// Versioned checkpoint container: a human-readable JSON header holding the
// model config and a tensor manifest (name, dtype, shape, byte offset),
// followed by raw little-endian payload bytes. Model parameters are 32-bit
// floats; optimizer moments are stored as 64-bit sections so a resumed run
// continues bit-exactly.

namespace blobsense {

struct Checkpoint {
    HourglassConfig config;
    std::vector<NamedParam> params;  // model parameters, in build order
    std::vector<std::pair<std::string, std::vector<double>>> moments;
    std::map<std::string, std::string> meta;  // rng state, counters, ...
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a Model and fills its parameters, validating that the stored
/// names and shapes match what the config produces.
Model model_from_checkpoint(const Checkpoint& checkpoint);

/// Snapshot of the model's current parameter values.
Checkpoint checkpoint_of(const Model& model);

}  // namespace blobsense
