#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "blobsense/annotation.hpp"
#include "blobsense/common.hpp"

// Synthetic weakly-annotated corpora: smooth random backgrounds with
// Gaussian-bump findings, loose inflated-and-jittered boxes, and heavily
// imbalanced class incidence. Byte-identical output for identical
// (config, seed).

namespace blobsense {

struct SplitSizes {
    int train = 0;
    int val = 0;
    int test = 0;
};

struct GenConfig {
    SplitSizes n_images;
    int image_size = 96;
    // per-image class incidence, most severe finding decides the class
    double p_normal = 0.85;
    double p_benign = 0.08;
    double p_high_risk = 0.02;
    double p_malignant = 0.05;
    int findings_min = 1;
    int findings_max = 2;
    double amp_min = 0.3;
    double amp_max = 0.7;
    double sigma_min = 1.5;
    double sigma_max = 4.5;
    double looseness = 1.8;     // box inflation upper bound, >= 1
    double jitter = 0.2;        // center jitter as a fraction of box width
    double texture_scale = 6.0; // background blur sigma, pixels
    std::uint64_t seed = 0;

    void validate() const;
};

struct SampleRecord {
    std::string image_id;
    std::string image_path;  // relative to the dataset directory
    std::string split;
    std::vector<Annotation> annotations;
};

struct DatasetManifest {
    int version = 1;
    int image_size = 0;
    std::vector<SampleRecord> records;
};

/// normal / benign / high_risk / malignant, image classified by its most
/// severe annotation.
constexpr std::array<const char*, 4> kStratumNames = {"normal", "benign", "high_risk",
                                                      "malignant"};

int stratum_of(const SampleRecord& record);

/// One axis of a loose box: the tight +-3 sigma interval inflated by
/// u ~ U[1, looseness], its center jittered by up to jitter * width but
/// never past the true center, rounded and clipped to [0, size). With
/// looseness 1 and jitter 0 this is exactly the tight box.
std::pair<int, int> loose_interval(Rng& rng, double center, double sigma,
                                   double looseness, double jitter, int size);

struct GenSummary {
    // [split][stratum] image counts, and [split][label] annotation counts
    std::map<std::string, std::array<long, 4>> images;
    std::map<std::string, std::array<long, 3>> annotations;
};

/// Writes images/ (16-bit grayscale PNG), manifest.json, and summary.json.
GenSummary generate(const GenConfig& config, const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

/// Validated records of one split.
std::vector<SampleRecord> load_split(const std::filesystem::path& dataset_dir,
                                     const std::string& split);

GenSummary load_summary(const std::filesystem::path& dataset_dir);

/// Decoded pixels in [0,1], validated against the declared size.
std::vector<float> load_image(const std::filesystem::path& dataset_dir,
                              const SampleRecord& record, int expected_size);

struct LoadedSample {
    SampleRecord record;
    std::vector<float> pixels;
};

struct LoadedDataset {
    int image_size = 0;
    std::vector<LoadedSample> samples;
};

LoadedDataset load_into_memory(const std::filesystem::path& dataset_dir,
                               const std::string& split);

/// Uniform-stratum, uniform-within-stratum draws with replacement. The four
/// strata must all be non-empty.
class StratifiedSampler {
  public:
    explicit StratifiedSampler(std::span<const SampleRecord> records);

    std::size_t draw(Rng& rng) const;
    const std::vector<std::size_t>& stratum(int index) const { return strata_[index]; }

  private:
    std::array<std::vector<std::size_t>, 4> strata_;
};

}  // namespace blobsense
