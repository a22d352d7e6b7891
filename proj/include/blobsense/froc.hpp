#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blobsense/annotation.hpp"
#include "blobsense/peaks.hpp"
#include "blobsense/tensor.hpp"

// Peak-to-annotation matching and sensitivity / false-positives-per-image
// curves over a confidence-threshold sweep. Sensitivity counts malignant
// annotations only; a peak inside a benign or high-risk box is still a
// false positive. Hit criterion: peak center inside the loose box.

namespace blobsense {

struct FrocPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double fpi = 0.0;
};

struct MatchResult {
    std::vector<int> peak_annotation;  // per peak: annotation index, or -1
    std::vector<bool> annotation_hit;  // per annotation, any label
    int malignant_total = 0;
    int malignant_hit = 0;
    int false_positives = 0;  // peaks not inside any malignant box
};

/// Single-image matching. Peaks must be sorted by confidence descending.
/// A peak is assigned to the smallest-area containing box (ties: lowest
/// annotation index); an annotation is hit iff any peak center lies inside
/// its box.
MatchResult match(std::span<const Peak> peaks, std::span<const Annotation> annotations);

/// One FrocPoint per threshold (ascending). peaks_per_image holds each
/// image's peak list at threshold zero; the sweep filters by confidence.
/// Throws if the split contains no malignant annotation.
std::vector<FrocPoint> froc_curve(
    const std::vector<std::vector<Peak>>& peaks_per_image,
    const std::vector<std::vector<Annotation>>& annotations_per_image,
    std::span<const double> thresholds);

/// Convenience overload running the peak finder on saved heatmaps.
std::vector<FrocPoint> froc_curve(
    const std::vector<Tensor>& heatmaps,
    const std::vector<std::vector<Annotation>>& annotations_per_image,
    std::span<const double> thresholds, const PeakParams& params);

/// Highest-sensitivity point with fpi <= max_fpi; ties toward lower fpi.
std::optional<FrocPoint> operating_point(std::span<const FrocPoint> curve,
                                         double max_fpi);

void write_froc_csv(const std::filesystem::path& path, std::span<const FrocPoint> curve);
std::vector<FrocPoint> read_froc_csv(const std::filesystem::path& path);

struct NamedCurve {
    std::string name;
    std::vector<FrocPoint> points;
};

/// FPI on the horizontal axis, sensitivity on the vertical, one polyline
/// per curve.
void write_curves_svg(const std::filesystem::path& path,
                      std::span<const NamedCurve> curves);

}  // namespace blobsense
