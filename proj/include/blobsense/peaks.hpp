#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "blobsense/common.hpp"
#include "blobsense/tensor.hpp"

// Heatmap-to-coordinates conversion: windowed non-maximum suppression with a
// deterministic row-major plateau tie-break.

namespace blobsense {

template <typename S>
struct PeakT {
    int row = 0;
    int col = 0;
    S confidence = 0;
};

using Peak = PeakT<float>;

struct PeakParams {
    double threshold = 0.0;  // tau >= 0
    int window = 5;          // odd, >= 3

    void validate() const {
        if (threshold < 0.0) {
            throw ConfigError("peak threshold must be >= 0");
        }
        if (window < 3 || window % 2 == 0) {
            throw ConfigError("nms window must be odd and >= 3");
        }
    }
};

/// Inclusive rectangular region, used for background-mask exclusion windows.
struct PixelWindow {
    int row_min = 0, col_min = 0, row_max = 0, col_max = 0;

    bool contains(int row, int col) const {
        return row >= row_min && row <= row_max && col >= col_min && col <= col_max;
    }
};

/// A pixel is a peak iff its value >= threshold, it is >= every value in its
/// (clipped) w x w neighborhood, and strictly greater than every neighbor
/// that precedes it in row-major order, so only the first pixel of a tied
/// plateau is emitted. Result is sorted by confidence descending, ties by
/// (row, col).
template <typename S>
std::vector<PeakT<S>> find_peaks_raw(std::span<const S> data, int height, int width,
                                     const PeakParams& params) {
    params.validate();
    const int half = params.window / 2;
    const S tau = static_cast<S>(params.threshold);
    std::vector<PeakT<S>> peaks;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const S v = data[static_cast<std::size_t>(r) * width + c];
            if (v < tau) {
                continue;
            }
            const int r0 = std::max(0, r - half), r1 = std::min(height - 1, r + half);
            const int c0 = std::max(0, c - half), c1 = std::min(width - 1, c + half);
            bool is_peak = true;
            for (int nr = r0; nr <= r1 && is_peak; ++nr) {
                for (int nc = c0; nc <= c1; ++nc) {
                    if (nr == r && nc == c) {
                        continue;
                    }
                    const S nv = data[static_cast<std::size_t>(nr) * width + nc];
                    if (nv > v || (nv == v && (nr < r || (nr == r && nc < c)))) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (is_peak) {
                peaks.push_back({r, c, v});
            }
        }
    }
    std::sort(peaks.begin(), peaks.end(), [](const PeakT<S>& a, const PeakT<S>& b) {
        if (a.confidence != b.confidence) {
            return a.confidence > b.confidence;
        }
        if (a.row != b.row) {
            return a.row < b.row;
        }
        return a.col < b.col;
    });
    return peaks;
}

template <typename S>
std::vector<PeakT<S>> find_peaks(const TensorT<S>& heatmap, const PeakParams& params) {
    const auto& shape = heatmap.shape();
    int height = 0, width = 0;
    if (shape.size() == 3 && shape[0] == 1) {
        height = shape[1];
        width = shape[2];
    } else if (shape.size() == 2) {
        height = shape[0];
        width = shape[1];
    } else {
        throw DimensionError("find_peaks expects [1,H,W] or [H,W]");
    }
    return find_peaks_raw<S>(heatmap.value(), height, width, params);
}

/// find_peaks, minus peaks whose centers fall inside any exclusion window,
/// truncated to the k highest-confidence survivors.
template <typename S>
std::vector<PeakT<S>> top_k_peaks(const TensorT<S>& heatmap, const PeakParams& params,
                                  int k, std::span<const PixelWindow> exclusions = {}) {
    if (k < 0) {
        throw ConfigError("top_k_peaks requires k >= 0");
    }
    if (k == 0) {
        return {};
    }
    std::vector<PeakT<S>> peaks = find_peaks(heatmap, params);
    std::vector<PeakT<S>> kept;
    kept.reserve(std::min<std::size_t>(peaks.size(), static_cast<std::size_t>(k)));
    for (const auto& p : peaks) {
        const bool excluded = std::any_of(
            exclusions.begin(), exclusions.end(),
            [&p](const PixelWindow& win) { return win.contains(p.row, p.col); });
        if (!excluded) {
            kept.push_back(p);
            if (static_cast<int>(kept.size()) == k) {
                break;
            }
        }
    }
    return kept;
}

}  // namespace blobsense
