#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blobsense/annotation.hpp"
#include "blobsense/common.hpp"
#include "blobsense/peaks.hpp"
#include "blobsense/tensor.hpp"

// Detection loss with alignment and size invariance, top-k-forgiving
// background loss, and asymmetric weighting:
//
//   L = L_DET + omega * L_BG
//
// L_DET compares each detection patch against the closest blob from a bank
// of Gaussian references recentered on the patch's center of mass; L_BG is
// the masked squared norm of the output, with detection patches and the
// top-k spurious blobs masked out. Reference construction, sigma selection,
// and the mask are constants in backward: the plan is computed from values,
// apply runs the differentiable part against the frozen plan.

namespace blobsense {

struct ReferenceBank {
    std::vector<double> sigmas;

    void validate() const {
        if (sigmas.empty()) {
            throw ConfigError("reference bank must not be empty");
        }
        double prev = 0.0;
        for (double s : sigmas) {
            if (s <= prev) {
                throw ConfigError("bank sigmas must be positive and strictly increasing");
            }
            prev = s;
        }
    }
};

struct LossConfig {
    int patch_size = 33;                     // P, odd
    ReferenceBank bank{{1.5, 3.0, 6.0}};
    int top_k = 3;                           // tolerated false positives
    double omega = 0.01;                     // background down-weight, in [0,1]
    double mass_epsilon = 1e-6;              // center-of-mass degeneracy floor
    PeakParams peak_params{0.0, 5};          // NMS window shared with the peak finder
    bool align_on_output = true;             // false: reference centered on the annotation

    void validate() const {
        if (patch_size <= 0 || patch_size % 2 == 0) {
            throw ConfigError("patch size must be odd and positive");
        }
        bank.validate();
        if (top_k < 0) {
            throw ConfigError("top_k must be >= 0");
        }
        if (omega < 0.0 || omega > 1.0) {
            throw ConfigError("omega must be in [0,1]");
        }
        if (mass_epsilon <= 0.0) {
            throw ConfigError("mass_epsilon must be positive");
        }
        peak_params.validate();
    }
};

template <typename S>
struct LossBreakdownT {
    S l_det = 0;
    S l_bg = 0;
    S total = 0;

    struct PerAnnotation {
        int annotation_index = 0;
        int sigma_index = 0;
        S detection_term = 0;
    };
    std::vector<PerAnnotation> per_annotation;
    std::vector<std::pair<int, int>> masked_centers;  // up to k background exclusions

    TensorT<S> node;  // the differentiable total
};

using LossBreakdown = LossBreakdownT<float>;

/// Intensity centroid of a non-negative patch, in patch coordinates. Falls
/// back to the patch center when total mass is below epsilon.
template <typename S>
std::pair<double, double> center_of_mass(const TensorT<S>& patch, double epsilon) {
    const auto& shape = patch.shape();
    if (shape.size() != 2) {
        throw DimensionError("center_of_mass expects a [P,P] patch");
    }
    const int rows = shape[0], cols = shape[1];
    double mass = 0.0, mr = 0.0, mc = 0.0;
    const S* v = patch.value().data();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double w = static_cast<double>(v[static_cast<std::size_t>(r) * cols + c]);
            if (w < 0.0) {
                throw ValidationError("center_of_mass requires non-negative values");
            }
            mass += w;
            mr += w * r;
            mc += w * c;
        }
    }
    if (mass < epsilon) {
        return {(rows - 1) / 2.0, (cols - 1) / 2.0};
    }
    return {mr / mass, mc / mass};
}

/// Amplitude-1 isotropic Gaussian over patch pixel coordinates.
template <typename S>
TensorT<S> make_reference(double row0, double col0, double sigma, int patch) {
    if (sigma <= 0.0) {
        throw ConfigError("reference sigma must be positive");
    }
    std::vector<S> v(static_cast<std::size_t>(patch) * patch);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < patch; ++r) {
        for (int c = 0; c < patch; ++c) {
            const double d2 = (r - row0) * (r - row0) + (c - col0) * (c - col0);
            v[static_cast<std::size_t>(r) * patch + c] = static_cast<S>(std::exp(-d2 * inv));
        }
    }
    return TensorT<S>::from({patch, patch}, std::move(v));
}

/// Picks the bank blob with the smallest squared distance to the patch,
/// ties broken toward the smallest sigma index.
template <typename S>
std::pair<TensorT<S>, int> select_reference(const TensorT<S>& patch, double row0,
                                            double col0, const ReferenceBank& bank) {
    bank.validate();
    const int p = patch.shape()[0];
    TensorT<S> best;
    int best_index = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < bank.sigmas.size(); ++i) {
        TensorT<S> ref = make_reference<S>(row0, col0, bank.sigmas[i], p);
        double dist = 0.0;
        for (std::size_t j = 0; j < ref.size(); ++j) {
            const double d = static_cast<double>(patch.value()[j]) -
                             static_cast<double>(ref.value()[j]);
            dist += d * d;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = ref;
            best_index = static_cast<int>(i);
        }
    }
    return {best, best_index};
}

/// Squared distance between the patch and its (constant) reference;
/// gradient flows into the patch only.
template <typename S>
TensorT<S> detection_loss(GraphT<S>* g, const TensorT<S>& patch,
                          const TensorT<S>& reference) {
    return sum_squares<S>(g, sub<S>(g, patch, reference));
}

namespace detail {

inline PixelWindow centered_window(int row, int col, int patch, int height, int width) {
    const int half = (patch - 1) / 2;
    return {std::max(0, row - half), std::max(0, col - half),
            std::min(height - 1, row + half), std::min(width - 1, col + half)};
}

}  // namespace detail

/// Binary mask over O: zero inside the P x P detection windows of
/// training-positive annotations and inside P x P windows around the top-k
/// highest-confidence peaks found outside those windows; one elsewhere.
/// Optionally reports the masked peak centers. Constant w.r.t. gradients.
template <typename S>
TensorT<S> background_mask(const TensorT<S>& heatmap, std::span<const Annotation> annotations,
                           int top_k, int patch, const PeakParams& peak_params,
                           std::vector<std::pair<int, int>>* masked_centers = nullptr) {
    const auto& shape = heatmap.shape();
    if (shape.size() != 3 || shape[0] != 1) {
        throw DimensionError("background_mask expects [1,H,W]");
    }
    const int h = shape[1], w = shape[2];

    std::vector<PixelWindow> detection_windows;
    for (const auto& ann : annotations) {
        if (!is_training_positive(ann.label)) {
            continue;
        }
        const auto [r, c] = annotation_center(ann);
        detection_windows.push_back(detail::centered_window(r, c, patch, h, w));
    }

    PeakParams mask_params = peak_params;
    mask_params.threshold = 0.0;
    const auto spurious =
        top_k_peaks<S>(heatmap, mask_params, top_k, detection_windows);

    TensorT<S> mask = TensorT<S>::from({1, h, w}, std::vector<S>(heatmap.size(), S(1)));
    auto zero_window = [&mask, w](const PixelWindow& win) {
        for (int r = win.row_min; r <= win.row_max; ++r) {
            for (int c = win.col_min; c <= win.col_max; ++c) {
                mask.value()[static_cast<std::size_t>(r) * w + c] = S(0);
            }
        }
    };
    for (const auto& win : detection_windows) {
        zero_window(win);
    }
    if (masked_centers != nullptr) {
        masked_centers->clear();
    }
    for (const auto& p : spurious) {
        if (p.confidence <= S(0)) {
            continue;  // a zero response is not a blob
        }
        zero_window(detail::centered_window(p.row, p.col, patch, h, w));
        if (masked_centers != nullptr) {
            masked_centers->emplace_back(p.row, p.col);
        }
    }
    return mask;
}

/// Masked squared norm of the output; gradient is 2 * mask * O.
template <typename S>
TensorT<S> background_loss(GraphT<S>* g, const TensorT<S>& heatmap,
                           const TensorT<S>& mask) {
    return sum_squares<S>(g, heatmap, &mask);
}

/// Everything the differentiable pass treats as constant: per-annotation
/// patch anchors, selected references, and the background mask.
template <typename S>
struct LossPlanT {
    struct Target {
        int annotation_index = 0;
        int center_row = 0;
        int center_col = 0;
        int sigma_index = 0;
        TensorT<S> reference;
    };
    std::vector<Target> targets;
    TensorT<S> mask;
    std::vector<std::pair<int, int>> masked_centers;
    int patch = 0;
    double omega = 0.0;
};

template <typename S>
LossPlanT<S> plan_loss(const TensorT<S>& heatmap, std::span<const Annotation> annotations,
                       const LossConfig& config) {
    config.validate();
    LossPlanT<S> plan;
    plan.patch = config.patch_size;
    plan.omega = config.omega;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const Annotation& ann = annotations[i];
        if (!is_training_positive(ann.label)) {
            continue;
        }
        const auto [row, col] = annotation_center(ann);
        TensorT<S> patch = extract_patch<S>(nullptr, heatmap, row, col, config.patch_size);
        const double mid = (config.patch_size - 1) / 2.0;
        const auto [r0, c0] = config.align_on_output
                                  ? center_of_mass(patch, config.mass_epsilon)
                                  : std::pair<double, double>{mid, mid};
        auto [ref, index] = select_reference(patch, r0, c0, config.bank);
        plan.targets.push_back({static_cast<int>(i), row, col, index, std::move(ref)});
    }
    plan.mask = background_mask<S>(heatmap, annotations, config.top_k, config.patch_size,
                                   config.peak_params, &plan.masked_centers);
    return plan;
}

/// Differentiable pass against a frozen plan.
template <typename S>
LossBreakdownT<S> apply_loss(GraphT<S>* g, const TensorT<S>& heatmap,
                             const LossPlanT<S>& plan) {
    LossBreakdownT<S> out;
    TensorT<S> det_node = TensorT<S>::scalar(S(0));
    for (const auto& target : plan.targets) {
        TensorT<S> patch =
            extract_patch<S>(g, heatmap, target.center_row, target.center_col, plan.patch);
        TensorT<S> term = detection_loss<S>(g, patch, target.reference);
        out.per_annotation.push_back(
            {target.annotation_index, target.sigma_index, term.item()});
        det_node = add<S>(g, det_node, term);
    }
    TensorT<S> bg_node = background_loss<S>(g, heatmap, plan.mask);
    TensorT<S> total_node =
        add<S>(g, det_node, scale<S>(g, bg_node, static_cast<S>(plan.omega)));

    out.l_det = det_node.item();
    out.l_bg = bg_node.item();
    out.total = total_node.item();
    out.masked_centers = plan.masked_centers;
    out.node = total_node;
    return out;
}

/// L = L_DET + omega * L_BG over the whole image. An image with no
/// training-positive annotations is pure background.
template <typename S>
LossBreakdownT<S> total_loss(GraphT<S>* g, const TensorT<S>& heatmap,
                             std::span<const Annotation> annotations,
                             const LossConfig& config) {
    return apply_loss<S>(g, heatmap, plan_loss<S>(heatmap, annotations, config));
}

enum class LossVariant { kFull, kNoAlign, kNoSize, kNoTopK, kNoWeight, kL2Baseline };

inline const char* variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::kFull:
            return "full";
        case LossVariant::kNoAlign:
            return "no-align";
        case LossVariant::kNoSize:
            return "no-size";
        case LossVariant::kNoTopK:
            return "no-topk";
        case LossVariant::kNoWeight:
            return "no-weight";
        case LossVariant::kL2Baseline:
            return "l2-baseline";
    }
    return "?";
}

inline LossVariant variant_from_name(const std::string& name) {
    for (LossVariant v : {LossVariant::kFull, LossVariant::kNoAlign, LossVariant::kNoSize,
                          LossVariant::kNoTopK, LossVariant::kNoWeight,
                          LossVariant::kL2Baseline}) {
        if (name == variant_name(v)) {
            return v;
        }
    }
    throw ConfigError("unknown loss variant: " + name);
}

constexpr LossVariant kAllVariants[] = {LossVariant::kFull,    LossVariant::kNoAlign,
                                        LossVariant::kNoSize,  LossVariant::kNoTopK,
                                        LossVariant::kNoWeight, LossVariant::kL2Baseline};

/// Single-sigma ablations and the L2 baseline use the bank's middle width.
inline double fixed_sigma(const ReferenceBank& bank) {
    return bank.sigmas[bank.sigmas.size() / 2];
}

inline LossConfig apply_variant(LossConfig config, LossVariant variant) {
    switch (variant) {
        case LossVariant::kFull:
        case LossVariant::kL2Baseline:
            break;
        case LossVariant::kNoAlign:
            config.align_on_output = false;
            break;
        case LossVariant::kNoSize:
            config.bank = ReferenceBank{{fixed_sigma(config.bank)}};
            break;
        case LossVariant::kNoTopK:
            config.top_k = 0;
            break;
        case LossVariant::kNoWeight:
            config.omega = 1.0;
            break;
    }
    return config;
}

/// The original Hourglass objective: plain squared error against fixed
/// Gaussians centered on training-positive annotation centers, no masking,
/// no background down-weighting.
template <typename S>
LossBreakdownT<S> l2_baseline_loss(GraphT<S>* g, const TensorT<S>& heatmap,
                                   std::span<const Annotation> annotations,
                                   const LossConfig& config) {
    config.validate();
    const auto& shape = heatmap.shape();
    if (shape.size() != 3 || shape[0] != 1) {
        throw DimensionError("l2_baseline_loss expects [1,H,W]");
    }
    const int h = shape[1], w = shape[2];
    const double sigma = fixed_sigma(config.bank);
    const double inv = 1.0 / (2.0 * sigma * sigma);

    TensorT<S> target = TensorT<S>::zeros({1, h, w});
    for (const auto& ann : annotations) {
        if (!is_training_positive(ann.label)) {
            continue;
        }
        const auto [cr, cc] = annotation_center(ann);
        if (cr < 0 || cr >= h || cc < 0 || cc >= w) {
            throw RangeError("annotation center outside image");
        }
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const double d2 = static_cast<double>(r - cr) * (r - cr) +
                                  static_cast<double>(c - cc) * (c - cc);
                const S v = static_cast<S>(std::exp(-d2 * inv));
                S& t = target.value()[static_cast<std::size_t>(r) * w + c];
                t = std::max(t, v);
            }
        }
    }

    LossBreakdownT<S> out;
    TensorT<S> node = sum_squares<S>(g, sub<S>(g, heatmap, target));
    out.l_det = node.item();
    out.l_bg = S(0);
    out.total = node.item();
    out.node = node;
    return out;
}

/// Variant dispatch used by the trainer and the ablation suite.
template <typename S>
LossBreakdownT<S> compute_loss(GraphT<S>* g, const TensorT<S>& heatmap,
                               std::span<const Annotation> annotations,
                               const LossConfig& base_config, LossVariant variant) {
    if (variant == LossVariant::kL2Baseline) {
        return l2_baseline_loss<S>(g, heatmap, annotations, base_config);
    }
    return total_loss<S>(g, heatmap, annotations, apply_variant(base_config, variant));
}

}  // namespace blobsense
