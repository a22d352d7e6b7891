#pragma once

#include <cmath>
#include <string>

#include "blobsense/common.hpp"

namespace blobsense {

enum class Label { kBenign, kHighRisk, kMalignant };

inline const char* label_name(Label label) {
    switch (label) {
        case Label::kBenign:
            return "benign";
        case Label::kHighRisk:
            return "high_risk";
        case Label::kMalignant:
            return "malignant";
    }
    return "?";
}

inline Label label_from_name(const std::string& name) {
    if (name == "benign") {
        return Label::kBenign;
    }
    if (name == "high_risk") {
        return Label::kHighRisk;
    }
    if (name == "malignant") {
        return Label::kMalignant;
    }
    throw ValidationError("unknown annotation label: " + name);
}

/// Training treats high-risk and malignant as detection targets; evaluation
/// counts only malignant as positive.
inline bool is_training_positive(Label label) {
    return label == Label::kHighRisk || label == Label::kMalignant;
}

struct BoundingBox {
    int row_min = 0, col_min = 0, row_max = 0, col_max = 0;

    bool contains(int row, int col) const {
        return row >= row_min && row <= row_max && col >= col_min && col <= col_max;
    }

    long area() const {
        return static_cast<long>(row_max - row_min + 1) * (col_max - col_min + 1);
    }
};

/// Loose axis-aligned box around a finding. true_center is the generator's
/// hidden ground truth, persisted for diagnostics only; evaluation and
/// training use the box alone.
struct Annotation {
    BoundingBox box;
    Label label = Label::kBenign;
    double true_center_row = 0.0;
    double true_center_col = 0.0;
};

/// Patch anchor: the box center, rounded to the nearest pixel.
inline std::pair<int, int> annotation_center(const Annotation& ann) {
    return {static_cast<int>(std::llround((ann.box.row_min + ann.box.row_max) / 2.0)),
            static_cast<int>(std::llround((ann.box.col_min + ann.box.col_max) / 2.0))};
}

}  // namespace blobsense
