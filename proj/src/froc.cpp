#include "blobsense/froc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "blobsense/fsio.hpp"

namespace blobsense {

MatchResult match(std::span<const Peak> peaks, std::span<const Annotation> annotations) {
    MatchResult result;
    result.peak_annotation.assign(peaks.size(), -1);
    result.annotation_hit.assign(annotations.size(), false);
    for (const auto& ann : annotations) {
        result.malignant_total += ann.label == Label::kMalignant;
    }

    for (std::size_t p = 0; p < peaks.size(); ++p) {
        long best_area = 0;
        int best_index = -1;
        bool in_malignant = false;
        for (std::size_t a = 0; a < annotations.size(); ++a) {
            if (!annotations[a].box.contains(peaks[p].row, peaks[p].col)) {
                continue;
            }
            result.annotation_hit[a] = true;
            in_malignant |= annotations[a].label == Label::kMalignant;
            const long area = annotations[a].box.area();
            if (best_index < 0 || area < best_area) {
                best_area = area;
                best_index = static_cast<int>(a);
            }
        }
        result.peak_annotation[p] = best_index;
        result.false_positives += !in_malignant;
    }

    for (std::size_t a = 0; a < annotations.size(); ++a) {
        if (annotations[a].label == Label::kMalignant && result.annotation_hit[a]) {
            result.malignant_hit += 1;
        }
    }
    return result;
}

std::vector<FrocPoint> froc_curve(
    const std::vector<std::vector<Peak>>& peaks_per_image,
    const std::vector<std::vector<Annotation>>& annotations_per_image,
    std::span<const double> thresholds) {
    if (peaks_per_image.size() != annotations_per_image.size()) {
        throw DimensionError("froc_curve: per-image list sizes differ");
    }
    if (peaks_per_image.empty()) {
        throw ValidationError("froc_curve: empty split");
    }
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (thresholds[i] < thresholds[i - 1]) {
            throw ConfigError("thresholds must be sorted ascending");
        }
    }
    long malignant_total = 0;
    for (const auto& anns : annotations_per_image) {
        for (const auto& ann : anns) {
            malignant_total += ann.label == Label::kMalignant;
        }
    }
    if (malignant_total == 0) {
        throw ValidationError("froc_curve: split has no malignant annotations; "
                              "sensitivity is undefined");
    }

    std::vector<FrocPoint> curve;
    curve.reserve(thresholds.size());
    const double images = static_cast<double>(peaks_per_image.size());
    for (double tau : thresholds) {
        long hits = 0, fps = 0;
        for (std::size_t i = 0; i < peaks_per_image.size(); ++i) {
            std::vector<Peak> kept;
            for (const auto& p : peaks_per_image[i]) {
                if (static_cast<double>(p.confidence) >= tau) {
                    kept.push_back(p);
                }
            }
            const MatchResult m = match(kept, annotations_per_image[i]);
            hits += m.malignant_hit;
            fps += m.false_positives;
        }
        curve.push_back({tau, static_cast<double>(hits) / static_cast<double>(malignant_total),
                         static_cast<double>(fps) / images});
    }
    return curve;
}

std::vector<FrocPoint> froc_curve(
    const std::vector<Tensor>& heatmaps,
    const std::vector<std::vector<Annotation>>& annotations_per_image,
    std::span<const double> thresholds, const PeakParams& params) {
    PeakParams base = params;
    base.threshold = 0.0;
    std::vector<std::vector<Peak>> peaks;
    peaks.reserve(heatmaps.size());
    for (const auto& heatmap : heatmaps) {
        peaks.push_back(find_peaks<float>(heatmap, base));
    }
    return froc_curve(peaks, annotations_per_image, thresholds);
}

std::optional<FrocPoint> operating_point(std::span<const FrocPoint> curve,
                                         double max_fpi) {
    if (curve.empty()) {
        throw ValidationError("operating_point: empty curve");
    }
    std::optional<FrocPoint> best;
    for (const auto& point : curve) {
        if (point.fpi > max_fpi) {
            continue;
        }
        if (!best || point.sensitivity > best->sensitivity ||
            (point.sensitivity == best->sensitivity && point.fpi < best->fpi)) {
            best = point;
        }
    }
    return best;
}

void write_froc_csv(const std::filesystem::path& path, std::span<const FrocPoint> curve) {
    std::string out = "threshold,sensitivity,fpi\n";
    char line[128];
    for (const auto& point : curve) {
        std::snprintf(line, sizeof(line), "%.10g,%.10g,%.10g\n", point.threshold,
                      point.sensitivity, point.fpi);
        out += line;
    }
    write_file_atomic(path, out);
}

std::vector<FrocPoint> read_froc_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "threshold,sensitivity,fpi") {
        throw ValidationError("bad froc csv header in " + path.string());
    }
    std::vector<FrocPoint> curve;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        FrocPoint point;
        if (std::sscanf(line.c_str(), "%lg,%lg,%lg", &point.threshold, &point.sensitivity,
                        &point.fpi) != 3) {
            throw ValidationError("bad froc csv row: " + line);
        }
        curve.push_back(point);
    }
    return curve;
}

void write_curves_svg(const std::filesystem::path& path,
                      std::span<const NamedCurve> curves) {
    constexpr int kWidth = 640, kHeight = 480;
    constexpr int kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;
    constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                       "#ff7f0e", "#9467bd", "#8c564b"};

    double max_fpi = 1.0;
    for (const auto& curve : curves) {
        for (const auto& point : curve.points) {
            max_fpi = std::max(max_fpi, point.fpi);
        }
    }

    auto x_of = [&](double fpi) {
        return kLeft + (kWidth - kLeft - kRight) * (fpi / max_fpi);
    };
    auto y_of = [&](double sens) {
        return kHeight - kBottom - (kHeight - kTop - kBottom) * sens;
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight
        << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << y_of(0) << "\" x2=\"" << x_of(max_fpi)
        << "\" y2=\"" << y_of(0) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << y_of(0) << "\" x2=\"" << kLeft
        << "\" y2=\"" << y_of(1) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fpi = max_fpi * i / 5.0;
        const double sens = i / 5.0;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2g", fpi);
        svg << "<text x=\"" << x_of(fpi) << "\" y=\"" << kHeight - kBottom + 18
            << "\" font-size=\"11\" text-anchor=\"middle\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.1f", sens);
        svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << y_of(sens) + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
    }
    svg << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 12
        << "\" font-size=\"13\" text-anchor=\"middle\">false positives per image</text>\n";
    svg << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << (kTop + kHeight - kBottom) / 2 << ")\">sensitivity</text>\n";

    for (std::size_t i = 0; i < curves.size(); ++i) {
        const char* color = kColors[i % 6];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& point : curves[i].points) {
            svg << x_of(point.fpi) << "," << y_of(point.sensitivity) << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << kWidth - kRight - 150 << "\" y=\"" << kTop + 16 + 16 * i
            << "\" font-size=\"12\" fill=\"" << color << "\">" << curves[i].name
            << "</text>\n";
    }
    svg << "</svg>\n";
    write_file_atomic(path, svg.str());
}

}  // namespace blobsense
