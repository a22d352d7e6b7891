#include "blobsense/synth.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "blobsense/fsio.hpp"
#include "blobsense/png_io.hpp"

namespace blobsense {

namespace {

constexpr std::array<const char*, 3> kSplits = {"train", "val", "test"};

int split_count(const GenConfig& config, const std::string& split) {
    if (split == "train") {
        return config.n_images.train;
    }
    if (split == "val") {
        return config.n_images.val;
    }
    return config.n_images.test;
}

std::string image_id_for(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d", split.c_str(), index);
    return buf;
}

// Low-pass filtered uniform noise, min-max normalized to [0.1, 0.5].
std::vector<float> background(Rng& rng, int size, double blur_sigma) {
    std::vector<float> noise(static_cast<std::size_t>(size) * size);
    for (auto& v : noise) {
        v = static_cast<float>(rng.uniform());
    }

    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * blur_sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(radius) + 1);
    double norm = 0.0;
    for (int i = 0; i <= radius; ++i) {
        kernel[i] = static_cast<float>(std::exp(-(i * i) / (2.0 * blur_sigma * blur_sigma)));
        norm += (i == 0 ? 1.0 : 2.0) * kernel[i];
    }
    for (auto& k : kernel) {
        k = static_cast<float>(k / norm);
    }

    auto clamp_idx = [size](int i) { return std::clamp(i, 0, size - 1); };
    std::vector<float> tmp(noise.size());
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            double acc = kernel[0] * noise[static_cast<std::size_t>(r) * size + c];
            for (int i = 1; i <= radius; ++i) {
                acc += kernel[i] * (noise[static_cast<std::size_t>(r) * size + clamp_idx(c - i)] +
                                    noise[static_cast<std::size_t>(r) * size + clamp_idx(c + i)]);
            }
            tmp[static_cast<std::size_t>(r) * size + c] = static_cast<float>(acc);
        }
    }
    std::vector<float> out(noise.size());
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            double acc = kernel[0] * tmp[static_cast<std::size_t>(r) * size + c];
            for (int i = 1; i <= radius; ++i) {
                acc += kernel[i] * (tmp[static_cast<std::size_t>(clamp_idx(r - i)) * size + c] +
                                    tmp[static_cast<std::size_t>(clamp_idx(r + i)) * size + c]);
            }
            out[static_cast<std::size_t>(r) * size + c] = static_cast<float>(acc);
        }
    }

    const auto [lo_it, hi_it] = std::minmax_element(out.begin(), out.end());
    const float lo = *lo_it, hi = *hi_it;
    if (hi - lo < 1e-9f) {
        std::fill(out.begin(), out.end(), 0.3f);
    } else {
        for (auto& v : out) {
            v = 0.1f + 0.4f * (v - lo) / (hi - lo);
        }
    }
    return out;
}

struct Finding {
    double center_row, center_col;
    double sigma_row, sigma_col;
    double amplitude;
    Label label;
};

void add_bump(std::vector<float>& img, int size, const Finding& f) {
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double dr = (r - f.center_row) / f.sigma_row;
            const double dc = (c - f.center_col) / f.sigma_col;
            img[static_cast<std::size_t>(r) * size + c] +=
                static_cast<float>(f.amplitude * std::exp(-0.5 * (dr * dr + dc * dc)));
        }
    }
}

nlohmann::json annotation_to_json(const Annotation& ann) {
    return {{"box", {ann.box.row_min, ann.box.col_min, ann.box.row_max, ann.box.col_max}},
            {"label", label_name(ann.label)},
            {"true_center", {ann.true_center_row, ann.true_center_col}}};
}

Annotation annotation_from_json(const nlohmann::json& j) {
    Annotation ann;
    const auto& box = j.at("box");
    ann.box = {box.at(0).get<int>(), box.at(1).get<int>(), box.at(2).get<int>(),
               box.at(3).get<int>()};
    ann.label = label_from_name(j.at("label").get<std::string>());
    const auto& tc = j.at("true_center");
    ann.true_center_row = tc.at(0).get<double>();
    ann.true_center_col = tc.at(1).get<double>();
    return ann;
}

void validate_record(const SampleRecord& record, int image_size) {
    if (std::find(kSplits.begin(), kSplits.end(), record.split) == kSplits.end()) {
        throw ValidationError("record " + record.image_id + ": unknown split '" +
                              record.split + "'");
    }
    for (const auto& ann : record.annotations) {
        const auto& b = ann.box;
        if (b.row_min >= b.row_max || b.col_min >= b.col_max) {
            throw ValidationError("record " + record.image_id + ": degenerate box");
        }
        if (b.row_min < 0 || b.col_min < 0 || b.row_max >= image_size ||
            b.col_max >= image_size) {
            throw ValidationError("record " + record.image_id + ": box out of bounds");
        }
        if (ann.true_center_row < b.row_min || ann.true_center_row > b.row_max ||
            ann.true_center_col < b.col_min || ann.true_center_col > b.col_max) {
            throw ValidationError("record " + record.image_id +
                                  ": true center outside box");
        }
    }
}

}  // namespace

void GenConfig::validate() const {
    if (n_images.train < 0 || n_images.val < 0 || n_images.test < 0) {
        throw ConfigError("split sizes must be non-negative");
    }
    const double psum = p_normal + p_benign + p_high_risk + p_malignant;
    if (std::abs(psum - 1.0) > 1e-9 || p_normal < 0 || p_benign < 0 ||
        p_high_risk < 0 || p_malignant < 0) {
        throw ConfigError("class incidence probabilities must be non-negative and sum to 1");
    }
    if (findings_min < 1 || findings_max < findings_min) {
        throw ConfigError("findings per image must be a range with min >= 1");
    }
    if (!(amp_min > 0.0) || amp_max < amp_min) {
        throw ConfigError("amplitude range invalid");
    }
    if (!(sigma_min > 0.0) || sigma_max < sigma_min) {
        throw ConfigError("sigma range invalid");
    }
    if (looseness < 1.0) {
        throw ConfigError("looseness must be >= 1");
    }
    if (jitter < 0.0 || jitter > 0.45) {
        throw ConfigError("jitter must be in [0, 0.45]");
    }
    if (texture_scale <= 0.0) {
        throw ConfigError("texture scale must be positive");
    }
    const double margin = std::ceil(3.0 * sigma_max) + 1.0;
    if (image_size < 2 * margin + 2) {
        throw ConfigError("image size too small for the configured sigma range");
    }
}

int stratum_of(const SampleRecord& record) {
    int stratum = 0;
    for (const auto& ann : record.annotations) {
        switch (ann.label) {
            case Label::kBenign:
                stratum = std::max(stratum, 1);
                break;
            case Label::kHighRisk:
                stratum = std::max(stratum, 2);
                break;
            case Label::kMalignant:
                stratum = std::max(stratum, 3);
                break;
        }
    }
    return stratum;
}

std::pair<int, int> loose_interval(Rng& rng, double center, double sigma,
                                   double looseness, double jitter, int size) {
    const double inflate = rng.uniform(1.0, looseness);
    const double half = 3.0 * sigma * inflate;
    double shift = rng.uniform(-1.0, 1.0) * jitter * (2.0 * half);
    const double bound = std::max(0.0, half - 1.0);
    shift = std::clamp(shift, -bound, bound);
    int lo = static_cast<int>(std::llround(center + shift - half));
    int hi = static_cast<int>(std::llround(center + shift + half));
    lo = std::clamp(lo, 0, size - 1);
    hi = std::clamp(hi, 0, size - 1);
    return {lo, hi};
}

GenSummary generate(const GenConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) {
        throw IoError("cannot create dataset directory: " + out_dir.string());
    }

    Rng rng(config.seed);
    const int size = config.image_size;
    DatasetManifest manifest;
    manifest.image_size = size;
    GenSummary summary;

    for (const auto* split : kSplits) {
        auto& image_counts = summary.images[split];
        auto& ann_counts = summary.annotations[split];
        image_counts = {0, 0, 0, 0};
        ann_counts = {0, 0, 0};

        const int count = split_count(config, split);
        for (int i = 0; i < count; ++i) {
            SampleRecord record;
            record.image_id = image_id_for(split, i);
            record.image_path = "images/" + record.image_id + ".png";
            record.split = split;

            // image class by incidence
            const double u = rng.uniform();
            int stratum = 0;
            if (u >= config.p_normal) {
                if (u < config.p_normal + config.p_benign) {
                    stratum = 1;
                } else if (u < config.p_normal + config.p_benign + config.p_high_risk) {
                    stratum = 2;
                } else {
                    stratum = 3;
                }
            }
            image_counts[stratum] += 1;

            std::vector<float> img = background(rng, size, config.texture_scale);

            if (stratum > 0) {
                const int findings =
                    config.findings_min +
                    rng.uniform_int(config.findings_max - config.findings_min + 1);
                for (int f = 0; f < findings; ++f) {
                    // the first finding carries the image class; the rest are
                    // uniform over labels of equal or lower severity
                    const int label_index = f == 0 ? stratum : 1 + rng.uniform_int(stratum);
                    Finding finding;
                    finding.label = static_cast<Label>(label_index - 1);
                    finding.sigma_row = rng.uniform(config.sigma_min, config.sigma_max);
                    finding.sigma_col = rng.uniform(config.sigma_min, config.sigma_max);
                    const double margin_r = std::ceil(3.0 * finding.sigma_row) + 1.0;
                    const double margin_c = std::ceil(3.0 * finding.sigma_col) + 1.0;
                    finding.center_row = rng.uniform(margin_r, size - 1 - margin_r);
                    finding.center_col = rng.uniform(margin_c, size - 1 - margin_c);
                    // benign findings sit in the lower half of the amplitude
                    // range, as hard negatives
                    const double amp_hi = finding.label == Label::kBenign
                                              ? config.amp_min +
                                                    0.5 * (config.amp_max - config.amp_min)
                                              : config.amp_max;
                    finding.amplitude = rng.uniform(config.amp_min, amp_hi);
                    add_bump(img, size, finding);

                    Annotation ann;
                    ann.label = finding.label;
                    ann.true_center_row = finding.center_row;
                    ann.true_center_col = finding.center_col;
                    std::tie(ann.box.row_min, ann.box.row_max) =
                        loose_interval(rng, finding.center_row, finding.sigma_row,
                                       config.looseness, config.jitter, size);
                    std::tie(ann.box.col_min, ann.box.col_max) =
                        loose_interval(rng, finding.center_col, finding.sigma_col,
                                       config.looseness, config.jitter, size);
                    record.annotations.push_back(ann);
                    ann_counts[label_index - 1] += 1;
                }
            }

            GrayImage16 png;
            png.width = size;
            png.height = size;
            png.pixels.resize(img.size());
            for (std::size_t p = 0; p < img.size(); ++p) {
                const float v = std::clamp(img[p], 0.0f, 1.0f);
                png.pixels[p] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
            }
            write_png_gray16(out_dir / record.image_path, png);
            manifest.records.push_back(std::move(record));
        }
    }

    nlohmann::json records = nlohmann::json::array();
    for (const auto& record : manifest.records) {
        nlohmann::json anns = nlohmann::json::array();
        for (const auto& ann : record.annotations) {
            anns.push_back(annotation_to_json(ann));
        }
        records.push_back({{"image_id", record.image_id},
                           {"image_path", record.image_path},
                           {"split", record.split},
                           {"annotations", anns}});
    }
    const nlohmann::json manifest_json = {
        {"version", manifest.version}, {"image_size", size}, {"records", records}};
    write_file_atomic(out_dir / "manifest.json", manifest_json.dump(1));

    nlohmann::json summary_json = {{"images", nlohmann::json::object()},
                                   {"annotations", nlohmann::json::object()}};
    for (const auto& [split, counts] : summary.images) {
        summary_json["images"][split] = counts;
    }
    for (const auto& [split, counts] : summary.annotations) {
        summary_json["annotations"][split] = counts;
    }
    write_file_atomic(out_dir / "summary.json", summary_json.dump(1));
    return summary;
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
    const auto path = dataset_dir / "manifest.json";
    if (!std::filesystem::exists(path)) {
        throw IoError("missing manifest: " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed manifest: " + std::string(e.what()));
    }
    DatasetManifest manifest;
    try {
        manifest.version = j.at("version").get<int>();
        manifest.image_size = j.at("image_size").get<int>();
        for (const auto& rj : j.at("records")) {
            SampleRecord record;
            record.image_id = rj.at("image_id").get<std::string>();
            record.image_path = rj.at("image_path").get<std::string>();
            record.split = rj.at("split").get<std::string>();
            for (const auto& aj : rj.at("annotations")) {
                record.annotations.push_back(annotation_from_json(aj));
            }
            manifest.records.push_back(std::move(record));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed manifest: " + std::string(e.what()));
    }
    return manifest;
}

std::vector<SampleRecord> load_split(const std::filesystem::path& dataset_dir,
                                     const std::string& split) {
    const DatasetManifest manifest = load_manifest(dataset_dir);
    std::vector<SampleRecord> records;
    for (const auto& record : manifest.records) {
        if (record.split != split) {
            continue;
        }
        validate_record(record, manifest.image_size);
        if (!std::filesystem::exists(dataset_dir / record.image_path)) {
            throw ValidationError("record " + record.image_id + ": missing image file " +
                                  record.image_path);
        }
        records.push_back(record);
    }
    return records;
}

GenSummary load_summary(const std::filesystem::path& dataset_dir) {
    const auto path = dataset_dir / "summary.json";
    if (!std::filesystem::exists(path)) {
        throw IoError("missing summary: " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
        GenSummary summary;
        for (const auto& [split, counts] : j.at("images").items()) {
            summary.images[split] = counts.get<std::array<long, 4>>();
        }
        for (const auto& [split, counts] : j.at("annotations").items()) {
            summary.annotations[split] = counts.get<std::array<long, 3>>();
        }
        return summary;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed summary: " + std::string(e.what()));
    }
}

std::vector<float> load_image(const std::filesystem::path& dataset_dir,
                              const SampleRecord& record, int expected_size) {
    const GrayImage16 png = read_png_gray16(dataset_dir / record.image_path);
    if (png.width != expected_size || png.height != expected_size) {
        throw ValidationError("record " + record.image_id + ": image size " +
                              std::to_string(png.width) + "x" + std::to_string(png.height) +
                              " does not match declared " + std::to_string(expected_size));
    }
    std::vector<float> pixels(png.pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = static_cast<float>(png.pixels[i]) / 65535.0f;
    }
    return pixels;
}

LoadedDataset load_into_memory(const std::filesystem::path& dataset_dir,
                               const std::string& split) {
    LoadedDataset dataset;
    const DatasetManifest manifest = load_manifest(dataset_dir);
    dataset.image_size = manifest.image_size;
    for (auto& record : load_split(dataset_dir, split)) {
        LoadedSample sample;
        sample.pixels = load_image(dataset_dir, record, manifest.image_size);
        sample.record = std::move(record);
        dataset.samples.push_back(std::move(sample));
    }
    return dataset;
}

StratifiedSampler::StratifiedSampler(std::span<const SampleRecord> records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        strata_[stratum_of(records[i])].push_back(i);
    }
    for (int s = 0; s < 4; ++s) {
        if (strata_[s].empty()) {
            throw ConfigError(std::string("stratified sampler: stratum '") +
                              kStratumNames[s] + "' is empty");
        }
    }
}

std::size_t StratifiedSampler::draw(Rng& rng) const {
    const int stratum = rng.uniform_int(4);
    const auto& ids = strata_[stratum];
    return ids[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
}

}  // namespace blobsense
