#include <cmath>
#include <filesystem>
#include <set>

#include <unistd.h>

#include <doctest.h>

#include "blobsense/fsio.hpp"
#include "blobsense/png_io.hpp"
#include "blobsense/synth.hpp"

using namespace blobsense;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("blobsense_synth_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

GenConfig small_config() {
    GenConfig cfg;
    cfg.n_images = {24, 8, 8};
    cfg.image_size = 64;
    cfg.p_normal = 0.4;
    cfg.p_benign = 0.2;
    cfg.p_high_risk = 0.2;
    cfg.p_malignant = 0.2;
    cfg.sigma_max = 3.5;
    cfg.texture_scale = 3.0;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("png round trip is exact") {
    TempDir tmp;
    GrayImage16 img;
    img.width = 21;
    img.height = 13;
    Rng rng(3);
    img.pixels.resize(21 * 13);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint16_t>(rng.next_u64() & 0xffff);
    }
    write_png_gray16(tmp.path / "t.png", img);
    const GrayImage16 back = read_png_gray16(tmp.path / "t.png");
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("degenerate looseness reproduces the tight box") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const double sigma = rng.uniform(1.5, 5.0);
        const double center = rng.uniform(20.0, 70.0);
        Rng draw(100 + i);
        const auto [lo, hi] = loose_interval(draw, center, sigma, 1.0, 0.0, 96);
        CHECK(lo == static_cast<int>(std::llround(center - 3.0 * sigma)));
        CHECK(hi == static_cast<int>(std::llround(center + 3.0 * sigma)));
    }
}

TEST_CASE("loose intervals always contain the true center") {
    Rng rng(13);
    for (int i = 0; i < 500; ++i) {
        const double sigma = rng.uniform(1.5, 6.0);
        const double center = rng.uniform(5.0, 90.0);
        const auto [lo, hi] = loose_interval(rng, center, sigma, 2.5, 0.45, 96);
        CHECK(lo <= center);
        CHECK(center <= hi);
        CHECK(lo < hi);
    }
}

TEST_CASE("generation is byte-identical for identical config and seed") {
    TempDir a, b;
    GenConfig cfg = small_config();
    generate(cfg, a.path);
    generate(cfg, b.path);

    CHECK(read_file(a.path / "manifest.json") == read_file(b.path / "manifest.json"));
    CHECK(read_file(a.path / "summary.json") == read_file(b.path / "summary.json"));
    for (const auto& record : load_manifest(a.path).records) {
        CHECK(read_file(a.path / record.image_path) == read_file(b.path / record.image_path));
    }
}

TEST_CASE("a freshly generated dataset loads cleanly and matches its summary") {
    TempDir tmp;
    GenConfig cfg = small_config();
    const GenSummary emitted = generate(cfg, tmp.path);

    std::array<long, 3> loaded_anns = {0, 0, 0};
    long images = 0;
    for (const char* split : {"train", "val", "test"}) {
        const auto records = load_split(tmp.path, split);
        images += static_cast<long>(records.size());
        std::array<long, 3> split_anns = {0, 0, 0};
        for (const auto& record : records) {
            for (const auto& ann : record.annotations) {
                split_anns[static_cast<int>(ann.label)] += 1;
                loaded_anns[static_cast<int>(ann.label)] += 1;
                CHECK(ann.box.row_min <= ann.true_center_row);
                CHECK(ann.true_center_row <= ann.box.row_max);
                CHECK(ann.box.col_min <= ann.true_center_col);
                CHECK(ann.true_center_col <= ann.box.col_max);
            }
        }
        CHECK(split_anns == emitted.annotations.at(split));
    }
    CHECK(images == 24 + 8 + 8);

    const GenSummary loaded = load_summary(tmp.path);
    CHECK(loaded.annotations == emitted.annotations);
    CHECK(loaded.images == emitted.images);

    // pixels decode into [0,1]
    const auto data = load_into_memory(tmp.path, "val");
    CHECK(data.image_size == 64);
    for (const auto& sample : data.samples) {
        for (float v : sample.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("malformed manifests are rejected with the record named") {
    TempDir tmp;
    const char* manifest = R"({
 "version": 1,
 "image_size": 64,
 "records": [
  {"image_id": "train_000000", "image_path": "images/train_000000.png",
   "split": "train",
   "annotations": [{"box": [40, 10, 20, 30], "label": "malignant",
                    "true_center": [30.0, 20.0]}]}
 ]
})";
    write_file_atomic(tmp.path / "manifest.json", manifest);
    try {
        load_split(tmp.path, "train");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("train_000000") != std::string::npos);
    }

    write_file_atomic(tmp.path / "manifest.json", "{not json");
    CHECK_THROWS_AS(load_manifest(tmp.path), ValidationError);
    TempDir empty;
    CHECK_THROWS_AS(load_manifest(empty.path), IoError);
}

TEST_CASE("unknown labels are rejected") {
    TempDir tmp;
    const char* manifest = R"({
 "version": 1,
 "image_size": 64,
 "records": [
  {"image_id": "x", "image_path": "images/x.png", "split": "train",
   "annotations": [{"box": [1, 1, 9, 9], "label": "suspicious",
                    "true_center": [5.0, 5.0]}]}
 ]
})";
    write_file_atomic(tmp.path / "manifest.json", manifest);
    CHECK_THROWS_AS(load_manifest(tmp.path), ValidationError);
}

TEST_CASE("class counts track the configured incidence (binomial bound)") {
    TempDir tmp;
    GenConfig cfg;
    cfg.n_images = {10000, 0, 0};
    cfg.image_size = 32;
    cfg.p_normal = 0.90;
    cfg.p_benign = 0.06;
    cfg.p_high_risk = 0.03;
    cfg.p_malignant = 0.01;
    cfg.findings_min = cfg.findings_max = 1;
    cfg.sigma_min = 1.5;
    cfg.sigma_max = 3.0;
    cfg.texture_scale = 2.0;
    cfg.seed = 202;
    const GenSummary summary = generate(cfg, tmp.path);

    const auto& counts = summary.images.at("train");
    const double expectations[4] = {9000, 600, 300, 100};
    const double probs[4] = {0.90, 0.06, 0.03, 0.01};
    for (int s = 0; s < 4; ++s) {
        const double sd = std::sqrt(10000.0 * probs[s] * (1.0 - probs[s]));
        CHECK(std::abs(counts[s] - expectations[s]) <= 3.0 * sd);
    }
}

TEST_CASE("stratified sampler draws uniformly across strata") {
    TempDir tmp;
    GenConfig cfg = small_config();
    cfg.n_images = {200, 0, 0};
    generate(cfg, tmp.path);
    const auto records = load_split(tmp.path, "train");
    StratifiedSampler sampler(records);

    SUBCASE("8000 draws land within 3 sigma of 2000 per stratum") {
        Rng rng(99);
        std::array<long, 4> counts = {0, 0, 0, 0};
        for (int i = 0; i < 8000; ++i) {
            counts[stratum_of(records[sampler.draw(rng)])] += 1;
        }
        const double sd = std::sqrt(8000.0 * 0.25 * 0.75);
        for (long c : counts) {
            CHECK(std::abs(c - 2000.0) <= 3.0 * sd);
        }
    }

    SUBCASE("identical seeds give identical streams") {
        Rng a(5), b(5);
        for (int i = 0; i < 10000; ++i) {
            CHECK(sampler.draw(a) == sampler.draw(b));
        }
    }
}

TEST_CASE("a single image per stratum cycles among exactly four ids") {
    std::vector<SampleRecord> records(4);
    records[0].image_id = "n";
    records[1].image_id = "b";
    records[1].annotations.push_back({{1, 1, 5, 5}, Label::kBenign, 3, 3});
    records[2].image_id = "h";
    records[2].annotations.push_back({{1, 1, 5, 5}, Label::kHighRisk, 3, 3});
    records[3].image_id = "m";
    records[3].annotations.push_back({{1, 1, 5, 5}, Label::kMalignant, 3, 3});

    StratifiedSampler sampler(records);
    Rng rng(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 200; ++i) {
        seen.insert(sampler.draw(rng));
    }
    CHECK(seen == std::set<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("an empty stratum is a configuration error naming the stratum") {
    std::vector<SampleRecord> records(2);
    records[0].image_id = "n";
    records[1].image_id = "m";
    records[1].annotations.push_back({{1, 1, 5, 5}, Label::kMalignant, 3, 3});
    try {
        StratifiedSampler sampler(records);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("benign") != std::string::npos);
    }
}

TEST_SUITE_END();
