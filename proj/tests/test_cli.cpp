#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <doctest.h>

#include "blobsense/fsio.hpp"

using namespace blobsense;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("blobsense_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BLOBSENSE_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kGenConfig = R"({
  "n_images": {"train": 10, "val": 2, "test": 6},
  "image_size": 32,
  "incidence": {"normal": 0.3, "benign": 0.2, "high_risk": 0.2, "malignant": 0.3},
  "findings_per_image": [1, 1],
  "amplitude": [0.4, 0.7],
  "sigma": [1.5, 2.5],
  "looseness": 1.5,
  "jitter": 0.1,
  "texture_scale": 2.0,
  "seed": 3
})";

const char* kTrainConfig = R"({
  "model": {"stacks": 1, "depth": 2, "channels": 4, "seed": 0},
  "optimizer": {"learning_rate": 0.001},
  "images_per_epoch": 4,
  "phase1": {"crop_size": 32, "epochs": 0},
  "phase2": {"epochs": 1},
  "loss": {"patch_size": 9, "bank": [1.5, 2.5], "top_k": 3, "omega": 0.01},
  "seed": 1
})";

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.is_regular_file()) {
            rel.push_back(fs::relative(entry.path(), a));
        }
    }
    for (const auto& r : rel) {
        if (!fs::exists(b / r) || read_file(a / r) != read_file(b / r)) {
            return false;
        }
    }
    std::size_t b_count = 0;
    for (const auto& entry : fs::recursive_directory_iterator(b)) {
        b_count += entry.is_regular_file();
    }
    return b_count == rel.size();
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("full pipeline: gen, train, eval, peaks, plot") {
    TempDir tmp;
    write_file_atomic(tmp.path / "gen.json", kGenConfig);
    write_file_atomic(tmp.path / "train.json", kTrainConfig);
    const std::string data = (tmp.path / "data").string();

    REQUIRE(run_cli("gen --config " + (tmp.path / "gen.json").string() + " --out " + data) == 0);
    CHECK(fs::exists(tmp.path / "data" / "manifest.json"));
    CHECK(fs::exists(tmp.path / "data.run_manifest.json"));

    const std::string run = (tmp.path / "run").string();
    REQUIRE(run_cli("train --data " + data + " --config " +
                    (tmp.path / "train.json").string() + " --out " + run) == 0);
    CHECK(fs::exists(tmp.path / "run" / "model.ckpt"));
    CHECK(fs::exists(tmp.path / "run" / "trace.csv"));
    CHECK(fs::exists(tmp.path / "run.run_manifest.json"));

    const std::string froc = (tmp.path / "froc.csv").string();
    REQUIRE(run_cli("eval --data " + data + " --ckpt " + run + "/model.ckpt --split test --out " +
                    froc + " --thresholds 0.2,0.5,0.8") == 0);
    const std::string csv = read_file(froc);
    CHECK(csv.rfind("threshold,sensitivity,fpi\n", 0) == 0);

    const std::string peaks = (tmp.path / "peaks.csv").string();
    REQUIRE(run_cli("peaks --data " + data + " --ckpt " + run +
                    "/model.ckpt --split test --out " + peaks + " --threshold 0.5") == 0);
    CHECK(read_file(peaks).rfind("image_id,row,col,confidence\n", 0) == 0);

    const std::string svg = (tmp.path / "plot.svg").string();
    REQUIRE(run_cli("plot --in " + froc + " --out " + svg) == 0);
    CHECK(read_file(svg).find("<svg") != std::string::npos);
}

TEST_CASE("gen is reproducible: identical directory contents") {
    TempDir tmp;
    write_file_atomic(tmp.path / "gen.json", kGenConfig);
    const std::string a = (tmp.path / "a").string();
    const std::string b = (tmp.path / "b").string();
    REQUIRE(run_cli("gen --config " + (tmp.path / "gen.json").string() + " --out " + a +
                    " --seed 7") == 0);
    REQUIRE(run_cli("gen --config " + (tmp.path / "gen.json").string() + " --out " + b +
                    " --seed 7") == 0);
    CHECK(same_tree(tmp.path / "a", tmp.path / "b"));
}

TEST_CASE("train twice with the same seed produces identical checkpoints") {
    TempDir tmp;
    write_file_atomic(tmp.path / "gen.json", kGenConfig);
    write_file_atomic(tmp.path / "train.json", kTrainConfig);
    const std::string data = (tmp.path / "data").string();
    REQUIRE(run_cli("gen --config " + (tmp.path / "gen.json").string() + " --out " + data) == 0);

    for (const char* run : {"r1", "r2"}) {
        REQUIRE(run_cli("train --data " + data + " --config " +
                        (tmp.path / "train.json").string() + " --out " +
                        (tmp.path / run).string()) == 0);
    }
    CHECK(read_file(tmp.path / "r1" / "model.ckpt") ==
          read_file(tmp.path / "r2" / "model.ckpt"));
    CHECK(read_file(tmp.path / "r1" / "trace.csv") ==
          read_file(tmp.path / "r2" / "trace.csv"));
}

TEST_CASE("exit codes distinguish usage, config, io, and validation failures") {
    TempDir tmp;
    CHECK(run_cli("--bogus-flag") == 2);
    CHECK(run_cli("gen") == 2);  // missing required --out
    CHECK(run_cli("nonsense-subcommand") == 2);

    // io: missing config file
    CHECK(run_cli("gen --config " + (tmp.path / "missing.json").string() + " --out " +
                  (tmp.path / "d").string()) == 4);

    // config: invalid incidence sum
    write_file_atomic(tmp.path / "bad.json",
                      R"({"incidence": {"normal": 0.5, "benign": 0.1, "high_risk": 0.1,
                          "malignant": 0.1}})");
    CHECK(run_cli("gen --config " + (tmp.path / "bad.json").string() + " --out " +
                  (tmp.path / "d").string()) == 3);

    // io: eval on a missing checkpoint
    CHECK(run_cli("eval --data " + (tmp.path / "nope").string() + " --ckpt " +
                  (tmp.path / "nope.ckpt").string() + " --out " +
                  (tmp.path / "o.csv").string()) == 4);

    // validation: checkpoint is garbage
    write_file_atomic(tmp.path / "garbage.ckpt", "garbage");
    write_file_atomic(tmp.path / "gen.json", kGenConfig);
    REQUIRE(run_cli("gen --config " + (tmp.path / "gen.json").string() + " --out " +
                    (tmp.path / "data").string()) == 0);
    CHECK(run_cli("eval --data " + (tmp.path / "data").string() + " --ckpt " +
                  (tmp.path / "garbage.ckpt").string() + " --out " +
                  (tmp.path / "o.csv").string()) == 5);
}

TEST_SUITE_END();
