#include "blobsense/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include <json.hpp>

#include "blobsense/fsio.hpp"

namespace blobsense {

namespace {

constexpr const char* kMagic = "BLOBSENSE-CKPT 1";

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

void append_raw(std::string& blob, const void* data, std::size_t bytes) {
    blob.append(static_cast<const char*>(data), bytes);
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    nlohmann::json manifest = nlohmann::json::array();
    std::string blob;

    for (const auto& p : checkpoint.params) {
        manifest.push_back({{"name", p.name},
                            {"dtype", "f32"},
                            {"shape", p.tensor.shape()},
                            {"offset", blob.size()}});
        append_raw(blob, p.tensor.value().data(), p.tensor.size() * sizeof(float));
    }
    for (const auto& [name, values] : checkpoint.moments) {
        manifest.push_back({{"name", name},
                            {"dtype", "f64"},
                            {"shape", {static_cast<int>(values.size())}},
                            {"offset", blob.size()}});
        append_raw(blob, values.data(), values.size() * sizeof(double));
    }

    nlohmann::json header = {
        {"version", 1},
        {"config",
         {{"stacks", checkpoint.config.stacks},
          {"depth", checkpoint.config.depth},
          {"channels", checkpoint.config.channels},
          {"seed", checkpoint.config.seed}}},
        {"tensors", manifest},
        {"meta", checkpoint.meta},
    };
    const std::string header_text = header.dump(2);

    std::string out;
    out += kMagic;
    out += '\n';
    out += std::to_string(header_text.size());
    out += '\n';
    out += header_text;
    out += '\n';
    out += blob;
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    std::size_t pos = data.find('\n');
    if (pos == std::string::npos || data.substr(0, pos) != kMagic) {
        throw ValidationError("not a checkpoint file: " + path.string());
    }
    std::size_t len_end = data.find('\n', pos + 1);
    if (len_end == std::string::npos) {
        throw ValidationError("truncated checkpoint header: " + path.string());
    }
    std::size_t header_len = 0;
    try {
        header_len = std::stoull(data.substr(pos + 1, len_end - pos - 1));
    } catch (const std::exception&) {
        throw ValidationError("malformed checkpoint header length: " + path.string());
    }
    const std::size_t header_start = len_end + 1;
    if (header_start + header_len + 1 > data.size()) {
        throw ValidationError("truncated checkpoint: " + path.string());
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(header_start, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed checkpoint header: " + std::string(e.what()));
    }

    Checkpoint checkpoint;
    try {
        const auto& cfg = header.at("config");
        checkpoint.config.stacks = cfg.at("stacks").get<int>();
        checkpoint.config.depth = cfg.at("depth").get<int>();
        checkpoint.config.channels = cfg.at("channels").get<int>();
        checkpoint.config.seed = cfg.at("seed").get<std::uint64_t>();
        if (header.contains("meta")) {
            checkpoint.meta =
                header.at("meta").get<std::map<std::string, std::string>>();
        }

        const char* payload = data.data() + header_start + header_len + 1;
        const std::size_t payload_size = data.size() - header_start - header_len - 1;
        for (const auto& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::string dtype = entry.at("dtype").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<int>>();
            const std::size_t offset = entry.at("offset").get<std::size_t>();
            const std::size_t count = shape_size(shape);
            if (dtype == "f32") {
                if (offset + count * sizeof(float) > payload_size) {
                    throw ValidationError("checkpoint payload out of bounds: " + name);
                }
                std::vector<float> values(count);
                std::memcpy(values.data(), payload + offset, count * sizeof(float));
                checkpoint.params.push_back(
                    {name, Tensor::from(shape, std::move(values), true)});
            } else if (dtype == "f64") {
                if (offset + count * sizeof(double) > payload_size) {
                    throw ValidationError("checkpoint payload out of bounds: " + name);
                }
                std::vector<double> values(count);
                std::memcpy(values.data(), payload + offset, count * sizeof(double));
                checkpoint.moments.emplace_back(name, std::move(values));
            } else {
                throw ValidationError("unknown checkpoint dtype: " + dtype);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed checkpoint: " + std::string(e.what()));
    }
    return checkpoint;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
    Model model = Model::build(checkpoint.config);
    auto& params = model.parameters();
    if (params.size() != checkpoint.params.size()) {
        throw ValidationError("checkpoint parameter count does not match config");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& stored = checkpoint.params[i];
        if (stored.name != params[i].name) {
            throw ValidationError("checkpoint parameter name mismatch: " + stored.name);
        }
        if (stored.tensor.shape() != params[i].tensor.shape()) {
            throw ValidationError("checkpoint shape mismatch for " + stored.name);
        }
        std::copy(stored.tensor.value().begin(), stored.tensor.value().end(),
                  params[i].tensor.value().begin());
    }
    return model;
}

Checkpoint checkpoint_of(const Model& model) {
    Checkpoint checkpoint;
    checkpoint.config = model.config();
    for (const auto& p : model.parameters()) {
        checkpoint.params.push_back({p.name, p.tensor.clone_values(false)});
    }
    return checkpoint;
}

}  // namespace blobsense
