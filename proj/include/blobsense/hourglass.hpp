#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blobsense/common.hpp"
#include "blobsense/tensor.hpp"

// Toy-scale stacked hourglass: a stem, then `stacks` U-shaped units of
// residual blocks with skip connections added at equal resolution, then a
// 1x1 head with a sigmoid. Output resolution always equals input resolution,
// and the same model runs on any spatial size divisible by 2^depth.

namespace blobsense {

struct HourglassConfig {
    int stacks = 2;
    int depth = 3;     // downsample levels per unit
    int channels = 16; // feature width
    std::uint64_t seed = 0;

    void validate() const {
        if (stacks < 1) {
            throw ConfigError("stacks must be >= 1");
        }
        if (depth < 1) {
            throw ConfigError("depth must be >= 1");
        }
        if (channels < 4) {
            throw ConfigError("channels must be >= 4");
        }
    }

    int scale() const { return 1 << depth; }
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

class Model {
  public:
    /// Parameters drawn from U[-a, a] with a = sqrt(1 / fan_in),
    /// deterministically from config.seed.
    static Model build(const HourglassConfig& config);

    /// [1,H,W] -> [1,H,W]; H and W must be divisible by 2^depth. Every
    /// output value lies in (0,1). Pass g to record gradients.
    Tensor forward(Graph* g, const Tensor& image) const;

    const HourglassConfig& config() const { return config_; }
    std::vector<NamedParam>& parameters() { return params_; }
    const std::vector<NamedParam>& parameters() const { return params_; }
    std::size_t parameter_count() const;

    void zero_grads() const;

  private:
    struct ResBlockRef {
        int c1w = 0, c1b = 0, c2w = 0, c2b = 0;
    };
    struct LevelRef {
        ResBlockRef skip, pre, post;
    };
    struct UnitRef {
        std::vector<LevelRef> levels;
        ResBlockRef bottom;
    };

    Tensor residual(Graph* g, const ResBlockRef& block, const Tensor& x) const;
    Tensor hour(Graph* g, const UnitRef& unit, int level, const Tensor& x) const;

    HourglassConfig config_;
    std::vector<NamedParam> params_;
    int stem_w_ = 0, stem_b_ = 0;
    ResBlockRef stem_res_;
    std::vector<UnitRef> units_;
    int head_w_ = 0, head_b_ = 0;
};

/// One primitive along a path through the network, for receptive-field
/// composition arithmetic.
struct RfStep {
    enum class Kind { kConv, kDown, kUp };
    Kind kind = Kind::kConv;
    int kernel = 3;

    static RfStep conv(int k) { return {Kind::kConv, k}; }
    static RfStep down() { return {Kind::kDown, 2}; }
    static RfStep up() { return {Kind::kUp, 2}; }
};

int receptive_field(std::span<const RfStep> steps);

/// Theoretical receptive field (pixels) of one output pixel, along the
/// deepest path of the configured architecture.
int receptive_field(const HourglassConfig& config);

}  // namespace blobsense
