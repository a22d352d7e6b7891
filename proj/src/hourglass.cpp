#include "blobsense/hourglass.hpp"

#include <cmath>

namespace blobsense {

namespace {

// Initial heatmap prior: sigmoid(-2.2) ~ 0.1. A symmetric head init starts
// the output near 0.5, and on heavily imbalanced data the background term
// then saturates the sigmoid before any blob forms.
constexpr float kHeadBiasPrior = -2.2f;

std::pair<int, int> add_conv(std::vector<NamedParam>& params, Rng& rng,
                             const std::string& name, int c_out, int c_in, int k) {
    const double bound = std::sqrt(1.0 / (static_cast<double>(c_in) * k * k));
    std::vector<float> w(static_cast<std::size_t>(c_out) * c_in * k * k);
    for (auto& v : w) {
        v = static_cast<float>(rng.uniform(-bound, bound));
    }
    std::vector<float> b(static_cast<std::size_t>(c_out));
    for (auto& v : b) {
        v = static_cast<float>(rng.uniform(-bound, bound));
    }
    const int wi = static_cast<int>(params.size());
    params.push_back({name + ".w", Tensor::from({c_out, c_in, k, k}, std::move(w), true)});
    params.push_back({name + ".b", Tensor::from({c_out}, std::move(b), true)});
    return {wi, wi + 1};
}

}  // namespace

Model Model::build(const HourglassConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    Rng rng(config.seed);
    const int c = config.channels;

    auto res_block = [&](const std::string& prefix) {
        ResBlockRef block;
        std::tie(block.c1w, block.c1b) = add_conv(m.params_, rng, prefix + ".c1", c, c, 3);
        std::tie(block.c2w, block.c2b) = add_conv(m.params_, rng, prefix + ".c2", c, c, 3);
        return block;
    };

    std::tie(m.stem_w_, m.stem_b_) = add_conv(m.params_, rng, "stem.conv", c, 1, 3);
    m.stem_res_ = res_block("stem.res");

    for (int u = 0; u < config.stacks; ++u) {
        UnitRef unit;
        const std::string up = "u" + std::to_string(u);
        for (int l = 0; l < config.depth; ++l) {
            const std::string lp = up + ".l" + std::to_string(l);
            LevelRef level;
            level.skip = res_block(lp + ".skip");
            level.pre = res_block(lp + ".pre");
            level.post = res_block(lp + ".post");
            unit.levels.push_back(level);
        }
        unit.bottom = res_block(up + ".bottom");
        m.units_.push_back(std::move(unit));
    }

    std::tie(m.head_w_, m.head_b_) = add_conv(m.params_, rng, "head", 1, c, 1);
    m.params_[m.head_b_].tensor.value()[0] = kHeadBiasPrior;
    return m;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.size();
    }
    return n;
}

void Model::zero_grads() const {
    for (const auto& p : params_) {
        p.tensor.zero_grad();
    }
}

Tensor Model::residual(Graph* g, const ResBlockRef& block, const Tensor& x) const {
    Tensor t = relu(g, conv2d(g, x, params_[block.c1w].tensor, params_[block.c1b].tensor, 1));
    t = conv2d(g, t, params_[block.c2w].tensor, params_[block.c2b].tensor, 1);
    return relu(g, add(g, t, x));
}

Tensor Model::hour(Graph* g, const UnitRef& unit, int level, const Tensor& x) const {
    const LevelRef& refs = unit.levels[level];
    Tensor skip = residual(g, refs.skip, x);
    Tensor low = downsample2(g, x, PoolMode::kMax);
    low = residual(g, refs.pre, low);
    Tensor mid = (level + 1 < config_.depth) ? hour(g, unit, level + 1, low)
                                             : residual(g, unit.bottom, low);
    mid = residual(g, refs.post, mid);
    return add(g, skip, upsample2(g, mid));
}

Tensor Model::forward(Graph* g, const Tensor& image) const {
    const auto& shape = image.shape();
    if (shape.size() != 3 || shape[0] != 1) {
        throw DimensionError("forward expects [1,H,W]");
    }
    if (shape[1] % config_.scale() != 0 || shape[2] % config_.scale() != 0) {
        throw DimensionError("spatial dimensions must be divisible by 2^depth");
    }
    Tensor t = relu(g, conv2d(g, image, params_[stem_w_].tensor, params_[stem_b_].tensor, 1));
    t = residual(g, stem_res_, t);
    for (const auto& unit : units_) {
        t = hour(g, unit, 0, t);
    }
    Tensor y = conv2d(g, t, params_[head_w_].tensor, params_[head_b_].tensor, 0);
    return sigmoid(g, y);
}

int receptive_field(std::span<const RfStep> steps) {
    long rf = 1;
    long scale = 1;
    for (const auto& step : steps) {
        switch (step.kind) {
            case RfStep::Kind::kConv:
                rf += static_cast<long>(step.kernel - 1) * scale;
                break;
            case RfStep::Kind::kDown:
                rf += scale;
                scale *= 2;
                break;
            case RfStep::Kind::kUp:
                scale /= 2;
                break;
        }
    }
    return static_cast<int>(rf);
}

int receptive_field(const HourglassConfig& config) {
    config.validate();
    std::vector<RfStep> steps;
    auto res_block = [&steps]() {
        steps.push_back(RfStep::conv(3));
        steps.push_back(RfStep::conv(3));
    };
    // stem
    steps.push_back(RfStep::conv(3));
    res_block();
    // deepest path through each unit: down/pre per level, bottom, then
    // post/up back out
    for (int u = 0; u < config.stacks; ++u) {
        for (int l = 0; l < config.depth; ++l) {
            steps.push_back(RfStep::down());
            res_block();
        }
        res_block();  // bottom
        for (int l = config.depth - 1; l >= 0; --l) {
            res_block();  // post, still at the lower resolution
            steps.push_back(RfStep::up());
        }
    }
    steps.push_back(RfStep::conv(1));  // head
    return receptive_field(steps);
}

}  // namespace blobsense
