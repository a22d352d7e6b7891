#include <cmath>
#include <vector>

#include <doctest.h>

#include "blobsense/hourglass.hpp"
#include "test_util.hpp"

using namespace blobsense;
using testutil::random_tensor;

namespace {

std::size_t resblock_params(int c) {
    return 2 * (9 * static_cast<std::size_t>(c) * c + c);
}

// Structural accounting, kept independent of build():
//   stem conv (1->c, 3x3) + stem residual block
//   per unit: depth * (skip + pre + post) + bottom residual blocks
//   head conv (c->1, 1x1)
std::size_t expected_params(int stacks, int depth, int c) {
    const std::size_t stem = 9 * static_cast<std::size_t>(c) + c + resblock_params(c);
    const std::size_t unit = (3 * static_cast<std::size_t>(depth) + 1) * resblock_params(c);
    const std::size_t head = static_cast<std::size_t>(c) + 1;
    return stem + static_cast<std::size_t>(stacks) * unit + head;
}

}  // namespace

TEST_SUITE_BEGIN("hourglass");

TEST_CASE("build is deterministic in the seed") {
    HourglassConfig cfg{1, 2, 8, 42};
    Model a = Model::build(cfg);
    Model b = Model::build(cfg);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].name == b.parameters()[i].name);
        const auto av = a.parameters()[i].tensor.value();
        const auto bv = b.parameters()[i].tensor.value();
        REQUIRE(av.size() == bv.size());
        for (std::size_t j = 0; j < av.size(); ++j) {
            CHECK(av[j] == bv[j]);
        }
    }

    Model c = Model::build({1, 2, 8, 43});
    CHECK(c.parameters()[0].tensor.value()[0] != a.parameters()[0].tensor.value()[0]);
}

TEST_CASE("parameter count matches the closed-form structural count") {
    CHECK(Model::build({1, 2, 8, 0}).parameter_count() == expected_params(1, 2, 8));
    CHECK(Model::build({2, 3, 16, 0}).parameter_count() == expected_params(2, 3, 16));

    // two stacks = twice the unit count plus the shared stem and head
    const std::size_t one = Model::build({1, 3, 8, 0}).parameter_count();
    const std::size_t two = Model::build({2, 3, 8, 0}).parameter_count();
    const std::size_t unit = (3 * 3 + 1) * resblock_params(8);
    CHECK(two - one == unit);
    CHECK(two == 2 * unit + (one - unit));
}

TEST_CASE("invalid configs are rejected") {
    CHECK_THROWS_AS(Model::build({1, 1, 3, 0}), ConfigError);
    CHECK_THROWS_AS(Model::build({1, 0, 8, 0}), ConfigError);
    CHECK_THROWS_AS(Model::build({0, 1, 8, 0}), ConfigError);
}

TEST_CASE("forward keeps resolution, range, and determinism") {
    Model model = Model::build({1, 3, 8, 7});
    Rng rng(1);
    auto img = random_tensor<float>({1, 64, 64}, rng, 0.0, 1.0);

    auto out = model.forward(nullptr, img);
    REQUIRE(out.shape() == std::vector<int>{1, 64, 64});
    for (float v : out.value()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    auto again = model.forward(nullptr, img);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out.value()[i] == again.value()[i]);
    }

    CHECK_THROWS_AS(model.forward(nullptr, Tensor::zeros({1, 60, 64})), DimensionError);
}

TEST_CASE("the same model runs on different input sizes") {
    Model model = Model::build({1, 2, 8, 3});
    Rng rng(2);
    auto small = model.forward(nullptr, random_tensor<float>({1, 64, 64}, rng, 0, 1));
    auto large = model.forward(nullptr, random_tensor<float>({1, 96, 96}, rng, 0, 1));
    CHECK(small.shape() == std::vector<int>{1, 64, 64});
    CHECK(large.shape() == std::vector<int>{1, 96, 96});
}

TEST_CASE("receptive field composition arithmetic") {
    // depth-1 toy with a single 3x3 conv per level:
    // conv3 (rf 3), down (rf 4, scale 2), conv3 (rf 8), up
    const RfStep path[] = {RfStep::conv(3), RfStep::down(), RfStep::conv(3), RfStep::up()};
    CHECK(receptive_field(std::span<const RfStep>(path)) == 8);

    const RfStep pointwise[] = {RfStep::conv(1), RfStep::conv(1)};
    CHECK(receptive_field(std::span<const RfStep>(pointwise)) == 1);

    int prev = 0;
    for (int depth = 1; depth <= 4; ++depth) {
        const int rf = receptive_field(HourglassConfig{1, depth, 8, 0});
        CHECK(rf > prev);
        prev = rf;
    }
}

TEST_CASE("shifting the input by 2^depth shifts the interior output") {
    HourglassConfig cfg{1, 1, 8, 11};
    Model model = Model::build(cfg);
    const int shift = cfg.scale();
    const int size = 96;

    Rng rng(5);
    std::vector<float> field((size + shift) * (size + shift));
    for (auto& v : field) {
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    auto crop = [&](int dr, int dc) {
        std::vector<float> img(size * size);
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                img[r * size + c] = field[(r + dr) * (size + shift) + (c + dc)];
            }
        }
        return Tensor::from({1, size, size}, std::move(img));
    };

    auto base = model.forward(nullptr, crop(0, 0));
    auto shifted = model.forward(nullptr, crop(shift, shift));

    const int margin = receptive_field(cfg) + shift;
    REQUIRE(margin < size - margin);
    for (int r = margin; r < size - margin; ++r) {
        for (int c = margin; c < size - margin; ++c) {
            const float a = shifted.value()[r * size + c];
            const float b = base.value()[(r + shift) * size + (c + shift)];
            CHECK(std::abs(a - b) < 1e-4f);
        }
    }
}

TEST_CASE("constant input gives a constant interior output") {
    HourglassConfig cfg{1, 1, 8, 13};
    Model model = Model::build(cfg);
    const int size = 96;
    auto out = model.forward(nullptr, Tensor::from({1, size, size},
                                                   std::vector<float>(size * size, 0.25f)));
    const int margin = receptive_field(cfg);
    const float center = out.value()[(size / 2) * size + size / 2];
    for (int r = margin; r < size - margin; ++r) {
        for (int c = margin; c < size - margin; ++c) {
            CHECK(std::abs(out.value()[r * size + c] - center) < 1e-4f);
        }
    }
}

TEST_CASE("a short training signal flows through the whole network") {
    Model model = Model::build({1, 2, 8, 17});
    Rng rng(19);
    auto img = random_tensor<float>({1, 32, 32}, rng, 0.0, 1.0);

    Graph g;
    auto out = model.forward(&g, img);
    model.zero_grads();
    auto loss = sum_squares<float>(&g, out);
    g.backward(loss);

    for (const auto& p : model.parameters()) {
        REQUIRE(p.tensor.has_grad());
        bool nonzero = false;
        for (float v : p.tensor.grad()) {
            CHECK(std::isfinite(v));
            nonzero |= v != 0.0f;
        }
        CHECK(nonzero);
    }
}

TEST_SUITE_END();
