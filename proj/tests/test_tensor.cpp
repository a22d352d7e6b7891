#include <cmath>
#include <vector>

#include <doctest.h>

#include "blobsense/tensor.hpp"
#include "test_util.hpp"

using namespace blobsense;
using testutil::kink_free_tensor;
using testutil::random_tensor;
using testutil::separated_tensor;

namespace {

// Direct six-nested-loop convolution, the oracle for conv2d.
template <typename S>
std::vector<S> conv_oracle(const TensorT<S>& x, const TensorT<S>& w,
                           const TensorT<S>& b, int pad) {
    const int c_in = x.shape()[0], h = x.shape()[1], wid = x.shape()[2];
    const int c_out = w.shape()[0], k = w.shape()[2];
    std::vector<S> out(static_cast<std::size_t>(c_out) * h * wid, S(0));
    for (int co = 0; co < c_out; ++co) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < wid; ++xx) {
                S acc = b.value()[co];
                for (int ci = 0; ci < c_in; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int sy = y + ky - pad;
                            const int sx = xx + kx - pad;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= wid) {
                                continue;
                            }
                            acc += w.value()[((static_cast<std::size_t>(co) * c_in + ci) * k + ky) * k + kx] *
                                   x.value()[(static_cast<std::size_t>(ci) * h + sy) * wid + sx];
                        }
                    }
                }
                out[(static_cast<std::size_t>(co) * h + y) * wid + xx] = acc;
            }
        }
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
    Rng rng(1);
    auto x = random_tensor<float>({1, 5, 7}, rng);
    auto w = Tensor::from({1, 1, 1, 1}, {1.0f});
    auto b = Tensor::from({1}, {0.0f});
    auto y = conv2d<float>(nullptr, x, w, b, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y.value()[i] == x.value()[i]);
    }
}

TEST_CASE("conv2d all-ones 3x3 on a constant image gives 9v in the interior") {
    const float v = 0.37f;
    auto x = Tensor::from({1, 6, 6}, std::vector<float>(36, v));
    auto w = Tensor::from({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    auto b = Tensor::from({1}, {0.0f});
    auto y = conv2d<float>(nullptr, x, w, b, 1);
    for (int r = 1; r < 5; ++r) {
        for (int c = 1; c < 5; ++c) {
            CHECK(y.value()[r * 6 + c] == doctest::Approx(9 * v).epsilon(1e-6));
        }
    }
    // corner sees a 2x2 valid window
    CHECK(y.value()[0] == doctest::Approx(4 * v).epsilon(1e-6));
}

TEST_CASE("conv2d matches the direct-summation oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor<float>({2, 8, 8}, rng);
        auto w = random_tensor<float>({3, 2, 3, 3}, rng);
        auto b = random_tensor<float>({3}, rng);
        auto y = conv2d<float>(nullptr, x, w, b, 1);
        auto expect = conv_oracle(x, w, b, 1);
        REQUIRE(y.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(std::abs(y.value()[i] - expect[i]) < 1e-5f);
        }
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    auto x = Tensor::zeros({2, 4, 4});
    auto w = Tensor::zeros({1, 3, 3, 3});
    auto b = Tensor::zeros({1});
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, w, b, 1), DimensionError);
}

TEST_CASE("downsample2 single window") {
    auto x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    CHECK(downsample2<float>(nullptr, x, PoolMode::kMax).item() == 4.0f);
    CHECK(downsample2<float>(nullptr, x, PoolMode::kMean).item() == 2.5f);
}

TEST_CASE("downsample2 rejects odd spatial dimensions") {
    auto x = Tensor::zeros({1, 3, 4});
    CHECK_THROWS_AS(downsample2<float>(nullptr, x, PoolMode::kMax), DimensionError);
}

TEST_CASE("upsample2 replicates pixels and round-trips through mean pooling") {
    auto one = Tensor::from({1, 1, 1}, {1.0f});
    auto up = upsample2<float>(nullptr, one);
    REQUIRE(up.shape() == std::vector<int>{1, 2, 2});
    for (float v : up.value()) {
        CHECK(v == 1.0f);
    }

    Rng rng(3);
    auto x = random_tensor<float>({2, 4, 6}, rng);
    auto rt = downsample2<float>(nullptr, upsample2<float>(nullptr, x), PoolMode::kMean);
    REQUIRE(rt.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(rt.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-6));
    }
}

TEST_CASE("pointwise basics") {
    auto x = Tensor::from({2}, {-1.0f, 2.0f});
    auto r = relu<float>(nullptr, x);
    CHECK(r.value()[0] == 0.0f);
    CHECK(r.value()[1] == 2.0f);
    CHECK(sigmoid<float>(nullptr, Tensor::from({1}, {0.0f})).item() == doctest::Approx(0.5));
    auto a = Tensor::from({2}, {1.0f, 2.0f});
    auto s = add<float>(nullptr, a, x);
    CHECK(s.value()[0] == 0.0f);
    CHECK(s.value()[1] == 4.0f);
    CHECK_THROWS_AS(add<float>(nullptr, a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("sum_squares basics and loop oracle") {
    CHECK(sum_squares<float>(nullptr, Tensor::zeros({4, 4})).item() == 0.0f);
    CHECK(sum_squares<float>(nullptr, Tensor::from({2}, {3.0f, 4.0f})).item() == 25.0f);

    Rng rng(11);
    auto x = random_tensor<double>({3, 9}, rng);
    std::vector<double> mv(x.size());
    for (auto& m : mv) {
        m = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    auto mask = TensorT<double>::from({3, 9}, mv);
    double expect = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        expect += mv[i] * x.value()[i] * x.value()[i];
    }
    const double got = sum_squares<double>(nullptr, x, &mask).item();
    CHECK(std::abs(got - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
}

TEST_CASE("sum_squares is non-negative and zero iff the masked input is zero") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor<double>({4, 4}, rng);
        std::vector<double> mv(x.size());
        for (auto& m : mv) {
            m = rng.uniform() < 0.3 ? 0.0 : 1.0;
        }
        auto mask = TensorT<double>::from({4, 4}, mv);
        const double s = sum_squares<double>(nullptr, x, &mask).item();
        CHECK(s >= 0.0);
        bool masked_zero = true;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (mv[i] != 0.0 && x.value()[i] != 0.0) {
                masked_zero = false;
            }
        }
        CHECK((s == 0.0) == masked_zero);
    }
}

TEST_CASE("extract_patch geometry") {
    std::vector<float> vals(81);
    for (int i = 0; i < 81; ++i) {
        vals[i] = static_cast<float>(i);
    }
    auto o = Tensor::from({1, 9, 9}, vals);

    SUBCASE("centered window") {
        auto p = extract_patch<float>(nullptr, o, 4, 4, 5);
        REQUIRE(p.shape() == std::vector<int>{5, 5});
        CHECK(p.value()[0] == vals[2 * 9 + 2]);
        CHECK(p.value()[24] == vals[6 * 9 + 6]);
    }
    SUBCASE("clipped at the corner zero-pads") {
        auto p = extract_patch<float>(nullptr, o, 0, 0, 5);
        CHECK(p.value()[0] == 0.0f);                 // padding
        CHECK(p.value()[2 * 5 + 2] == vals[0]);      // (0,0) lands at patch center
        CHECK(p.value()[4 * 5 + 4] == vals[2 * 9 + 2]);
    }
    SUBCASE("center outside image is a range error") {
        CHECK_THROWS_AS(extract_patch<float>(nullptr, o, 9, 0, 5), RangeError);
    }
    SUBCASE("gradient is an indicator of the window") {
        GraphT<double> g;
        auto od = TensorT<double>::zeros({1, 9, 9}, true);
        auto p = extract_patch<double>(&g, od, 4, 4, 5);
        auto s = sum_squares<double>(&g, sub<double>(&g, p, TensorT<double>::from({5, 5}, std::vector<double>(25, 1.0))));
        g.backward(s);
        // d/dO of sum((p - 1)^2) = -2 inside the window, 0 outside
        for (int r = 0; r < 9; ++r) {
            for (int c = 0; c < 9; ++c) {
                const double want = (r >= 2 && r <= 6 && c >= 2 && c <= 6) ? -2.0 : 0.0;
                CHECK(od.grad()[r * 9 + c] == doctest::Approx(want));
            }
        }
    }
}

TEST_CASE("backward twice without a new forward pass is an error") {
    GraphT<float> g;
    auto x = Tensor::from({2}, {1.0f, 2.0f}, true);
    auto y = sum_squares<float>(&g, x);
    g.backward(y);
    CHECK_THROWS_AS(g.backward(y), ValidationError);
}

TEST_CASE("gradients accumulate across backward passes on fresh graphs") {
    auto x = Tensor::from({2}, {1.0f, 2.0f}, true);
    for (int i = 0; i < 2; ++i) {
        GraphT<float> g;
        auto y = sum_squares<float>(&g, x);
        g.backward(y);
    }
    CHECK(x.grad()[0] == 4.0f);  // 2 * (2 * x0)
    CHECK(x.grad()[1] == 8.0f);
}

TEST_CASE("grad_check: quadratic is exact, constant is zero") {
    Rng rng(17);
    auto x = random_tensor<double>({3, 5}, rng);
    const double err = grad_check<double>(
        [](GraphT<double>& g, const TensorT<double>& in) {
            return sum_squares<double>(&g, in);
        },
        x, 1e-3);
    CHECK(err < 1e-6);

    const double cerr = grad_check<double>(
        [](GraphT<double>&, const TensorT<double>&) {
            return TensorT<double>::scalar(3.0);
        },
        x, 1e-3);
    CHECK(cerr == 0.0);
}

TEST_CASE("finite differences validate every differentiable op over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);

        auto conv_x = random_tensor<double>({2, 6, 6}, rng);
        auto conv_w = random_tensor<double>({2, 2, 3, 3}, rng);
        auto conv_b = random_tensor<double>({2}, rng);
        CHECK(grad_check<double>(
                  [&](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, conv2d<double>(&g, in, conv_w, conv_b, 1));
                  },
                  conv_x, 1e-3) < 1e-3);
        CHECK(grad_check<double>(
                  [&](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, conv2d<double>(&g, conv_x, in, conv_b, 1));
                  },
                  conv_w, 1e-3) < 1e-3);
        CHECK(grad_check<double>(
                  [&](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, conv2d<double>(&g, conv_x, conv_w, in, 1));
                  },
                  conv_b, 1e-3) < 1e-3);

        auto pool_x = separated_tensor<double>({2, 4, 4}, rng);
        CHECK(grad_check<double>(
                  [](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, downsample2<double>(&g, in, PoolMode::kMax));
                  },
                  pool_x, 1e-3) < 1e-3);
        CHECK(grad_check<double>(
                  [](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, downsample2<double>(&g, in, PoolMode::kMean));
                  },
                  pool_x, 1e-3) < 1e-3);

        auto up_x = random_tensor<double>({1, 3, 5}, rng);
        CHECK(grad_check<double>(
                  [](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, upsample2<double>(&g, in));
                  },
                  up_x, 1e-3) < 1e-3);

        auto relu_x = kink_free_tensor<double>({4, 4}, rng);
        CHECK(grad_check<double>(
                  [](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, relu<double>(&g, in));
                  },
                  relu_x, 1e-3) < 1e-3);

        auto sig_x = random_tensor<double>({4, 4}, rng, -2.0, 2.0);
        CHECK(grad_check<double>(
                  [](GraphT<double>& g, const TensorT<double>& in) {
                      return sum_squares<double>(&g, sigmoid<double>(&g, in));
                  },
                  sig_x, 1e-3) < 1e-3);
    }
}

TEST_CASE("composite relu(add(conv(x), x)) passes the finite-difference check") {
    Rng rng(23);
    auto w = random_tensor<double>({1, 1, 3, 3}, rng);
    auto b = random_tensor<double>({1}, rng);
    // keep pre-activations away from the relu kink
    auto x = kink_free_tensor<double>({1, 4, 4}, rng, 0.3);
    const double err = grad_check<double>(
        [&](GraphT<double>& g, const TensorT<double>& in) {
            auto y = relu<double>(&g, add<double>(&g, conv2d<double>(&g, in, w, b, 1), in));
            return sum_squares<double>(&g, y);
        },
        x, 1e-4);
    CHECK(err < 1e-3);
}

TEST_CASE("forward results are bit-identical across repeated runs") {
    Rng rng(29);
    auto x = random_tensor<float>({2, 8, 8}, rng);
    auto w = random_tensor<float>({3, 2, 3, 3}, rng);
    auto b = random_tensor<float>({3}, rng);
    auto run = [&]() {
        auto y = sigmoid<float>(nullptr, conv2d<float>(nullptr, x, w, b, 1));
        return std::vector<float>(y.value().begin(), y.value().end());
    };
    auto a = run(), c = run();
    CHECK(a == c);
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(31);
    auto x = random_tensor<float>({2, 8, 8}, rng, -2.0, 2.0);
    auto w = random_tensor<float>({2, 2, 3, 3}, rng, -0.5, 0.5);
    auto b = random_tensor<float>({2}, rng);
    auto y = conv2d<float>(nullptr, x, w, b, 1);
    y = relu<float>(nullptr, y);
    y = downsample2<float>(nullptr, y, PoolMode::kMax);
    y = upsample2<float>(nullptr, y);
    y = sigmoid<float>(nullptr, y);
    for (float v : y.value()) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_SUITE_END();
