#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blobsense/common.hpp"

// Minimal reverse-mode autodiff over dense row-major arrays. The scalar type
// is a template parameter: the training path instantiates float, gradient
// verification instantiates double so finite differences are meaningful.

namespace blobsense {

template <typename S>
struct TensorStorage {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until gradients are requested
    bool requires_grad = false;
};

inline std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

/// Shared-storage handle. Copies alias the same buffer; ops produce fresh
/// storage. Gradients accumulate (+=) into `grad`; callers zero between steps.
/// Handle constness does not protect the storage (shared_ptr semantics), so
/// backward closures can accumulate through captured handles.
template <typename S>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        auto d = std::make_shared<TensorStorage<S>>();
        d->value.assign(shape_size(shape), S(0));
        d->shape = std::move(shape);
        d->requires_grad = requires_grad;
        return TensorT(std::move(d));
    }

    static TensorT from(std::vector<int> shape, std::vector<S> values,
                        bool requires_grad = false) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("value count does not match shape");
        }
        auto d = std::make_shared<TensorStorage<S>>();
        d->shape = std::move(shape);
        d->value = std::move(values);
        d->requires_grad = requires_grad;
        return TensorT(std::move(d));
    }

    static TensorT scalar(S v) { return from({1}, {v}); }

    bool valid() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    std::size_t size() const { return d_->value.size(); }

    std::span<S> value() const { return d_->value; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<S> grad() const { return d_->grad; }

    void ensure_grad() const {
        if (d_->grad.empty()) {
            d_->grad.assign(d_->value.size(), S(0));
        }
    }

    void zero_grad() const {
        d_->grad.assign(d_->value.size(), S(0));
    }

    S item() const {
        if (size() != 1) {
            throw DimensionError("item() requires a single-element tensor");
        }
        return d_->value[0];
    }

    /// Deep copy of values (fresh storage, no gradient state).
    TensorT clone_values(bool requires_grad = false) const {
        return from(d_->shape, d_->value, requires_grad);
    }

    std::shared_ptr<TensorStorage<S>> storage() const { return d_; }

  private:
    explicit TensorT(std::shared_ptr<TensorStorage<S>> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorStorage<S>> d_;
};

/// Tape of recorded operations. Ops append nodes in execution order, so the
/// tape is topologically ordered by construction; backward() walks it once in
/// reverse. A graph is single-use: run a new forward pass on a fresh graph.
template <typename S>
class GraphT {
  public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(TensorT<S> root) {
        if (backward_run_) {
            throw ValidationError("backward already run on this graph");
        }
        if (!root.requires_grad()) {
            throw ValidationError("backward root does not require gradients");
        }
        if (root.size() != 1) {
            throw DimensionError("backward root must be a scalar");
        }
        backward_run_ = true;
        root.ensure_grad();
        root.grad()[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            (*it)();
        }
    }

    bool backward_run() const { return backward_run_; }

  private:
    std::vector<std::function<void()>> nodes_;
    bool backward_run_ = false;
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;

namespace detail {

template <typename S>
bool tracked(const GraphT<S>* g, std::initializer_list<bool> reqs) {
    if (g == nullptr) {
        return false;
    }
    return std::any_of(reqs.begin(), reqs.end(), [](bool b) { return b; });
}

}  // namespace detail

enum class PoolMode { kMax, kMean };

/// "Same" 2-D convolution: input [C_in,H,W], weights [C_out,C_in,k,k],
/// bias [C_out], k odd, padding = (k-1)/2. Zero padding at borders.
template <typename S>
TensorT<S> conv2d(GraphT<S>* g, const TensorT<S>& input, const TensorT<S>& weights,
                  const TensorT<S>& bias, int padding) {
    const auto& xs = input.shape();
    const auto& ws = weights.shape();
    if (xs.size() != 3 || ws.size() != 4 || bias.shape().size() != 1) {
        throw DimensionError("conv2d expects input [C,H,W], weights [O,C,k,k], bias [O]");
    }
    const int c_in = xs[0], h = xs[1], w = xs[2];
    const int c_out = ws[0], k = ws[2];
    if (ws[1] != c_in) {
        throw DimensionError("conv2d: weight input channels do not match input");
    }
    if (ws[3] != k || k % 2 == 0) {
        throw DimensionError("conv2d: kernel must be square with odd size");
    }
    if (padding != (k - 1) / 2) {
        throw DimensionError("conv2d: padding must be (k-1)/2");
    }
    if (bias.shape()[0] != c_out) {
        throw DimensionError("conv2d: bias size does not match output channels");
    }

    TensorT<S> out = TensorT<S>::zeros({c_out, h, w});
    const S* xv = input.value().data();
    const S* wv = weights.value().data();
    const S* bv = bias.value().data();
    S* ov = out.value().data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    for (int co = 0; co < c_out; ++co) {
        S* oc = ov + static_cast<std::size_t>(co) * plane;
        std::fill(oc, oc + plane, bv[co]);
        for (int ci = 0; ci < c_in; ++ci) {
            const S* xc = xv + static_cast<std::size_t>(ci) * plane;
            const S* wk = wv + (static_cast<std::size_t>(co) * c_in + ci) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - padding;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - padding;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    const S wval = wk[ky * k + kx];
                    for (int y = y0; y < y1; ++y) {
                        S* orow = oc + static_cast<std::size_t>(y) * w;
                        const S* xrow = xc + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) {
                            orow[x] += wval * xrow[x];
                        }
                    }
                }
            }
        }
    }

    if (detail::tracked(g, {input.requires_grad(), weights.requires_grad(),
                            bias.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([input, weights, bias, out, c_in, c_out, h, w, k, padding]() {
            if (!out.has_grad()) {
                return;
            }
            const std::size_t plane = static_cast<std::size_t>(h) * w;
            const S* go = out.grad().data();
            const S* xv = input.value().data();
            const S* wv = weights.value().data();

            if (input.requires_grad()) {
                input.ensure_grad();
                S* gx = input.grad().data();
                for (int co = 0; co < c_out; ++co) {
                    const S* gc = go + static_cast<std::size_t>(co) * plane;
                    for (int ci = 0; ci < c_in; ++ci) {
                        S* gxc = gx + static_cast<std::size_t>(ci) * plane;
                        const S* wk = wv + (static_cast<std::size_t>(co) * c_in + ci) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int dy = ky - padding;
                            const int y0 = std::max(0, -dy);
                            const int y1 = std::min(h, h - dy);
                            for (int kx = 0; kx < k; ++kx) {
                                const int dx = kx - padding;
                                const int x0 = std::max(0, -dx);
                                const int x1 = std::min(w, w - dx);
                                const S wval = wk[ky * k + kx];
                                for (int y = y0; y < y1; ++y) {
                                    const S* grow = gc + static_cast<std::size_t>(y) * w;
                                    S* gxrow = gxc + static_cast<std::size_t>(y + dy) * w + dx;
                                    for (int x = x0; x < x1; ++x) {
                                        gxrow[x] += wval * grow[x];
                                    }
                                }
                            }
                        }
                    }
                }
            }

            if (weights.requires_grad()) {
                weights.ensure_grad();
                S* gw = weights.grad().data();
                for (int co = 0; co < c_out; ++co) {
                    const S* gc = go + static_cast<std::size_t>(co) * plane;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const S* xc = xv + static_cast<std::size_t>(ci) * plane;
                        S* gwk = gw + (static_cast<std::size_t>(co) * c_in + ci) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int dy = ky - padding;
                            const int y0 = std::max(0, -dy);
                            const int y1 = std::min(h, h - dy);
                            for (int kx = 0; kx < k; ++kx) {
                                const int dx = kx - padding;
                                const int x0 = std::max(0, -dx);
                                const int x1 = std::min(w, w - dx);
                                S acc = 0;
                                for (int y = y0; y < y1; ++y) {
                                    const S* grow = gc + static_cast<std::size_t>(y) * w;
                                    const S* xrow = xc + static_cast<std::size_t>(y + dy) * w + dx;
                                    for (int x = x0; x < x1; ++x) {
                                        acc += grow[x] * xrow[x];
                                    }
                                }
                                gwk[ky * k + kx] += acc;
                            }
                        }
                    }
                }
            }

            if (bias.requires_grad()) {
                bias.ensure_grad();
                S* gb = bias.grad().data();
                for (int co = 0; co < c_out; ++co) {
                    const S* gc = go + static_cast<std::size_t>(co) * plane;
                    S acc = 0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        acc += gc[i];
                    }
                    gb[co] += acc;
                }
            }
        });
    }
    return out;
}

/// 2x2 window reduction; H and W must be even. Max mode routes the gradient
/// to the argmax (first in scan order on ties), mean splits it equally.
template <typename S>
TensorT<S> downsample2(GraphT<S>* g, const TensorT<S>& input, PoolMode mode) {
    const auto& xs = input.shape();
    if (xs.size() != 3) {
        throw DimensionError("downsample2 expects [C,H,W]");
    }
    const int c = xs[0], h = xs[1], w = xs[2];
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("downsample2 requires even spatial dimensions");
    }
    const int ho = h / 2, wo = w / 2;
    TensorT<S> out = TensorT<S>::zeros({c, ho, wo});
    const S* xv = input.value().data();
    S* ov = out.value().data();
    std::vector<std::uint32_t> argmax;
    if (mode == PoolMode::kMax) {
        argmax.resize(out.size());
    }

    for (int ci = 0; ci < c; ++ci) {
        const S* xc = xv + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x) {
                const std::size_t base = static_cast<std::size_t>(2 * y) * w + 2 * x;
                const std::size_t idx[4] = {base, base + 1, base + w, base + w + 1};
                const std::size_t oi =
                    (static_cast<std::size_t>(ci) * ho + y) * wo + x;
                if (mode == PoolMode::kMax) {
                    std::size_t best = idx[0];
                    S bv = xc[idx[0]];
                    for (int j = 1; j < 4; ++j) {
                        if (xc[idx[j]] > bv) {
                            bv = xc[idx[j]];
                            best = idx[j];
                        }
                    }
                    ov[oi] = bv;
                    if (!argmax.empty()) {
                        argmax[oi] = static_cast<std::uint32_t>(
                            static_cast<std::size_t>(ci) * h * w + best);
                    }
                } else {
                    ov[oi] = (xc[idx[0]] + xc[idx[1]] + xc[idx[2]] + xc[idx[3]]) / S(4);
                }
            }
        }
    }

    if (detail::tracked(g, {input.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([input, out, mode, argmax = std::move(argmax), c, h, w, ho, wo]() {
            if (!out.has_grad()) {
                return;
            }
            input.ensure_grad();
            S* gx = input.grad().data();
            const S* go = out.grad().data();
            if (mode == PoolMode::kMax) {
                for (std::size_t i = 0; i < out.size(); ++i) {
                    gx[argmax[i]] += go[i];
                }
            } else {
                for (int ci = 0; ci < c; ++ci) {
                    S* gxc = gx + static_cast<std::size_t>(ci) * h * w;
                    for (int y = 0; y < ho; ++y) {
                        for (int x = 0; x < wo; ++x) {
                            const S q = go[(static_cast<std::size_t>(ci) * ho + y) * wo + x] / S(4);
                            const std::size_t base = static_cast<std::size_t>(2 * y) * w + 2 * x;
                            gxc[base] += q;
                            gxc[base + 1] += q;
                            gxc[base + w] += q;
                            gxc[base + w + 1] += q;
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Nearest-neighbor 2x upsampling; backward sums the four contributions.
template <typename S>
TensorT<S> upsample2(GraphT<S>* g, const TensorT<S>& input) {
    const auto& xs = input.shape();
    if (xs.size() != 3) {
        throw DimensionError("upsample2 expects [C,H,W]");
    }
    const int c = xs[0], h = xs[1], w = xs[2];
    TensorT<S> out = TensorT<S>::zeros({c, 2 * h, 2 * w});
    const S* xv = input.value().data();
    S* ov = out.value().data();
    for (int ci = 0; ci < c; ++ci) {
        const S* xc = xv + static_cast<std::size_t>(ci) * h * w;
        S* oc = ov + static_cast<std::size_t>(ci) * 4 * h * w;
        for (int y = 0; y < h; ++y) {
            S* r0 = oc + static_cast<std::size_t>(2 * y) * 2 * w;
            S* r1 = r0 + 2 * w;
            const S* xrow = xc + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const S v = xrow[x];
                r0[2 * x] = v;
                r0[2 * x + 1] = v;
                r1[2 * x] = v;
                r1[2 * x + 1] = v;
            }
        }
    }

    if (detail::tracked(g, {input.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([input, out, c, h, w]() {
            if (!out.has_grad()) {
                return;
            }
            input.ensure_grad();
            S* gx = input.grad().data();
            const S* go = out.grad().data();
            for (int ci = 0; ci < c; ++ci) {
                S* gxc = gx + static_cast<std::size_t>(ci) * h * w;
                const S* gc = go + static_cast<std::size_t>(ci) * 4 * h * w;
                for (int y = 0; y < h; ++y) {
                    const S* r0 = gc + static_cast<std::size_t>(2 * y) * 2 * w;
                    const S* r1 = r0 + 2 * w;
                    S* gxrow = gxc + static_cast<std::size_t>(y) * w;
                    for (int x = 0; x < w; ++x) {
                        gxrow[x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> relu(GraphT<S>* g, const TensorT<S>& input) {
    TensorT<S> out = TensorT<S>::zeros(input.shape());
    const S* xv = input.value().data();
    S* ov = out.value().data();
    for (std::size_t i = 0; i < input.size(); ++i) {
        ov[i] = xv[i] > S(0) ? xv[i] : S(0);
    }
    if (detail::tracked(g, {input.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([input, out]() {
            if (!out.has_grad()) {
                return;
            }
            input.ensure_grad();
            S* gx = input.grad().data();
            const S* go = out.grad().data();
            const S* xv = input.value().data();
            for (std::size_t i = 0; i < input.size(); ++i) {
                if (xv[i] > S(0)) {
                    gx[i] += go[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> sigmoid(GraphT<S>* g, const TensorT<S>& input) {
    TensorT<S> out = TensorT<S>::zeros(input.shape());
    const S* xv = input.value().data();
    S* ov = out.value().data();
    for (std::size_t i = 0; i < input.size(); ++i) {
        ov[i] = S(1) / (S(1) + std::exp(-xv[i]));
    }
    if (detail::tracked(g, {input.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([input, out]() {
            if (!out.has_grad()) {
                return;
            }
            input.ensure_grad();
            S* gx = input.grad().data();
            const S* go = out.grad().data();
            const S* ov = out.value().data();
            for (std::size_t i = 0; i < out.size(); ++i) {
                gx[i] += go[i] * ov[i] * (S(1) - ov[i]);
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> add(GraphT<S>* g, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch");
    }
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const S* av = a.value().data();
    const S* bv = b.value().data();
    S* ov = out.value().data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        ov[i] = av[i] + bv[i];
    }
    if (detail::tracked(g, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([a, b, out]() {
            if (!out.has_grad()) {
                return;
            }
            const S* go = out.grad().data();
            if (a.requires_grad()) {
                a.ensure_grad();
                S* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ga[i] += go[i];
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                S* gb = b.grad().data();
                for (std::size_t i = 0; i < b.size(); ++i) {
                    gb[i] += go[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> sub(GraphT<S>* g, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("sub: shape mismatch");
    }
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const S* av = a.value().data();
    const S* bv = b.value().data();
    S* ov = out.value().data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        ov[i] = av[i] - bv[i];
    }
    if (detail::tracked(g, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([a, b, out]() {
            if (!out.has_grad()) {
                return;
            }
            const S* go = out.grad().data();
            if (a.requires_grad()) {
                a.ensure_grad();
                S* ga = a.grad().data();
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ga[i] += go[i];
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                S* gb = b.grad().data();
                for (std::size_t i = 0; i < b.size(); ++i) {
                    gb[i] -= go[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> scale(GraphT<S>* g, const TensorT<S>& a, S factor) {
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        ov[i] = factor * av[i];
    }
    if (detail::tracked(g, {a.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([a, out, factor]() {
            if (!out.has_grad()) {
                return;
            }
            a.ensure_grad();
            S* ga = a.grad().data();
            const S* go = out.grad().data();
            for (std::size_t i = 0; i < a.size(); ++i) {
                ga[i] += factor * go[i];
            }
        });
    }
    return out;
}

/// Masked squared-norm reduction: sum(mask * x^2). The mask, when given,
/// must match shape and hold only 0/1 values; it never receives gradient.
template <typename S>
TensorT<S> sum_squares(GraphT<S>* g, const TensorT<S>& input,
                       const TensorT<S>* mask = nullptr) {
    if (mask != nullptr) {
        if (mask->shape() != input.shape()) {
            throw DimensionError("sum_squares: mask shape mismatch");
        }
        for (S m : mask->value()) {
            if (m != S(0) && m != S(1)) {
                throw ValidationError("sum_squares: mask must be binary");
            }
        }
    }
    const S* xv = input.value().data();
    const S* mv = mask ? mask->value().data() : nullptr;
    S acc = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const S v = mv ? mv[i] * xv[i] : xv[i];
        acc += v * xv[i];
    }
    TensorT<S> out = TensorT<S>::from({1}, {acc});
    if (detail::tracked(g, {input.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> mask_copy = mask ? *mask : TensorT<S>();
        g->record([input, out, mask_copy]() {
            if (!out.has_grad()) {
                return;
            }
            input.ensure_grad();
            S* gx = input.grad().data();
            const S* xv = input.value().data();
            const S go = out.grad()[0];
            const S* mv = mask_copy.valid() ? mask_copy.value().data() : nullptr;
            for (std::size_t i = 0; i < input.size(); ++i) {
                const S m = mv ? mv[i] : S(1);
                gx[i] += go * S(2) * m * xv[i];
            }
        });
    }
    return out;
}

/// P x P window of O centered at (row, col); gradients on the window
/// propagate back into O. Regions clipped at the image border are
/// zero-padded and excluded from gradient flow.
template <typename S>
TensorT<S> extract_patch(GraphT<S>* g, const TensorT<S>& heatmap, int row, int col,
                         int patch) {
    const auto& xs = heatmap.shape();
    if (xs.size() != 3 || xs[0] != 1) {
        throw DimensionError("extract_patch expects [1,H,W]");
    }
    if (patch <= 0 || patch % 2 == 0) {
        throw ConfigError("patch size must be odd and positive");
    }
    const int h = xs[1], w = xs[2];
    if (row < 0 || row >= h || col < 0 || col >= w) {
        throw RangeError("patch center outside image");
    }
    const int half = (patch - 1) / 2;
    TensorT<S> out = TensorT<S>::zeros({patch, patch});
    const S* xv = heatmap.value().data();
    S* ov = out.value().data();
    for (int y = 0; y < patch; ++y) {
        const int sy = row - half + y;
        if (sy < 0 || sy >= h) {
            continue;
        }
        for (int x = 0; x < patch; ++x) {
            const int sx = col - half + x;
            if (sx < 0 || sx >= w) {
                continue;
            }
            ov[static_cast<std::size_t>(y) * patch + x] =
                xv[static_cast<std::size_t>(sy) * w + sx];
        }
    }
    if (detail::tracked(g, {heatmap.requires_grad()})) {
        out.set_requires_grad(true);
        g->record([heatmap, out, row, col, patch, half, h, w]() {
            if (!out.has_grad()) {
                return;
            }
            heatmap.ensure_grad();
            S* gx = heatmap.grad().data();
            const S* go = out.grad().data();
            for (int y = 0; y < patch; ++y) {
                const int sy = row - half + y;
                if (sy < 0 || sy >= h) {
                    continue;
                }
                for (int x = 0; x < patch; ++x) {
                    const int sx = col - half + x;
                    if (sx < 0 || sx >= w) {
                        continue;
                    }
                    gx[static_cast<std::size_t>(sy) * w + sx] +=
                        go[static_cast<std::size_t>(y) * patch + x];
                }
            }
        });
    }
    return out;
}

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences and returns the worst mixed relative error
/// (absolute below magnitude 1). Instantiate with S = double for checks.
template <typename S>
double grad_check(const std::function<TensorT<S>(GraphT<S>&, const TensorT<S>&)>& fn,
                  const TensorT<S>& input, double step) {
    TensorT<S> x = input.clone_values(true);
    GraphT<S> graph;
    TensorT<S> y = fn(graph, x);
    if (y.size() != 1) {
        throw DimensionError("grad_check requires a scalar-valued function");
    }
    std::vector<double> analytic(x.size(), 0.0);
    if (y.requires_grad()) {
        graph.backward(y);
        for (std::size_t i = 0; i < x.size(); ++i) {
            analytic[i] = static_cast<double>(x.grad()[i]);
        }
    }

    auto eval = [&fn](const TensorT<S>& probe) {
        GraphT<S> scratch;
        return static_cast<double>(fn(scratch, probe).item());
    };

    double max_err = 0.0;
    TensorT<S> probe = input.clone_values(false);
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const S saved = probe.value()[i];
        probe.value()[i] = saved + static_cast<S>(step);
        const double fp = eval(probe);
        probe.value()[i] = saved - static_cast<S>(step);
        const double fm = eval(probe);
        probe.value()[i] = saved;
        const double fd = (fp - fm) / (2.0 * step);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(fd)});
        max_err = std::max(max_err, std::abs(analytic[i] - fd) / denom);
    }
    return max_err;
}

}  // namespace blobsense
