#pragma once

// High-frequency feature compensation block and its frequency-selection
// submodule (FFE).
//
// FFE: a per-sample low-pass filter is generated from the globally pooled
// input, splitting x into y_low (filtered) and y_high = x - y_low. Each band
// is re-weighted by its own channel gate, and a third gate computed on their
// sum mixes them: out = L * C + H * (1 - C).

#include <string>
#include <vector>

#include "layers.hpp"

namespace wnsf {

enum class FfeVariant {
    full,
    off,               // FFE replaced by identity
    no_selection,      // decomposition only: y_low + y_high
    no_decomposition,  // channel gate applied to x directly
};

struct HffcConfig {
    std::size_t filter_size = 3;
    std::size_t groups = 4;
    std::size_t se_reduction = 4;
    double leaky_alpha = 0.01;
    FfeVariant variant = FfeVariant::full;
};

/// Pointwise-conv squeeze-excitation gate producing N×C×1×1 weights in (0, 1).
template <class T>
struct ChannelAttention {
    Conv2d<T> squeeze;
    BatchNorm2d<T> squeeze_bn;
    Conv2d<T> excite;
    BatchNorm2d<T> excite_bn;

    ChannelAttention() = default;
    ChannelAttention(std::size_t c, std::size_t reduction, Rng& rng) {
        const std::size_t hidden = std::max<std::size_t>(1, c / reduction);
        squeeze = Conv2d<T>(c, hidden, 1, 1, PaddingSpec::none(), false, rng);
        squeeze_bn = BatchNorm2d<T>(hidden);
        excite = Conv2d<T>(hidden, c, 1, 1, PaddingSpec::none(), false, rng);
        excite_bn = BatchNorm2d<T>(c);
    }

    std::size_t hidden_width() const { return squeeze.weight.dim(0); }

    /// The two-way softmax over {logit, 0} is the logistic function, so the
    /// complementary gate 1 - C is exact.
    Tensor<T> operator()(const Tensor<T>& f, Mode mode) {
        Tensor<T> s = relu(squeeze_bn(squeeze(global_avg_pool(f)), mode));
        return sigmoid(excite_bn(excite(s), mode));
    }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        squeeze.visit(prefix + "/squeeze", fn);
        squeeze_bn.visit(prefix + "/squeeze_bn", fn);
        excite.visit(prefix + "/excite", fn);
        excite_bn.visit(prefix + "/excite_bn", fn);
    }
};

/// Low-pass filtering of x with a per-sample, per-group k×k filter under
/// reflection padding. x: N×C×H×W, filter: N×G×k×k with C divisible by G; all
/// channels of a group share the group's filter.
template <class T>
Tensor<T> dynamic_group_filter(const Tensor<T>& x, const Tensor<T>& filter) {
    if (x.ndim() != 4 || filter.ndim() != 4) throw std::invalid_argument("dynamic_group_filter: expected 4-D tensors");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t groups = filter.dim(1), k = filter.dim(2);
    if (filter.dim(0) != n) throw std::invalid_argument("dynamic_group_filter: filter batch dim 0 != input batch");
    if (filter.dim(3) != k || k % 2 == 0) throw std::invalid_argument("dynamic_group_filter: filter must be odd square");
    if (c % groups != 0) {
        throw std::invalid_argument("dynamic_group_filter: channels " + std::to_string(c) + " not divisible by groups " +
                                    std::to_string(groups));
    }
    const std::size_t p = k / 2;
    if (p >= h || p >= w) throw std::invalid_argument("dynamic_group_filter: input too small for reflection padding");

    // Source offset of each (tap, position) pair inside one plane.
    const auto table = detail::im2col_table(h, w, k, 1, PaddingSpec::reflect(p), h, w);
    const std::size_t cg = c / groups, kk = k * k, hw = h * w;
    const auto& xv = x.values();
    const auto& fv = filter.values();
    std::vector<T> out(xv.size(), T(0));
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* f = fv.data() + (b * groups + ch / cg) * kk;
            const T* src = xv.data() + (b * c + ch) * hw;
            T* dst = out.data() + (b * c + ch) * hw;
            for (std::size_t q = 0; q < kk; ++q) {
                const std::int64_t* t = table.data() + q * hw;
                const T fq = f[q];
                for (std::size_t i = 0; i < hw; ++i) dst[i] += fq * src[t[i]];
            }
        }
    return Tensor<T>::make_result(
        x.shape(), std::move(out), {x, filter}, "dynamic_group_filter",
        [table, n, c, groups, cg, kk, hw](detail::Node<T>& node) {
            const auto& xv = node.parents[0]->data;
            const auto& fv = node.parents[1]->data;
            auto* gx = grad_of(node.parents[0]);
            auto* gf = grad_of(node.parents[1]);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t fo = (b * groups + ch / cg) * kk;
                    const T* src = xv.data() + (b * c + ch) * hw;
                    const T* go = node.grad.data() + (b * c + ch) * hw;
                    for (std::size_t q = 0; q < kk; ++q) {
                        const std::int64_t* t = table.data() + q * hw;
                        if (gf) {
                            T s = 0;
                            for (std::size_t i = 0; i < hw; ++i) s += go[i] * src[t[i]];
                            (*gf)[fo + q] += s;
                        }
                        if (gx) {
                            T* gp = gx->data() + (b * c + ch) * hw;
                            const T fq = fv[fo + q];
                            for (std::size_t i = 0; i < hw; ++i) gp[t[i]] += fq * go[i];
                        }
                    }
                }
        });
}

template <class T>
struct FrequencyBands {
    Tensor<T> low, high;
};

/// y_low = reflect-padded grouped filtering of x; y_high = x - y_low.
template <class T>
FrequencyBands<T> freq_decompose(const Tensor<T>& x, const Tensor<T>& filter) {
    Tensor<T> low = dynamic_group_filter(x, filter);
    return {low, sub(x, low)};
}

template <class T>
struct Ffe {
    HffcConfig cfg;
    Conv2d<T> filter_gen;  // C -> k*k*G logits from pooled features
    BatchNorm2d<T> filter_bn;
    ChannelAttention<T> se_low, se_high, se_fuse;

    Ffe() = default;
    Ffe(std::size_t c, HffcConfig c_, Rng& rng) : cfg(c_) {
        if (c % cfg.groups != 0) {
            throw std::invalid_argument("ffe: channels " + std::to_string(c) + " not divisible by filter groups " +
                                        std::to_string(cfg.groups));
        }
        const std::size_t logits = cfg.filter_size * cfg.filter_size * cfg.groups;
        filter_gen = Conv2d<T>(c, logits, 1, 1, PaddingSpec::none(), false, rng);
        filter_bn = BatchNorm2d<T>(logits);
        se_low = ChannelAttention<T>(c, cfg.se_reduction, rng);
        se_high = ChannelAttention<T>(c, cfg.se_reduction, rng);
        se_fuse = ChannelAttention<T>(c, cfg.se_reduction, rng);
    }

    /// N×G×k×k filter; each group's k² weights are positive and sum to 1.
    Tensor<T> make_lowpass_filter(const Tensor<T>& x, Mode mode) {
        const std::size_t n = x.dim(0), g = cfg.groups, k = cfg.filter_size;
        Tensor<T> logits = filter_bn(filter_gen(global_avg_pool(x)), mode);
        return reshape(softmax(reshape(logits, Shape{n, g, k * k}), 2), Shape{n, g, k, k});
    }

    /// L * C + H * (1 - C), with C computed from L + H.
    Tensor<T> fuse(const Tensor<T>& low_local, const Tensor<T>& high_local, Mode mode) {
        Tensor<T> gate = se_fuse(add(low_local, high_local), mode);
        return add(mul(low_local, gate), mul(high_local, affine(gate, T(-1), T(1))));
    }

    Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
        switch (cfg.variant) {
            case FfeVariant::off:
                return x;
            case FfeVariant::no_decomposition:
                return mul(x, se_low(x, mode));
            case FfeVariant::no_selection: {
                auto bands = freq_decompose(x, make_lowpass_filter(x, mode));
                return add(bands.low, bands.high);
            }
            case FfeVariant::full:
                break;
        }
        auto bands = freq_decompose(x, make_lowpass_filter(x, mode));
        Tensor<T> low_local = mul(bands.low, se_low(bands.low, mode));
        Tensor<T> high_local = mul(bands.high, se_high(bands.high, mode));
        return fuse(low_local, high_local, mode);
    }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        if (cfg.variant == FfeVariant::off) return;
        if (cfg.variant != FfeVariant::no_decomposition) {
            filter_gen.visit(prefix + "/filter_gen", fn);
            filter_bn.visit(prefix + "/filter_bn", fn);
        }
        if (cfg.variant == FfeVariant::no_selection) return;
        se_low.visit(prefix + "/se_low", fn);
        if (cfg.variant == FfeVariant::no_decomposition) return;
        se_high.visit(prefix + "/se_high", fn);
        se_fuse.visit(prefix + "/se_fuse", fn);
    }
};

/// entry conv -> LeakyReLU -> BN -> FFE -> exit conv -> 2×2 max pool.
/// Halves H and W. BN layers inside FFE act on pooled N×C×1×1 features, so
/// train mode needs a batch of at least two.
template <class T>
struct HffcBlock {
    HffcConfig cfg;
    Conv2d<T> entry;
    BatchNorm2d<T> entry_bn;
    Ffe<T> ffe;
    Conv2d<T> exit;

    HffcBlock() = default;
    HffcBlock(std::size_t c_in, std::size_t c_out, HffcConfig c_, Rng& rng) : cfg(c_) {
        if (c_out < c_in) {
            throw std::invalid_argument("hffc: output channels " + std::to_string(c_out) + " < input channels " +
                                        std::to_string(c_in));
        }
        entry = Conv2d<T>(c_in, c_out, 3, 1, PaddingSpec::zeros(1), true, rng);
        entry_bn = BatchNorm2d<T>(c_out);
        ffe = Ffe<T>(c_out, cfg, rng);
        exit = Conv2d<T>(c_out, c_out, 3, 1, PaddingSpec::zeros(1), true, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
        if (x.ndim() != 4 || x.dim(2) % 2 || x.dim(3) % 2) {
            throw std::invalid_argument("hffc: input must be NCHW with even H and W, got " + shape_str(x.shape()));
        }
        Tensor<T> y = entry_bn(leaky_relu(entry(x), cfg.leaky_alpha), mode);
        y = exit(ffe(y, mode));
        return pool2d(y, PoolKind::max, 2, 2);
    }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        entry.visit(prefix + "/entry_conv", fn);
        entry_bn.visit(prefix + "/entry_bn", fn);
        ffe.visit(prefix + "/ffe", fn);
        exit.visit(prefix + "/exit_conv", fn);
    }
};

}  // namespace wnsf
