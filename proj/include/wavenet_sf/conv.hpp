#pragma once

// 2-D convolution (cross-correlation), pooling and spatial pad/crop on NCHW tensors.

#include <cstdint>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace wnsf {

enum class PadKind { zero, reflect };

struct PaddingSpec {
    PadKind kind = PadKind::zero;
    std::size_t amount = 0;

    static PaddingSpec none() { return {PadKind::zero, 0}; }
    static PaddingSpec zeros(std::size_t p) { return {PadKind::zero, p}; }
    static PaddingSpec reflect(std::size_t p) { return {PadKind::reflect, p}; }
};

namespace detail {

// Maps a padded coordinate to the source coordinate, or -1 for a zero pad.
// Reflection excludes the edge sample: -1 -> 1, n -> n-2.
inline std::int64_t pad_source(std::int64_t i, std::int64_t n, PadKind kind) {
    if (i >= 0 && i < n) return i;
    if (kind == PadKind::zero) return -1;
    if (i < 0) return -i;
    return 2 * (n - 1) - i;
}

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Gather table shared by every channel: entry (q, pos) is the flat source
// offset inside one H×W plane for kernel tap q at output position pos.
inline std::vector<std::int64_t> im2col_table(std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                                              PaddingSpec pad, std::size_t ho, std::size_t wo) {
    std::vector<std::int64_t> table(k * k * ho * wo);
    const auto p = static_cast<std::int64_t>(pad.amount);
    for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
            std::int64_t* row = table.data() + (kh * k + kw) * ho * wo;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::int64_t sy = pad_source(static_cast<std::int64_t>(oy * stride + kh) - p,
                                                   static_cast<std::int64_t>(h), pad.kind);
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::int64_t sx = pad_source(static_cast<std::int64_t>(ox * stride + kw) - p,
                                                       static_cast<std::int64_t>(w), pad.kind);
                    row[oy * wo + ox] = (sy < 0 || sx < 0) ? -1 : sy * static_cast<std::int64_t>(w) + sx;
                }
            }
        }
    }
    return table;
}

struct ConvGeometry {
    std::size_t n, c, h, w, o, k, stride, groups, ho, wo;
    PaddingSpec pad;
    bool pointwise;  // 1×1, stride 1, no padding: the input plane is already the column matrix
};

}  // namespace detail

/// Grouped 2-D cross-correlation. input N×C×H×W, weight O×(C/groups)×K×K, optional bias O.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, std::size_t stride,
                 PaddingSpec pad, std::size_t groups = 1) {
    if (input.ndim() != 4) throw std::invalid_argument("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be OIKK, got " + shape_str(weight.shape()));
    if (stride == 0 || groups == 0) throw std::invalid_argument("conv2d: stride and groups must be positive");
    detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                           stride, groups, 0, 0, pad, false};
    if (g.c % groups != 0) {
        throw std::invalid_argument("conv2d: channels " + std::to_string(g.c) + " not divisible by groups " +
                                    std::to_string(groups));
    }
    if (g.o % groups != 0) {
        throw std::invalid_argument("conv2d: output channels " + std::to_string(g.o) + " not divisible by groups " +
                                    std::to_string(groups));
    }
    if (weight.dim(1) != g.c / groups) {
        throw std::invalid_argument("conv2d: weight dim 1 is " + std::to_string(weight.dim(1)) + ", expected C/groups = " +
                                    std::to_string(g.c / groups));
    }
    if (weight.dim(3) != g.k) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(weight.shape()));
    if (g.h + 2 * pad.amount < g.k) throw std::invalid_argument("conv2d: kernel height exceeds padded input height");
    if (g.w + 2 * pad.amount < g.k) throw std::invalid_argument("conv2d: kernel width exceeds padded input width");
    if (pad.kind == PadKind::reflect && (pad.amount >= g.h || pad.amount >= g.w)) {
        throw std::invalid_argument("conv2d: reflection padding must be smaller than the input size");
    }
    if (bias && (bias->ndim() != 1 || bias->dim(0) != g.o)) {
        throw std::invalid_argument("conv2d: bias must have shape [" + std::to_string(g.o) + "]");
    }
    g.ho = detail::conv_out_size(g.h, g.k, stride, pad.amount);
    g.wo = detail::conv_out_size(g.w, g.k, stride, pad.amount);
    g.pointwise = g.k == 1 && stride == 1 && pad.amount == 0;

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;

    const std::size_t cg = g.c / groups, og = g.o / groups, kk = g.k * g.k;
    const std::size_t plane = g.h * g.w, opos = g.ho * g.wo, rows = cg * kk;
    auto table = g.pointwise ? std::vector<std::int64_t>{}
                             : detail::im2col_table(g.h, g.w, g.k, stride, pad, g.ho, g.wo);

    auto gather = [cg, kk, plane, opos](const std::vector<std::int64_t>& tbl, const T* src, T* col) {
        for (std::size_t c = 0; c < cg; ++c) {
            const T* sp = src + c * plane;
            for (std::size_t q = 0; q < kk; ++q) {
                const std::int64_t* t = tbl.data() + q * opos;
                T* dst = col + (c * kk + q) * opos;
                for (std::size_t p = 0; p < opos; ++p) dst[p] = t[p] < 0 ? T(0) : sp[t[p]];
            }
        }
    };

    std::vector<T> out(g.n * g.o * opos);
    std::vector<T> col(g.pointwise ? 0 : rows * opos);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const T* src = input.values().data() + (n * g.c + gi * cg) * plane;
            const T* colp = src;
            if (!g.pointwise) {
                gather(table, src, col.data());
                colp = col.data();
            }
            MMap(out.data() + (n * g.o + gi * og) * opos, og, opos).noalias() =
                CMap(weight.values().data() + gi * og * rows, og, rows) * CMap(colp, rows, opos);
        }
    }
    if (bias) {
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t o = 0; o < g.o; ++o) {
                T* dst = out.data() + (n * g.o + o) * opos;
                const T b = bias->values()[o];
                for (std::size_t p = 0; p < opos; ++p) dst[p] += b;
            }
    }

    auto fn = [g, table = std::move(table), gather, cg, og, kk, plane, opos, rows](detail::Node<T>& node) {
        const auto& in = node.parents[0]->data;
        const auto& wt = node.parents[1]->data;
        auto* gin = grad_of(node.parents[0]);
        auto* gw = grad_of(node.parents[1]);
        std::vector<T> col(g.pointwise ? 0 : rows * opos);
        std::vector<T> dcol(g.pointwise ? 0 : rows * opos);
        for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t gi = 0; gi < g.groups; ++gi) {
                CMap gout(node.grad.data() + (n * g.o + gi * og) * opos, og, opos);
                const T* src = in.data() + (n * g.c + gi * cg) * plane;
                if (gw) {
                    const T* colp = src;
                    if (!g.pointwise) {
                        gather(table, src, col.data());
                        colp = col.data();
                    }
                    MMap(gw->data() + gi * og * rows, og, rows).noalias() += gout * CMap(colp, rows, opos).transpose();
                }
                if (gin) {
                    CMap wg(wt.data() + gi * og * rows, og, rows);
                    T* gsrc = gin->data() + (n * g.c + gi * cg) * plane;
                    if (g.pointwise) {
                        MMap(gsrc, rows, opos).noalias() += wg.transpose() * gout;
                    } else {
                        MMap(dcol.data(), rows, opos).noalias() = wg.transpose() * gout;
                        for (std::size_t c = 0; c < cg; ++c) {
                            T* gp = gsrc + c * plane;
                            for (std::size_t q = 0; q < kk; ++q) {
                                const std::int64_t* t = table.data() + q * opos;
                                const T* d = dcol.data() + (c * kk + q) * opos;
                                for (std::size_t p = 0; p < opos; ++p)
                                    if (t[p] >= 0) gp[t[p]] += d[p];
                            }
                        }
                    }
                }
            }
        }
        if (node.parents.size() > 2) {
            if (auto* gb = grad_of(node.parents[2])) {
                for (std::size_t n = 0; n < g.n; ++n)
                    for (std::size_t o = 0; o < g.o; ++o) {
                        const T* src = node.grad.data() + (n * g.o + o) * opos;
                        T s = 0;
                        for (std::size_t p = 0; p < opos; ++p) s += src[p];
                        (*gb)[o] += s;
                    }
            }
        }
    };

    Shape shape{g.n, g.o, g.ho, g.wo};
    if (bias) return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight, *bias}, "conv2d", fn);
    return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight}, "conv2d", fn);
}

enum class PoolKind { max, avg };

/// Windowed pooling without padding. Max routes the gradient to the first
/// maximal element in row-major window order.
template <class T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t window, std::size_t stride) {
    if (input.ndim() != 4) throw std::invalid_argument("pool2d: input must be NCHW, got " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (window == 0 || stride == 0) throw std::invalid_argument("pool2d: window and stride must be positive");
    if (window > h || window > w) {
        throw std::invalid_argument("pool2d: window " + std::to_string(window) + " larger than input " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::size_t> arg(kind == PoolKind::max ? out.size() : 0);
    const auto& v = input.values();
    const T inv = T(1) / static_cast<T>(window * window);
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::size_t o = (p * ho + oy) * wo + ox;
                if (kind == PoolKind::max) {
                    std::size_t best = base + oy * stride * w + ox * stride;
                    for (std::size_t dy = 0; dy < window; ++dy)
                        for (std::size_t dx = 0; dx < window; ++dx) {
                            const std::size_t k = base + (oy * stride + dy) * w + ox * stride + dx;
                            if (v[k] > v[best]) best = k;
                        }
                    out[o] = v[best];
                    arg[o] = best;
                } else {
                    T s = 0;
                    for (std::size_t dy = 0; dy < window; ++dy)
                        for (std::size_t dx = 0; dx < window; ++dx)
                            s += v[base + (oy * stride + dy) * w + ox * stride + dx];
                    out[o] = s * inv;
                }
            }
        }
    }
    return Tensor<T>::make_result(
        Shape{n, c, ho, wo}, std::move(out), {input}, kind == PoolKind::max ? "max_pool2d" : "avg_pool2d",
        [kind, arg = std::move(arg), n, c, h, w, ho, wo, window, stride, inv](detail::Node<T>& node) {
            auto& g = *grad_of(node.parents[0]);
            if (kind == PoolKind::max) {
                for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += node.grad[o];
                return;
            }
            for (std::size_t p = 0; p < n * c; ++p)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const T go = node.grad[(p * ho + oy) * wo + ox] * inv;
                        for (std::size_t dy = 0; dy < window; ++dy)
                            for (std::size_t dx = 0; dx < window; ++dx)
                                g[p * h * w + (oy * stride + dy) * w + ox * stride + dx] += go;
                    }
        });
}

/// Appends `rows` zero rows at the bottom and `cols` zero columns at the right.
template <class T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, std::size_t rows, std::size_t cols) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t h2 = h + rows, w2 = w + cols;
    std::vector<T> out(n * c * h2 * w2, T(0));
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(x.values().begin() + (p * h + y) * w, w, out.begin() + (p * h2 + y) * w2);
    return Tensor<T>::make_result(Shape{n, c, h2, w2}, std::move(out), {x}, "pad_bottom_right",
                                  [n, c, h, w, h2, w2](detail::Node<T>& node) {
                                      auto& g = *grad_of(node.parents[0]);
                                      for (std::size_t p = 0; p < n * c; ++p)
                                          for (std::size_t y = 0; y < h; ++y)
                                              for (std::size_t xx = 0; xx < w; ++xx)
                                                  g[(p * h + y) * w + xx] += node.grad[(p * h2 + y) * w2 + xx];
                                  });
}

/// Keeps the top-left h×w window.
template <class T>
Tensor<T> crop_top_left(const Tensor<T>& x, std::size_t h, std::size_t w) {
    const std::size_t n = x.dim(0), c = x.dim(1), h1 = x.dim(2), w1 = x.dim(3);
    if (h > h1 || w > w1) throw std::invalid_argument("crop_top_left: crop larger than input");
    std::vector<T> out(n * c * h * w);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(x.values().begin() + (p * h1 + y) * w1, w, out.begin() + (p * h + y) * w);
    return Tensor<T>::make_result(Shape{n, c, h, w}, std::move(out), {x}, "crop_top_left",
                                  [n, c, h, w, h1, w1](detail::Node<T>& node) {
                                      auto& g = *grad_of(node.parents[0]);
                                      for (std::size_t p = 0; p < n * c; ++p)
                                          for (std::size_t y = 0; y < h; ++y)
                                              for (std::size_t xx = 0; xx < w; ++xx)
                                                  g[(p * h1 + y) * w1 + xx] += node.grad[(p * h + y) * w + xx];
                                  });
}

}  // namespace wnsf
