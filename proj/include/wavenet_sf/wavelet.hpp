#pragma once

// Orthonormal Haar analysis/synthesis on NCHW tensors and the multi-level
// wavelet convolution built on top of it.

#include <algorithm>
#include <array>
#include <bit>
#include <string>
#include <vector>

#include "conv.hpp"
#include "init.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace wnsf {

/// One decomposition level. Each subband is N×C×(H/2)×(W/2).
template <class T>
struct WaveletSubbands {
    Tensor<T> ll, lh, hl, hh;
};

namespace detail {

// Row k gives the sign of taps (a, b, c, d) of a 2×2 block [[a, b], [c, d]]
// for subband k in order LL, LH, HL, HH. The matrix is symmetric and, scaled
// by 1/2, orthogonal, so it is its own inverse.
inline constexpr std::array<std::array<int, 4>, 4> kHaarSigns{{
    {+1, +1, +1, +1},
    {+1, +1, -1, -1},
    {+1, -1, +1, -1},
    {+1, -1, -1, +1},
}};

template <class T>
Tensor<T> haar_band(const Tensor<T>& x, std::size_t band) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t h2 = h / 2, w2 = w / 2;
    const auto& s = kHaarSigns[band];
    const auto& v = x.values();
    std::vector<T> out(n * c * h2 * w2);
    for (std::size_t p = 0; p < n * c; ++p) {
        const T* src = v.data() + p * h * w;
        T* dst = out.data() + p * h2 * w2;
        for (std::size_t y = 0; y < h2; ++y)
            for (std::size_t xx = 0; xx < w2; ++xx) {
                const T a = src[2 * y * w + 2 * xx], b = src[2 * y * w + 2 * xx + 1];
                const T cc = src[(2 * y + 1) * w + 2 * xx], d = src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * w2 + xx] = T(0.5) * (s[0] * a + s[1] * b + s[2] * cc + s[3] * d);
            }
    }
    static constexpr const char* names[] = {"haar_ll", "haar_lh", "haar_hl", "haar_hh"};
    return Tensor<T>::make_result(Shape{n, c, h2, w2}, std::move(out), {x}, names[band],
                                  [n, c, h, w, h2, w2, s](Node<T>& node) {
                                      auto& g = *grad_of(node.parents[0]);
                                      for (std::size_t p = 0; p < n * c; ++p) {
                                          T* dst = g.data() + p * h * w;
                                          const T* src = node.grad.data() + p * h2 * w2;
                                          for (std::size_t y = 0; y < h2; ++y)
                                              for (std::size_t xx = 0; xx < w2; ++xx) {
                                                  const T gv = T(0.5) * src[y * w2 + xx];
                                                  dst[2 * y * w + 2 * xx] += s[0] * gv;
                                                  dst[2 * y * w + 2 * xx + 1] += s[1] * gv;
                                                  dst[(2 * y + 1) * w + 2 * xx] += s[2] * gv;
                                                  dst[(2 * y + 1) * w + 2 * xx + 1] += s[3] * gv;
                                              }
                                      }
                                  });
}

}  // namespace detail

/// One level of the separable orthonormal Haar transform. H and W must be even.
template <class T>
WaveletSubbands<T> haar_dwt2d(const Tensor<T>& input) {
    if (input.ndim() != 4) throw std::invalid_argument("haar_dwt2d: input must be NCHW, got " + shape_str(input.shape()));
    if (input.dim(2) % 2 != 0 || input.dim(3) % 2 != 0) {
        throw std::invalid_argument("haar_dwt2d: spatial size " + std::to_string(input.dim(2)) + "x" +
                                    std::to_string(input.dim(3)) +
                                    " is odd; pad the input to even height and width first");
    }
    return {detail::haar_band(input, 0), detail::haar_band(input, 1), detail::haar_band(input, 2),
            detail::haar_band(input, 3)};
}

/// Exact inverse of haar_dwt2d.
template <class T>
Tensor<T> haar_idwt2d(const WaveletSubbands<T>& sb) {
    const Shape& s = sb.ll.shape();
    if (s.size() != 4) throw std::invalid_argument("haar_idwt2d: subbands must be NCHW");
    if (sb.lh.shape() != s || sb.hl.shape() != s || sb.hh.shape() != s) {
        throw std::invalid_argument("haar_idwt2d: subband shapes differ: ll " + shape_str(s) + ", lh " +
                                    shape_str(sb.lh.shape()) + ", hl " + shape_str(sb.hl.shape()) + ", hh " +
                                    shape_str(sb.hh.shape()));
    }
    const std::size_t n = s[0], c = s[1], h2 = s[2], w2 = s[3], h = 2 * h2, w = 2 * w2;
    const std::array<const std::vector<T>*, 4> bands{&sb.ll.values(), &sb.lh.values(), &sb.hl.values(),
                                                     &sb.hh.values()};
    std::vector<T> out(n * c * h * w);
    for (std::size_t p = 0; p < n * c; ++p) {
        T* dst = out.data() + p * h * w;
        for (std::size_t y = 0; y < h2; ++y)
            for (std::size_t xx = 0; xx < w2; ++xx) {
                const std::size_t k = p * h2 * w2 + y * w2 + xx;
                std::array<T, 4> tap{};
                for (std::size_t band = 0; band < 4; ++band) {
                    const T v = (*bands[band])[k];
                    for (std::size_t t = 0; t < 4; ++t) tap[t] += detail::kHaarSigns[band][t] * v;
                }
                dst[2 * y * w + 2 * xx] = T(0.5) * tap[0];
                dst[2 * y * w + 2 * xx + 1] = T(0.5) * tap[1];
                dst[(2 * y + 1) * w + 2 * xx] = T(0.5) * tap[2];
                dst[(2 * y + 1) * w + 2 * xx + 1] = T(0.5) * tap[3];
            }
    }
    return Tensor<T>::make_result(
        Shape{n, c, h, w}, std::move(out), {sb.ll, sb.lh, sb.hl, sb.hh}, "haar_idwt2d",
        [n, c, h2, w2, h, w](detail::Node<T>& node) {
            for (std::size_t band = 0; band < 4; ++band) {
                auto* g = grad_of(node.parents[band]);
                if (!g) continue;
                const auto& sg = detail::kHaarSigns[band];
                for (std::size_t p = 0; p < n * c; ++p) {
                    const T* src = node.grad.data() + p * h * w;
                    for (std::size_t y = 0; y < h2; ++y)
                        for (std::size_t xx = 0; xx < w2; ++xx) {
                            const T v = sg[0] * src[2 * y * w + 2 * xx] + sg[1] * src[2 * y * w + 2 * xx + 1] +
                                        sg[2] * src[(2 * y + 1) * w + 2 * xx] +
                                        sg[3] * src[(2 * y + 1) * w + 2 * xx + 1];
                            (*g)[p * h2 * w2 + y * w2 + xx] += T(0.5) * v;
                        }
                }
            }
        });
}

/// LH + HL + HH: the combined detail content of one level.
template <class T>
Tensor<T> highfreq_sum(const WaveletSubbands<T>& sb) {
    return add(add(sb.lh, sb.hl), sb.hh);
}

/// min(cap, floor(log2(min(h, w)))).
inline std::size_t levels_for_size(std::size_t h, std::size_t w, std::size_t cap = 4) {
    if (h < 2 || w < 2) throw std::invalid_argument("levels_for_size: map must be at least 2x2");
    const std::size_t lv = static_cast<std::size_t>(std::bit_width(std::min(h, w))) - 1;
    return std::min(cap, lv);
}

/// Depthwise kernels for an n-level wavelet convolution, one C×1×k×k kernel per level.
template <class T>
struct WtConvParams {
    std::size_t levels = 1;
    std::size_t kernel_size = 3;
    std::vector<Tensor<T>> kernels;

    WtConvParams() = default;
    WtConvParams(std::size_t channels, std::size_t levels_, std::size_t k, Rng& rng) : levels(levels_), kernel_size(k) {
        if (levels == 0) throw std::invalid_argument("WtConvParams: levels must be >= 1");
        if (k % 2 == 0) throw std::invalid_argument("WtConvParams: kernel size must be odd");
        for (std::size_t l = 0; l < levels; ++l) kernels.push_back(he_normal<T>(Shape{channels, 1, k, k}, rng));
    }
};

/// Convolves the LL band of every decomposition level with that level's
/// depthwise kernel, then rebuilds bottom-up: each level's result is summed
/// with the synthesis of the deeper level using the untouched detail bands.
/// Output shape equals input shape. Odd intermediate sizes are zero-padded at
/// the bottom/right before analysis and cropped after synthesis.
template <class T>
Tensor<T> wt_conv(const Tensor<T>& input, const WtConvParams<T>& params) {
    if (input.ndim() != 4) throw std::invalid_argument("wt_conv: input must be NCHW, got " + shape_str(input.shape()));
    const std::size_t n_levels = params.levels;
    if (params.kernels.size() != n_levels) throw std::invalid_argument("wt_conv: kernel count != levels");
    const std::size_t min_side = std::min(input.dim(2), input.dim(3));
    if (n_levels >= 64 || min_side < (std::size_t{1} << n_levels)) {
        throw std::invalid_argument("wt_conv: " + std::to_string(n_levels) + " levels too deep for " +
                                    std::to_string(input.dim(2)) + "x" + std::to_string(input.dim(3)) + " input");
    }
    const std::size_t channels = input.dim(1);
    const auto pad = PaddingSpec::zeros(params.kernel_size / 2);

    struct Level {
        WaveletSubbands<T> bands;
        std::size_t h, w;  // size before any parity padding
        Tensor<T> conv;
    };
    std::vector<Level> lv;
    lv.reserve(n_levels);
    Tensor<T> x = input;
    for (std::size_t l = 0; l < n_levels; ++l) {
        const std::size_t h = x.dim(2), w = x.dim(3);
        Tensor<T> xe = (h % 2 || w % 2) ? pad_bottom_right(x, h % 2, w % 2) : x;
        WaveletSubbands<T> bands = haar_dwt2d(xe);
        Tensor<T> y = conv2d(bands.ll, params.kernels[l], nullptr, 1, pad, channels);
        x = bands.ll;
        lv.push_back({std::move(bands), h, w, std::move(y)});
    }

    Tensor<T> r = lv.back().conv;
    for (std::size_t l = n_levels; l-- > 0;) {
        const Level& cur = lv[l];
        Tensor<T> up = haar_idwt2d(WaveletSubbands<T>{r, cur.bands.lh, cur.bands.hl, cur.bands.hh});
        if (up.dim(2) != cur.h || up.dim(3) != cur.w) up = crop_top_left(up, cur.h, cur.w);
        r = l > 0 ? add(lv[l - 1].conv, up) : up;
    }
    return r;
}

}  // namespace wnsf
