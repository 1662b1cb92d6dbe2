#pragma once

// Multi-scale wavelet spatial attention.
//
//   S(F)  = sigmoid(conv1x1(sum_i BN_i(wt_conv_i(Max_c(F) + Avg_c(F)))))
//   F'    = F + F * S(F)            (S broadcast over channels)
//
// Branch i runs an i-level wavelet convolution, i = 1..n, where n is fixed
// from the feature-map size when the module is built.

#include <string>
#include <vector>

#include "layers.hpp"
#include "wavelet.hpp"

namespace wnsf {

enum class Compress { sum, concat };

struct MswSaConfig {
    std::size_t max_levels = 4;
    std::size_t kernel_size = 3;
    Compress compress = Compress::sum;
};

/// Channel-wise max plus channel-wise mean: N×C×H×W -> N×1×H×W.
template <class T>
Tensor<T> channel_compress(const Tensor<T>& input) {
    if (input.ndim() != 4) throw std::invalid_argument("channel_compress: input must be NCHW");
    return add(max_over(input, 1), mean_over(input, 1));
}

template <class T>
struct MswSa {
    MswSaConfig cfg;
    std::size_t levels = 0;
    std::size_t height = 0, width = 0;
    std::vector<WtConvParams<T>> branches;  // branch i has i + 1 levels
    std::vector<BatchNorm2d<T>> branch_norms;
    Conv2d<T> reduce;  // 1×1, compressed channels -> 1

    MswSa() = default;
    MswSa(std::size_t h, std::size_t w, MswSaConfig c, Rng& rng) : cfg(c), height(h), width(w) {
        levels = levels_for_size(h, w, cfg.max_levels);
        const std::size_t ch = compressed_channels();
        for (std::size_t i = 1; i <= levels; ++i) {
            branches.emplace_back(ch, i, cfg.kernel_size, rng);
            branch_norms.emplace_back(ch);
        }
        reduce = Conv2d<T>(ch, 1, 1, 1, PaddingSpec::none(), true, rng);
    }

    std::size_t compressed_channels() const { return cfg.compress == Compress::sum ? 1 : 2; }

    Tensor<T> compress(const Tensor<T>& f) const {
        if (cfg.compress == Compress::sum) return channel_compress(f);
        return concat(max_over(f, 1), mean_over(f, 1), 1);
    }

    /// Spatial attention map S(F), N×1×H×W with values in (0, 1).
    Tensor<T> attention_map(const Tensor<T>& f, Mode mode) {
        if (f.ndim() != 4) throw std::invalid_argument("msw_sa: input must be NCHW");
        if (f.dim(2) != height || f.dim(3) != width) {
            throw std::invalid_argument("msw_sa: built for " + std::to_string(height) + "x" + std::to_string(width) +
                                        " maps, got " + shape_str(f.shape()));
        }
        const Tensor<T> z = compress(f);
        Tensor<T> acc;
        for (std::size_t i = 0; i < levels; ++i) {
            Tensor<T> b = branch_norms[i](wt_conv(z, branches[i]), mode);
            acc = acc.defined() ? add(acc, b) : b;
        }
        return sigmoid(reduce(acc));
    }

    Tensor<T> operator()(const Tensor<T>& f, Mode mode) { return add(f, mul(f, attention_map(f, mode))); }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        for (std::size_t i = 0; i < levels; ++i) {
            const std::string bp = prefix + "/branch" + std::to_string(i + 1);
            for (std::size_t l = 0; l < branches[i].kernels.size(); ++l)
                fn(bp + "/wt_kernel" + std::to_string(l + 1), branches[i].kernels[l], true);
            branch_norms[i].visit(bp + "/bn", fn);
        }
        reduce.visit(prefix + "/reduce", fn);
    }
};

}  // namespace wnsf
