#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace wnsf {

enum class Mode { train, eval };

template <class T>
struct RunningStats {
    Tensor<T> mean;
    Tensor<T> var;

    RunningStats() = default;
    explicit RunningStats(std::size_t channels) : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

namespace detail {
inline double& bn_momentum_override() {
    thread_local double m = -1.0;
    return m;
}
}  // namespace detail

/// Replaces every batch norm's running-stat momentum while alive; used to
/// re-estimate statistics as a cumulative average (momentum 1/(k+1) on batch k).
class BnMomentumGuard {
public:
    explicit BnMomentumGuard(double m) : prev_(detail::bn_momentum_override()) { detail::bn_momentum_override() = m; }
    ~BnMomentumGuard() { detail::bn_momentum_override() = prev_; }
    BnMomentumGuard(const BnMomentumGuard&) = delete;
    BnMomentumGuard& operator=(const BnMomentumGuard&) = delete;

private:
    double prev_;
};

/// Per-channel batch normalization over N, H, W.
///
/// Train mode normalizes with the batch mean and population variance and
/// blends them into `stats` (the running variance receives the unbiased
/// estimate). Eval mode normalizes with `stats` and leaves it untouched.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, RunningStats<T>& stats,
                       Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
    if (input.ndim() != 4) throw std::invalid_argument("batch_norm2d: input must be NCHW, got " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (gamma.numel() != c || beta.numel() != c || stats.mean.numel() != c || stats.var.numel() != c) {
        throw std::invalid_argument("batch_norm2d: parameter size does not match channel count " + std::to_string(c));
    }
    const std::size_t m = n * hw;
    if (mode == Mode::train && m < 2) {
        throw std::invalid_argument("batch_norm2d: train mode needs N*H*W >= 2 per channel, got " + std::to_string(m));
    }
    if (detail::bn_momentum_override() >= 0) momentum = static_cast<T>(detail::bn_momentum_override());
    const auto& x = input.values();
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T mu, var;
        if (mode == Mode::train) {
            T s = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
            mu = s / static_cast<T>(m);
            T ss = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < hw; ++i) {
                    const T d = x[(b * c + ch) * hw + i] - mu;
                    ss += d * d;
                }
            var = ss / static_cast<T>(m);
            stats.mean[ch] = (T(1) - momentum) * stats.mean[ch] + momentum * mu;
            stats.var[ch] = (T(1) - momentum) * stats.var[ch] +
                            momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
        } else {
            mu = stats.mean[ch];
            var = stats.var[ch];
        }
        inv_std[ch] = T(1) / std::sqrt(var + eps);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t k = (b * c + ch) * hw + i;
                xhat[k] = (x[k] - mu) * inv_std[ch];
            }
    }
    std::vector<T> out(x.size());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t k = (b * c + ch) * hw + i;
                out[k] = gamma[ch] * xhat[k] + beta[ch];
            }

    return Tensor<T>::make_result(
        input.shape(), std::move(out), {input, gamma, beta}, "batch_norm2d",
        [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, m, mode](detail::Node<T>& node) {
            auto* gx = grad_of(node.parents[0]);
            auto* gg = grad_of(node.parents[1]);
            auto* gb = grad_of(node.parents[2]);
            const auto& gamma = node.parents[1]->data;
            const auto& dy = node.grad;
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t k = (b * c + ch) * hw + i;
                        sum_dy += dy[k];
                        sum_dy_xhat += dy[k] * xhat[k];
                    }
                if (gg) (*gg)[ch] += sum_dy_xhat;
                if (gb) (*gb)[ch] += sum_dy;
                if (!gx) continue;
                const T scale = gamma[ch] * inv_std[ch];
                if (mode == Mode::eval) {
                    for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t i = 0; i < hw; ++i) {
                            const std::size_t k = (b * c + ch) * hw + i;
                            (*gx)[k] += dy[k] * scale;
                        }
                    continue;
                }
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t k = (b * c + ch) * hw + i;
                        (*gx)[k] += scale * (dy[k] - inv_m * sum_dy - xhat[k] * inv_m * sum_dy_xhat);
                    }
            }
        });
}

}  // namespace wnsf
