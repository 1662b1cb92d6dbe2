#pragma once

// Parameter-owning wrappers around the primitive ops. Each exposes
// visit(prefix, fn) so a model can enumerate its named tensors; fn receives
// (name, tensor, trainable).

#include <string>

#include "conv.hpp"
#include "init.hpp"
#include "norm.hpp"
#include "ops.hpp"

namespace wnsf {

template <class T>
struct Conv2d {
    Tensor<T> weight;
    Tensor<T> bias;  // undefined when the layer has no bias
    std::size_t stride = 1;
    PaddingSpec pad;
    std::size_t groups = 1;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, PaddingSpec pad_, bool with_bias, Rng& rng,
           std::size_t groups_ = 1)
        : weight(he_normal<T>(Shape{out, in / groups_, k, k}, rng)), stride(stride_), pad(pad_), groups(groups_) {
        if (with_bias) bias = param_zeros<T>(Shape{out});
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, pad, groups);
    }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + "/weight", weight, true);
        if (bias.defined()) fn(prefix + "/bias", bias, true);
    }
};

template <class T>
struct BatchNorm2d {
    Tensor<T> gamma, beta;
    RunningStats<T> stats;
    T eps = T(1e-5);
    T momentum = T(0.1);

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t c) : gamma(param_ones<T>(Shape{c})), beta(param_zeros<T>(Shape{c})), stats(c) {}

    Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return batch_norm2d(x, gamma, beta, stats, mode, eps, momentum); }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + "/gamma", gamma, true);
        fn(prefix + "/beta", beta, true);
        fn(prefix + "/running_mean", stats.mean, false);
        fn(prefix + "/running_var", stats.var, false);
    }
};

template <class T>
struct Linear {
    Tensor<T> weight;  // D_in×D_out
    Tensor<T> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(he_normal_matrix<T>(in, out, rng)), bias(param_zeros<T>(Shape{out})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, &bias); }

    template <class F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + "/weight", weight, true);
        fn(prefix + "/bias", bias, true);
    }
};

}  // namespace wnsf
