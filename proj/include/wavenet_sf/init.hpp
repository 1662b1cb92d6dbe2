#pragma once

#include <cmath>

#include "rng.hpp"
#include "tensor.hpp"

namespace wnsf {

/// Normal(0, sqrt(2 / fan_in)) weights; fan_in is the product of all dims but the first.
template <class T>
Tensor<T> he_normal(Shape shape, Rng& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape), T(0), true);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

/// Same as he_normal for a D_in×D_out matrix (fan_in is the first dim).
template <class T>
Tensor<T> he_normal_matrix(std::size_t d_in, std::size_t d_out, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(d_in));
    Tensor<T> t(Shape{d_in, d_out}, T(0), true);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

template <class T>
Tensor<T> param_zeros(Shape shape) { return Tensor<T>(std::move(shape), T(0), true); }

template <class T>
Tensor<T> param_ones(Shape shape) { return Tensor<T>(std::move(shape), T(1), true); }

}  // namespace wnsf
