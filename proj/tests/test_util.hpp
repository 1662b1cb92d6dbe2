#pragma once

#include <cmath>
#include <vector>

#include <wavenet_sf/ops.hpp>
#include <wavenet_sf/rng.hpp>
#include <wavenet_sf/tensor.hpp>

namespace wnsf::testing {

template <class T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    Tensor<T> t(std::move(shape), T(0), requires_grad);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

/// Weighted sum of every output element with fixed pseudo-random weights,
/// so a scalar loss exercises all output coordinates with distinct gradients.
template <class T>
Tensor<T> probe_loss(const Tensor<T>& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor<T> w(y.shape());
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return sum_all(mul(y, w));
}

}  // namespace wnsf::testing
