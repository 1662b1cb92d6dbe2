#pragma once

// Elementwise, reduction, and dense primitives with their reverse passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace wnsf {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) {
            out[i] = a[i];
        } else if (a[i] == 1) {
            out[i] = b[i];
        } else {
            throw std::invalid_argument(std::string(op) + ": dimension " + std::to_string(i) + " mismatch " +
                                        shape_str(a) + " vs " + shape_str(b));
        }
    }
    return out;
}

// Flat source offsets of every output element for an operand broadcast to `out`.
inline std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
    const std::size_t rank = out.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
        stride[i] = src[i] == 1 ? 0 : s;
        s *= src[i];
    }
    std::vector<std::size_t> idx(shape_numel(out));
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        idx[k] = offset;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            offset += stride[d];
            if (counter[d] < out[d]) break;
            offset -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    return idx;
}

enum class BinaryKind { add, sub, mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
    static constexpr const char* names[] = {"add", "sub", "mul"};
    const char* op = names[static_cast<int>(kind)];
    if (a.shape() == b.shape()) {
        const auto& x = a.values();
        const auto& y = b.values();
        std::vector<T> out(x.size());
        switch (kind) {
            case BinaryKind::add: for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i]; break;
            case BinaryKind::sub: for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i]; break;
            case BinaryKind::mul: for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i]; break;
        }
        return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, op, [kind](Node<T>& n) {
            auto* ga = grad_of(n.parents[0]);
            auto* gb = grad_of(n.parents[1]);
            const auto& g = n.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                switch (kind) {
                    case BinaryKind::add:
                        if (ga) (*ga)[i] += g[i];
                        if (gb) (*gb)[i] += g[i];
                        break;
                    case BinaryKind::sub:
                        if (ga) (*ga)[i] += g[i];
                        if (gb) (*gb)[i] -= g[i];
                        break;
                    case BinaryKind::mul:
                        if (ga) (*ga)[i] += g[i] * n.parents[1]->data[i];
                        if (gb) (*gb)[i] += g[i] * n.parents[0]->data[i];
                        break;
                }
            }
        });
    }

    Shape shape = broadcast_shape(a.shape(), b.shape(), op);
    auto ia = broadcast_index(a.shape(), shape);
    auto ib = broadcast_index(b.shape(), shape);
    const auto& x = a.values();
    const auto& y = b.values();
    std::vector<T> out(ia.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const T u = x[ia[k]];
        const T v = y[ib[k]];
        out[k] = kind == BinaryKind::add ? u + v : kind == BinaryKind::sub ? u - v : u * v;
    }
    return Tensor<T>::make_result(
        std::move(shape), std::move(out), {a, b}, op,
        [kind, ia = std::move(ia), ib = std::move(ib)](Node<T>& n) {
            auto* ga = grad_of(n.parents[0]);
            auto* gb = grad_of(n.parents[1]);
            const auto& x = n.parents[0]->data;
            const auto& y = n.parents[1]->data;
            for (std::size_t k = 0; k < n.grad.size(); ++k) {
                const T g = n.grad[k];
                if (ga) (*ga)[ia[k]] += kind == BinaryKind::mul ? g * y[ib[k]] : g;
                if (gb) (*gb)[ib[k]] += kind == BinaryKind::mul ? g * x[ia[k]] : (kind == BinaryKind::sub ? -g : g);
            }
        });
}

}  // namespace detail

/// Same-rank broadcasting: each dimension must match or be 1 on one side.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::add); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::sub); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::mul); }

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

/// scale * x + shift
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    std::vector<T> out(x.numel());
    const auto& v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * v[i] + shift;
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, "affine", [scale](detail::Node<T>& n) {
        auto& g = *grad_of(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) { return affine(x, s, T(0)); }

enum class ActKind { relu, leaky_relu, sigmoid };

struct Activation {
    ActKind kind = ActKind::relu;
    double alpha = 0.01;  // leaky slope

    static Activation relu() { return {ActKind::relu, 0.0}; }
    static Activation leaky(double a = 0.01) { return {ActKind::leaky_relu, a}; }
    static Activation sigmoid() { return {ActKind::sigmoid, 0.0}; }
};

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
    const auto& v = x.values();
    std::vector<T> out(v.size());
    const T alpha = static_cast<T>(act.alpha);
    switch (act.kind) {
        case ActKind::relu:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
            break;
        case ActKind::leaky_relu:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T(0) ? v[i] : alpha * v[i];
            break;
        case ActKind::sigmoid: {
            // keep the open interval: saturated logits round to exactly 0 or 1 otherwise
            const T lo = std::numeric_limits<T>::min(), hi = std::nextafter(T(1), T(0));
            for (std::size_t i = 0; i < v.size(); ++i) {
                const T s = v[i] >= T(0) ? T(1) / (T(1) + std::exp(-v[i])) : std::exp(v[i]) / (T(1) + std::exp(v[i]));
                out[i] = std::clamp(s, lo, hi);
            }
            break;
        }
    }
    static constexpr const char* names[] = {"relu", "leaky_relu", "sigmoid"};
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, names[static_cast<int>(act.kind)],
                                  [kind = act.kind, alpha](detail::Node<T>& n) {
                                      auto& g = *grad_of(n.parents[0]);
                                      const auto& in = n.parents[0]->data;
                                      for (std::size_t i = 0; i < g.size(); ++i) {
                                          switch (kind) {
                                              case ActKind::relu:
                                                  if (in[i] > T(0)) g[i] += n.grad[i];
                                                  break;
                                              case ActKind::leaky_relu:
                                                  g[i] += in[i] > T(0) ? n.grad[i] : alpha * n.grad[i];
                                                  break;
                                              case ActKind::sigmoid: {
                                                  const T s = n.data[i];
                                                  g[i] += n.grad[i] * s * (T(1) - s);
                                                  break;
                                              }
                                          }
                                      }
                                  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activate(x, Activation::relu()); }
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, double alpha = 0.01) { return activate(x, Activation::leaky(alpha)); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activate(x, Activation::sigmoid()); }

/// Same values, new shape. Element count must be preserved.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
    }
    return Tensor<T>::make_result(std::move(shape), x.values(), {x}, "reshape", [](detail::Node<T>& n) {
        auto& g = *grad_of(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

namespace detail {

// Splits a shape around `axis` into (outer, extent, inner) loop bounds.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace detail

/// Concatenation along `axis`; all other dimensions must agree.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
    if (a.ndim() != b.ndim() || axis >= a.ndim()) throw std::invalid_argument("concat: bad rank or axis");
    for (std::size_t i = 0; i < a.ndim(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i)) {
            throw std::invalid_argument("concat: dimension " + std::to_string(i) + " mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    Shape shape = a.shape();
    shape[axis] += b.dim(axis);
    const auto sa = detail::split_axis(a.shape(), axis);
    const auto sb = detail::split_axis(b.shape(), axis);
    const std::size_t la = sa.extent * sa.inner, lb = sb.extent * sb.inner;
    std::vector<T> out(shape_numel(shape));
    for (std::size_t o = 0; o < sa.outer; ++o) {
        std::copy_n(a.values().begin() + o * la, la, out.begin() + o * (la + lb));
        std::copy_n(b.values().begin() + o * lb, lb, out.begin() + o * (la + lb) + la);
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {a, b}, "concat",
                                  [outer = sa.outer, la, lb](detail::Node<T>& n) {
                                      auto* ga = grad_of(n.parents[0]);
                                      auto* gb = grad_of(n.parents[1]);
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          const T* src = n.grad.data() + o * (la + lb);
                                          if (ga) for (std::size_t i = 0; i < la; ++i) (*ga)[o * la + i] += src[i];
                                          if (gb) for (std::size_t i = 0; i < lb; ++i) (*gb)[o * lb + i] += src[la + i];
                                      }
                                  });
}

/// Mean over all elements, as a one-element tensor.
template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.values()) s += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    return Tensor<T>::make_result(Shape{1}, {s * inv}, {x}, "mean_all", [inv](detail::Node<T>& n) {
        auto& g = *grad_of(n.parents[0]);
        for (auto& v : g) v += n.grad[0] * inv;
    });
}

/// Sum over all elements, as a one-element tensor.
template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.values()) s += v;
    return Tensor<T>::make_result(Shape{1}, {s}, {x}, "sum_all", [](detail::Node<T>& n) {
        auto& g = *grad_of(n.parents[0]);
        for (auto& v : g) v += n.grad[0];
    });
}

/// Max over `axis` keeping the axis with extent 1. Gradient goes to the first maximal index.
template <class T>
Tensor<T> max_over(const Tensor<T>& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] = 1;
    std::vector<T> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(out.size());
    const auto& v = x.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = o * sp.extent * sp.inner + i;
            for (std::size_t e = 1; e < sp.extent; ++e) {
                const std::size_t k = (o * sp.extent + e) * sp.inner + i;
                if (v[k] > v[best]) best = k;
            }
            out[o * sp.inner + i] = v[best];
            arg[o * sp.inner + i] = best;
        }
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, "max_over",
                                  [arg = std::move(arg)](detail::Node<T>& n) {
                                      auto& g = *grad_of(n.parents[0]);
                                      for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += n.grad[k];
                                  });
}

/// Mean over `axis` keeping the axis with extent 1.
template <class T>
Tensor<T> mean_over(const Tensor<T>& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] = 1;
    std::vector<T> out(sp.outer * sp.inner, T(0));
    const auto& v = x.values();
    const T inv = T(1) / static_cast<T>(sp.extent);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t e = 0; e < sp.extent; ++e) {
            const T* src = v.data() + (o * sp.extent + e) * sp.inner;
            T* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    }
    for (auto& o : out) o *= inv;
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, "mean_over",
                                  [sp, inv](detail::Node<T>& n) {
                                      auto& g = *grad_of(n.parents[0]);
                                      for (std::size_t o = 0; o < sp.outer; ++o)
                                          for (std::size_t e = 0; e < sp.extent; ++e)
                                              for (std::size_t i = 0; i < sp.inner; ++i)
                                                  g[(o * sp.extent + e) * sp.inner + i] +=
                                                      n.grad[o * sp.inner + i] * inv;
                                  });
}

/// NCHW -> NC11 spatial mean.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
    const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(nc);
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t k = 0; k < nc; ++k) {
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += x.values()[k * hw + i];
        out[k] = s * inv;
    }
    return Tensor<T>::make_result(Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {x}, "global_avg_pool",
                                  [hw, inv](detail::Node<T>& n) {
                                      auto& g = *grad_of(n.parents[0]);
                                      for (std::size_t k = 0; k < n.grad.size(); ++k) {
                                          const T gk = n.grad[k] * inv;
                                          for (std::size_t i = 0; i < hw; ++i) g[k * hw + i] += gk;
                                      }
                                  });
}

/// Max-shifted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.ndim()) throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range");
    const auto sp = detail::split_axis(x.shape(), axis);
    const auto& v = x.values();
    std::vector<T> out(v.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            T m = v[base];
            for (std::size_t e = 1; e < sp.extent; ++e) m = std::max(m, v[base + e * sp.inner]);
            T s = 0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
                const T ex = std::exp(v[base + e * sp.inner] - m);
                out[base + e * sp.inner] = ex;
                s += ex;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= s;
        }
    }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, "softmax", [sp](detail::Node<T>& n) {
        auto& g = *grad_of(n.parents[0]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.extent * sp.inner + i;
                T dot = 0;
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    const std::size_t k = base + e * sp.inner;
                    dot += n.grad[k] * n.data[k];
                }
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    const std::size_t k = base + e * sp.inner;
                    g[k] += n.data[k] * (n.grad[k] - dot);
                }
            }
        }
    });
}

/// input N×D, weight D×M, bias M (optional) -> N×M
template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias = nullptr) {
    if (input.ndim() != 2 || weight.ndim() != 2) {
        throw std::invalid_argument("linear: expected 2-D input and weight, got " + shape_str(input.shape()) +
                                    " and " + shape_str(weight.shape()));
    }
    const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(1);
    if (weight.dim(0) != d) {
        throw std::invalid_argument("linear: input dim 1 (" + std::to_string(d) + ") != weight dim 0 (" +
                                    std::to_string(weight.dim(0)) + ")");
    }
    if (bias && (bias->ndim() != 1 || bias->dim(0) != m)) {
        throw std::invalid_argument("linear: bias must have shape [" + std::to_string(m) + "], got " +
                                    shape_str(bias->shape()));
    }
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;
    std::vector<T> out(n * m);
    MMap(out.data(), n, m).noalias() = CMap(input.values().data(), n, d) * CMap(weight.values().data(), d, m);
    if (bias) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bias->values()[c];
    }
    auto fn = [n, d, m](detail::Node<T>& node) {
        CMap gout(node.grad.data(), n, m);
        if (auto* gi = grad_of(node.parents[0])) {
            MMap(gi->data(), n, d).noalias() += gout * CMap(node.parents[1]->data.data(), d, m).transpose();
        }
        if (auto* gw = grad_of(node.parents[1])) {
            MMap(gw->data(), d, m).noalias() += CMap(node.parents[0]->data.data(), n, d).transpose() * gout;
        }
        if (node.parents.size() > 2) {
            if (auto* gb = grad_of(node.parents[2])) {
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) (*gb)[c] += node.grad[r * m + c];
            }
        }
    };
    if (bias) return Tensor<T>::make_result(Shape{n, m}, std::move(out), {input, weight, *bias}, "linear", fn);
    return Tensor<T>::make_result(Shape{n, m}, std::move(out), {input, weight}, "linear", fn);
}

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be N×K");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                                    std::to_string(n));
    }
    std::vector<T> probs(n * k);
    T loss = 0;
    const auto& v = logits.values();
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) + " at row " +
                                    std::to_string(r) + " outside [0," + std::to_string(k) + ")");
        }
        const T* row = v.data() + r * k;
        const T m = *std::max_element(row, row + k);
        T s = 0;
        for (std::size_t c = 0; c < k; ++c) s += std::exp(row[c] - m);
        const T lse = m + std::log(s);
        loss += lse - row[labels[r]];
        for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(row[c] - lse);
    }
    const T inv = T(1) / static_cast<T>(n);
    return Tensor<T>::make_result(Shape{1}, {loss * inv}, {logits}, "cross_entropy",
                                  [probs = std::move(probs), labels, k, inv](detail::Node<T>& node) {
                                      auto& g = *grad_of(node.parents[0]);
                                      const T go = node.grad[0] * inv;
                                      for (std::size_t r = 0; r < labels.size(); ++r) {
                                          for (std::size_t c = 0; c < k; ++c) {
                                              const T target = static_cast<int>(c) == labels[r] ? T(1) : T(0);
                                              g[r * k + c] += go * (probs[r * k + c] - target);
                                          }
                                      }
                                  });
}

/// Row-wise argmax of an N×K tensor.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), k = x.dim(1);
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = x.values().data() + r * k;
        out[r] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

}  // namespace wnsf
