#pragma once

// Dense tensor with a reverse-mode differentiation record.
//
// A Tensor is a cheap handle onto a shared node. Operations that see at least
// one input with requires_grad() build a new node that remembers its parents
// and a closure that pushes the output gradient back into them. Calling
// backward() on a scalar walks that record once, in reverse topological order,
// then releases it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wnsf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool& finite_check_mode() {
    thread_local bool enabled = false;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

/// Disables graph recording for the lifetime of the guard (evaluation, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// When enabled, every op result is scanned and a NaN/Inf raises std::domain_error.
inline void set_finite_check(bool on) { detail::finite_check_mode() = on; }

template <class T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        check_shape(shape);
        node_->data.assign(shape_numel(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        check_shape(shape);
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " needs " +
                                        std::to_string(shape_numel(shape)) + " values, got " +
                                        std::to_string(values.size()));
        }
        node_->data = std::move(values);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{1}, std::vector<T>{v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    std::vector<T>& values() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<T> grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    const char* op_name() const { return node_->op; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    T& operator[](std::size_t i) { return node_->data[i]; }
    T operator[](std::size_t i) const { return node_->data[i]; }

    /// NCHW element access.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        const auto& s = node_->shape;
        return node_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }
    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const auto& s = node_->shape;
        return node_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }

    /// Copy of the values with no history and no gradient requirement.
    Tensor detach() const { return Tensor(node_->shape, node_->data); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(node_->shape, std::move(out));
    }

    /// Reverse pass from a scalar. Gradients are summed into every reachable
    /// node that requires them; the record is released afterwards.
    void backward() {
        if (numel() != 1) {
            throw std::invalid_argument("backward: expected a scalar loss, got shape " + shape_str(shape()));
        }
        if (!node_->requires_grad) return;

        // Owning pointers: releasing a node's parents below must not free
        // nodes that are still waiting in `order`.
        std::vector<NodePtr> order;
        std::unordered_set<detail::Node<T>*> seen;
        std::vector<std::pair<NodePtr, std::size_t>> stack{{node_, 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& top = stack.back();
            if (top.second < top.first->parents.size()) {
                NodePtr p = top.first->parents[top.second++];
                if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
            } else {
                order.push_back(std::move(top.first));
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>& n = **it;
            if (n.backward_fn) {
                n.ensure_grad();
                n.backward_fn(n);
                n.backward_fn = nullptr;
                n.parents.clear();
            }
        }
    }

    const NodePtr& node() const { return node_; }

    /// Builds an op result. Records the backward closure only when grad mode is
    /// on and some input requires a gradient.
    static Tensor make_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor> inputs,
                              const char* op, std::function<void(detail::Node<T>&)> backward_fn) {
        Tensor out(std::move(shape), std::move(values));
        out.node_->op = op;
        if (detail::finite_check_mode()) {
            for (T v : out.node_->data) {
                if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite value produced by ") + op);
            }
        }
        if (!detail::grad_mode()) return out;
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
        for (std::size_t d : shape) {
            if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in " + shape_str(shape));
        }
    }

    NodePtr node_;
};

/// Gradient slot of a parent node, allocated on first use. Only valid for
/// parents that require a gradient.
template <class T>
inline std::vector<T>* grad_of(const std::shared_ptr<detail::Node<T>>& n) {
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return &n->grad;
}

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

}  // namespace wnsf
