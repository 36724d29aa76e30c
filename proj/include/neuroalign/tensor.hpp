// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode differentiation.
//
// A tensor is a cheap handle onto a shared node. Nodes produced by ops on
// inputs that require gradients remember their inputs and a backward
// closure; GradTape orders those nodes and runs the closures once.
// Everything is templated on the scalar so that the same model code runs in
// float32 for training and float64 for finite-difference checks.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace neuroalign {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until something accumulates into it
    bool requires_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    /// Zero-initialised gradient storage, allocated on first use.
    T* grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), T(0));
        }
        return grad.data();
    }
};

} // namespace detail

template <typename T>
class BasicTensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    BasicTensor() = default;
    /// Throws ShapeError when the shape does not match the data length and
    /// NumericalError on non-finite values.
    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const T> values() const;
    T item() const;
    T operator()(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Accumulated gradient; zeros when nothing has been propagated yet.
    std::vector<T> grad() const;

    // Leaf-only mutation, used by optimizers and initialisers.
    std::span<T> mutable_values();
    std::span<T> mutable_grad();
    void zero_grad();

    /// Copy of the values with no graph attached.
    BasicTensor detach(bool requires_grad = false) const;

    template <typename U>
    BasicTensor<U> cast(bool requires_grad) const {
        std::vector<U> out(numel());
        auto src = values();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<U>(src[i]);
        }
        return BasicTensor<U>(shape(), std::move(out), requires_grad);
    }
    template <typename U>
    BasicTensor<U> cast() const {
        return cast<U>(requires_grad());
    }

    const NodePtr& node_ptr() const { return node_; }
    static BasicTensor from_node(NodePtr node);

private:
    explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
    const detail::Node<T>& node() const;

    NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Topologically ordered record of the nodes reachable from a scalar root.
///
/// backward() may run once. Running it again, or back-propagating another
/// tape that shares interior nodes with an already consumed one, throws
/// AutogradError instead of silently accumulating twice; reset() re-arms.
template <typename T>
class GradTape {
public:
    explicit GradTape(const BasicTensor<T>& root);

    void backward();
    void reset();

    std::size_t size() const { return order_.size(); }
    bool ran() const { return ran_; }

private:
    std::shared_ptr<detail::Node<T>> root_;
    std::vector<detail::Node<T>*> order_;
    bool ran_ = false;
};

template <typename T>
void backward(const BasicTensor<T>& root) {
    GradTape<T> tape(root);
    tape.backward();
}

/// True unless a NoGradGuard is active on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime; results
/// of ops computed meanwhile are plain values.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

} // namespace neuroalign
