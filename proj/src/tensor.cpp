// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "neuroalign/error.hpp"

namespace neuroalign {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    for (const T& v : values) {
        if (!std::isfinite(v)) {
            throw NumericalError("non-finite value in tensor of shape " + shape_string(shape));
        }
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(NodePtr node) {
    return BasicTensor(std::move(node));
}

template <typename T>
const detail::Node<T>& BasicTensor<T>::node() const {
    if (!node_) {
        throw ContractError("use of an undefined tensor");
    }
    return *node_;
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
    return node().shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
    return node().value.size();
}

template <typename T>
std::span<const T> BasicTensor<T>::values() const {
    return node().value;
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    }
    return node().value[0];
}

template <typename T>
T BasicTensor<T>::operator()(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("index rank does not match " + shape_string(s));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) {
            throw ShapeError("index out of range for " + shape_string(s));
        }
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node().value[flat];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
    return node().requires_grad;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
    return !node().grad.empty();
}

template <typename T>
std::vector<T> BasicTensor<T>::grad() const {
    const auto& n = node();
    if (n.grad.empty()) {
        return std::vector<T>(n.value.size(), T(0));
    }
    return n.grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_values() {
    if (!node().is_leaf()) {
        throw AutogradError("only leaf tensors may be modified in place");
    }
    return node_->value;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
    if (!node().is_leaf()) {
        throw AutogradError("only leaf gradients may be modified in place");
    }
    return {node_->grad_buffer(), node_->value.size()};
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach(bool requires_grad) const {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = shape();
    n->value = node().value;
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
}

template <typename T>
GradTape<T>::GradTape(const BasicTensor<T>& root) : root_(root.node_ptr()) {
    if (!root_) {
        throw ContractError("GradTape: undefined root");
    }
    if (root_->value.size() != 1) {
        throw ContractError("GradTape: root must be a scalar, got " + shape_string(root_->shape));
    }
    // Iterative post-order DFS: every node is emitted after all its inputs.
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

template <typename T>
void GradTape<T>::backward() {
    if (ran_) {
        throw AutogradError("backward already ran on this tape; call reset() first");
    }
    if (!root_->requires_grad) {
        throw AutogradError("backward on a tensor that does not require gradients");
    }
    for (auto* node : order_) {
        if (node->consumed) {
            throw AutogradError("graph node '" + std::string(node->op) +
                                "' was already back-propagated; call reset() first");
        }
    }
    root_->grad_buffer()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        auto* node = *it;
        if (node->is_leaf()) {
            continue;
        }
        if (!node->grad.empty()) {
            node->backward(*node);
        }
        node->consumed = true;
        // Interior gradients are not observable; release them eagerly.
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
    ran_ = true;
}

template <typename T>
void GradTape<T>::reset() {
    for (auto* node : order_) {
        node->consumed = false;
        if (!node->is_leaf()) {
            node->grad.clear();
        }
    }
    ran_ = false;
}

namespace {
thread_local bool t_grad_enabled = true;
} // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template class BasicTensor<float>;
template class BasicTensor<double>;
template class GradTape<float>;
template class GradTape<double>;

} // namespace neuroalign
