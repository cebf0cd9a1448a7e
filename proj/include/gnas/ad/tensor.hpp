#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gnas/error.hpp"

namespace gnas::ad {

/// Tensors are matrices; a scalar is 1x1 and a per-edge score column is Ex1.
struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return rows * cols; }
    std::string str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Grad buffer, zero-filled on first access.
    double* grad_data() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
};

inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; ops always produce new nodes.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (values.size() != shape.size())
            throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.size()) + " values, got " +
                             std::to_string(values.size()));
        auto node = std::make_shared<detail::Node>();
        node->shape = shape;
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
    }
    static Tensor filled(Shape shape, double v) { return from(shape, std::vector<double>(shape.size(), v)); }
    static Tensor scalar(double v, bool requires_grad = false) { return from({1, 1}, {v}, requires_grad); }
    static Tensor parameter(Shape shape, std::vector<double> values) { return from(shape, std::move(values), true); }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rows() const { return node_->shape.rows; }
    std::size_t cols() const { return node_->shape.cols; }
    std::size_t size() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    /// Writable storage; only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_values() { return node_->value; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
    void zero_grad() { node_->grad.clear(); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, std::function<void(detail::Node&)>);

    std::shared_ptr<detail::Node> node_;
};

/// Wraps a freshly computed value as an op output. The backward rule and the
/// parent links are kept only when recording is on and a parent needs grads.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(value);
    if (detail::grad_enabled()) {
        for (const auto& p : parents)
            if (p.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

/// Reverse-mode sweep from a scalar. Gradients accumulate into every
/// reachable tensor that requires them, including parameters used twice.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward() needs a scalar loss, got " + (loss.defined() ? loss.shape().str() : "undefined"));
    if (!loss.requires_grad()) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

}  // namespace gnas::ad
