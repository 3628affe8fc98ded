#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mstim/error.hpp"

namespace mstim {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Receives the gradient of the node's output and accumulates into parents.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    BackwardFn backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

inline bool& grad_mode_disabled() {
    thread_local bool disabled = false;
    return disabled;
}

} // namespace detail

/// While alive, operations on the current thread do not record a backward graph.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
    ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array of doubles with an optional node in a reverse-mode graph.
///
/// Copies are shallow: two Tensor handles may refer to the same storage. Values of
/// operation results are never modified after creation; only leaves expose
/// mutable data (for parameter updates and finite-difference probes).
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                                 " values, got " + std::to_string(values.size()));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) { return from({}, {value}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
        return node().shape[axis];
    }
    std::size_t numel() const { return node().data.size(); }
    bool is_scalar() const { return rank() == 0; }

    std::span<const double> data() const { return node().data; }
    std::vector<double> to_vector() const { return node().data; }

    /// Writable view of a leaf's values.
    std::span<double> mutable_data() {
        if (!node().is_leaf) throw UsageError("only leaf tensors may be modified in place");
        return node().data;
    }

    double item() const {
        if (numel() != 1) throw UsageError("item() requires a single-element tensor, got " + shape_str(shape()));
        return node().data[0];
    }

    double operator[](std::size_t flat_index) const { return node().data.at(flat_index); }

    bool requires_grad() const { return node().requires_grad; }
    bool is_leaf() const { return node().is_leaf; }
    const char* op_name() const { return node().op; }

    bool has_grad() const { return !node().grad.empty(); }
    /// Gradient buffer; all zeros when nothing has been accumulated yet.
    std::vector<double> grad() const {
        if (node().grad.empty()) return std::vector<double>(numel(), 0.0);
        return node().grad;
    }
    std::span<double> mutable_grad() { return node().ensure_grad(); }
    void zero_grad() { node().grad.clear(); }

    /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
    /// The recorded graph is released afterwards, so a second call is rejected.
    void backward() const;

    /// Enables gradient tracking on a leaf.
    Tensor& set_requires_grad(bool value = true) {
        if (!node().is_leaf) throw UsageError("requires_grad can only be set on leaf tensors");
        node().requires_grad = value;
        return *this;
    }

    /// Independent leaf copy of the values (no graph, no gradient).
    Tensor detach() const { return from(shape(), node().data, false); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    // Graph construction hook for operations.
    static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                              std::initializer_list<Tensor> inputs, detail::BackwardFn backward);
    static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                              const std::vector<Tensor>& inputs, detail::BackwardFn backward);

    detail::Node& node() const {
        if (!node_) throw UsageError("use of an undefined tensor");
        return *node_;
    }

private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

    detail::NodePtr node_;
};

inline Tensor Tensor::make_result(Shape shape, std::vector<double> values, const char* op,
                                  std::initializer_list<Tensor> inputs, detail::BackwardFn backward) {
    return make_result(std::move(shape), std::move(values), op, std::vector<Tensor>(inputs), std::move(backward));
}

inline Tensor Tensor::make_result(Shape shape, std::vector<double> values, const char* op,
                                  const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    node->is_leaf = false;
    const bool track = !detail::grad_mode_disabled() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node_);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

inline void Tensor::backward() const {
    auto& root = node();
    if (root.consumed) throw UsageError("backward() called twice on the same graph");
    if (root.data.size() != 1 || !root.shape.empty()) {
        throw UsageError("backward() requires a scalar loss, got " + shape_str(root.shape));
    }
    if (!root.requires_grad) throw UsageError("backward() on a tensor that is not attached to a graph");

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [current, next_parent] = stack.back();
        if (next_parent < current->parents.size()) {
            detail::Node* parent = current->parents[next_parent++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(current);
            stack.pop_back();
        }
    }

    root.ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->is_leaf || !n->backward) continue;
        n->backward(n->ensure_grad());
    }

    // Release the graph; intermediate gradients are no longer meaningful.
    for (detail::Node* n : order) {
        if (n->is_leaf) continue;
        n->backward = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
}

} // namespace mstim
