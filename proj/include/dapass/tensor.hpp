#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dapass/common.hpp"
#include "dapass/rng.hpp"

namespace dapass {

template <typename T>
class Tensor;

namespace detail {

// One node of the compute graph. Leaves are parameters/inputs; interior nodes
// cache their forward value and know how to push gradients to their parents.
// The graph is acyclic by construction and each backward pass visits every
// reachable node exactly once, in reverse topological order.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // lazily allocated
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;  // reads this->grad, accumulates into parents

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void accumulate(const std::vector<T>& g) {
        ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

}  // namespace detail

// Dense row-major tensor with reverse-mode autodiff. Copying a Tensor copies
// the handle (both refer to the same storage); use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_data(shape, std::vector<T>(static_cast<size_t>(dapass::numel(shape)), T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        return from_data(shape, std::vector<T>(static_cast<size_t>(dapass::numel(shape)), v), requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != dapass::numel(shape))
            throw InvalidArgument("tensor data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->leaf = true;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::vector<T> d(static_cast<size_t>(dapass::numel(shape)));
        for (auto& v : d) v = static_cast<T>(rng.uniform_range(lo, hi));
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor rand_normal(Shape shape, Rng& rng, T sigma = T(1), bool requires_grad = false) {
        std::vector<T> d(static_cast<size_t>(dapass::numel(shape)));
        for (auto& v : d) v = static_cast<T>(rng.normal() * sigma);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_ ? node_->numel() : 0; }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    size_t rank() const { return node_->shape.size(); }

    const std::vector<T>& data() const { return node_->value; }
    std::vector<T>& mutable_data() { return node_->value; }
    T item() const {
        if (numel() != 1) throw InvalidArgument("item() on non-scalar tensor");
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) {
        node_->requires_grad = v;
        if (!v) node_->grad.clear();
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw InvalidArgument("tensor has no populated grad");
        return node_->grad;
    }
    std::vector<T>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (node_->requires_grad) node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Deep copy, detached from any graph.
    Tensor clone() const {
        auto t = from_data(node_->shape, node_->value, false);
        return t;
    }

    // Same storage exposed as a fresh leaf (no graph history).
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->requires_grad = false;
        return Tensor(std::move(n));
    }

    std::shared_ptr<Node> node() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <typename T>
void topo_collect(const std::shared_ptr<Node<T>>& root,
                  std::vector<std::shared_ptr<Node<T>>>& order) {
    // Iterative post-order DFS; graphs can be a few thousand nodes deep in
    // long loss chains, so no recursion.
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<std::shared_ptr<Node<T>>, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            auto child = node->parents[next_child++];
            if (child && seen.insert(child.get()).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode pass from a scalar loss. Populates grad on every reachable
// requires_grad leaf (accumulating over repeated calls), then frees the graph
// edges so intermediate buffers are reclaimed immediately.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw InvalidArgument("backward() requires a scalar loss");
    auto root = loss.node();
    std::vector<std::shared_ptr<detail::Node<T>>> order;
    detail::topo_collect(root, order);

    root->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& n = **it;
        if (n.backprop && !n.grad.empty()) n.backprop(n);
    }
    // Graphs are built per forward pass; detach everything now so a second
    // backward over the same graph is impossible and memory stays bounded.
    for (auto& n : order) {
        if (!n->leaf) {
            n->parents.clear();
            n->backprop = nullptr;
            n->grad.clear();
        }
    }
}

}  // namespace dapass
