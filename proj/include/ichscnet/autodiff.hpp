#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ichscnet/tensor.hpp"

namespace ichscnet {

enum class Trainability { frozen, fine_tune, train };

inline const char* to_string(Trainability t) {
    switch (t) {
        case Trainability::frozen: return "frozen";
        case Trainability::fine_tune: return "fine_tune";
        case Trainability::train: return "train";
    }
    return "?";
}

// A named model parameter. Gradients accumulate across backward passes until
// the optimizer clears them; frozen parameters never receive gradient.
template <typename T>
struct Param {
    std::string name;
    std::string group;
    Trainability trainability = Trainability::train;
    Tensor<T> value;
    Tensor<T> grad;

    bool trainable() const { return trainability != Trainability::frozen; }
    void zero_grad() { grad.fill(T(0)); }
};

// One vertex of the dynamic computation graph.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_allocated = false;
    bool requires_grad = false;
    Param<T>* param = nullptr;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (!grad_allocated) {
            grad = Tensor<T>(value.shape());
            grad_allocated = true;
        }
    }

    void accumulate(const Tensor<T>& g) {
        ensure_grad();
        grad.add_(g);
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Value handle used by all ops. Copy is cheap (shared graph node).
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

    static Var constant(Tensor<T> t) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(t);
        n->requires_grad = false;
        return Var(n);
    }

    static Var scalar(T v) { return constant(Tensor<T>::scalar(v)); }

    static Var leaf(Param<T>& p) {
        auto n = std::make_shared<Node<T>>();
        n->value = p.value;
        n->requires_grad = p.trainable();
        n->param = &p;
        return Var(n);
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    const std::vector<int64_t>& shape() const { return node_->value.shape(); }
    T item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }
    NodePtr<T> node() const { return node_; }

    // Gradient of the last backward() that reached this node.
    const Tensor<T>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad_allocated; }

private:
    NodePtr<T> node_;
};

// Reverse-mode sweep from a scalar root. Parameter gradients accumulate into
// Param::grad; call sites own zeroing between optimizer steps.
template <typename T>
inline void backward(const Var<T>& root) {
    if (root.value().numel() != 1) throw ShapeError("backward: root must be scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad.fill(T(1));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->grad_allocated) continue;  // no gradient reached this node
        if (n->backward_fn) n->backward_fn(*n);
        if (n->param && n->param->trainable()) {
            if (!n->param->grad.same_shape(n->grad))
                n->param->grad = Tensor<T>(n->value.shape());
            n->param->grad.add_(n->grad);
        }
    }
}

namespace detail {

template <typename T>
inline NodePtr<T> make_node(Tensor<T> value, std::vector<NodePtr<T>> parents,
                            std::function<void(Node<T>&)> bwd) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool req = false;
    for (const auto& p : parents)
        if (p->requires_grad) req = true;
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return n;
}

}  // namespace detail

}  // namespace ichscnet
