#pragma once

#include "visa/core/matrix.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace visa {

/// Reverse-mode autodiff over dense Eigen matrices.
///
/// A Tape is an arena of nodes in creation order; creation order is a valid
/// topological order, so backward() is a single reverse sweep. Graphs are
/// built per forward pass and discarded. Nodes that cannot influence any
/// differentiable leaf carry requires_grad=false and skip both the backward
/// closure and gradient storage.
template <typename S>
class Tape {
public:
    using BackFn = std::function<void(Tape&, int)>;

    struct Node {
        MatX<S> val;
        MatX<S> grad;  // empty until first accumulation
        BackFn back;
        bool requires_grad = false;
    };

    int emplace(MatX<S> val, bool requires_grad, BackFn back = nullptr) {
        Node n;
        n.val = std::move(val);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const MatX<S>& val(int id) const { return nodes_[id].val; }
    MatX<S>& val(int id) { return nodes_[id].val; }
    bool requiresGrad(int id) const { return nodes_[id].requires_grad; }

    const MatX<S>& grad(int id) const { return nodes_[id].grad; }
    bool hasGrad(int id) const { return nodes_[id].grad.size() > 0; }

    /// Adds `g` into the gradient of `id`; no-op for non-differentiable nodes.
    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Runs the reverse sweep from a scalar (1x1) root. Node gradients from
    /// any earlier sweep are discarded first, so repeated calls on one tape
    /// each differentiate exactly one root (leaf parameters still accumulate
    /// across calls through their closures).
    void backward(int root) {
        Node& r = nodes_[root];
        check(r.val.rows() == 1 && r.val.cols() == 1, "backward root must be scalar");
        for (Node& n : nodes_) n.grad.resize(0, 0);
        accumulate(root, MatX<S>::Ones(1, 1));
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.grad.size() > 0 && n.back) n.back(*this, i);
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

/// Lightweight handle to a tape node. Copyable, value-semantic.
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    Var() = default;
    Var(Tape<S>* t, int i) : tape(t), id(i) {}

    const MatX<S>& v() const { return tape->val(id); }
    Index rows() const { return v().rows(); }
    Index cols() const { return v().cols(); }
    bool rg() const { return tape->requiresGrad(id); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename S>
Var<S> constant(Tape<S>& t, MatX<S> v) {
    return Var<S>(&t, t.emplace(std::move(v), false));
}

template <typename S, typename Derived>
Var<S> constant(Tape<S>& t, const Eigen::MatrixBase<Derived>& v) {
    return Var<S>(&t, t.emplace(MatX<S>(v), false));
}

/// Re-enters a value as a constant (stops gradient flow).
template <typename S>
Var<S> detach(const Var<S>& x) {
    return constant(*x.tape, x.v());
}

}  // namespace visa
