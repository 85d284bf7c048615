#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drop/tensor.hpp"

namespace drop {

// Reverse-mode autodiff over Tensor values. The graph is rebuilt for every
// forward pass; parameters are leaf nodes that outlive the graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (!grad.defined()) grad = Tensor(value.shape());
    }
    void accumulate(const Tensor& g) {
        ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) {
        n_ = std::make_shared<Node>();
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
    }

    static Var leaf(Tensor value, bool requires_grad = true) {
        return Var(std::move(value), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    Tensor& value() { return n_->value; }
    const Tensor& value() const { return n_->value; }
    Tensor& grad() { return n_->grad; }
    const Tensor& grad() const { return n_->grad; }
    bool has_grad() const { return n_->grad.defined(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    std::shared_ptr<Node> node() const { return n_; }

    void zero_grad() {
        if (n_->grad.defined())
            n_->grad.fill(0.0);
    }

    // Grad as a tensor of the value's shape even if never touched by backward.
    Tensor grad_or_zero() const {
        if (n_->grad.defined()) return n_->grad;
        return Tensor(n_->value.shape());
    }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

inline void topo_visit(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    // Iterative DFS; graphs can be a few thousand nodes deep in long chains.
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(n, 0);
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (idx == 0 && seen.count(cur)) {
            stack.pop_back();
            continue;
        }
        if (idx < cur->parents.size()) {
            Node* p = cur->parents[idx].get();
            ++idx;
            if (!seen.count(p)) stack.emplace_back(p, 0);
        } else {
            seen.insert(cur);
            order.push_back(cur);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Backward from a scalar root. Seeds d(root)/d(root) = 1.
inline void backward(const Var& root) {
    check_numeric(root.value().numel() == 1, "backward() requires a scalar root");
    std::unordered_set<Node*> seen;
    std::vector<Node*> order;
    detail::topo_visit(root.node().get(), seen, order);
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop && n->grad.defined()) n->backprop();
    }
}

// Helper for op implementations: wire a result node.
inline Var make_op(Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop_fn) {
    bool req = false;
    for (const auto& v : inputs) req = req || v.requires_grad();
    Var out(std::move(value), req);
    if (req) {
        auto node = out.node();
        for (const auto& v : inputs) node->parents.push_back(v.node());
        Node* raw = node.get();
        node->backprop = [raw, fn = std::move(backprop_fn)]() { fn(*raw); };
    }
    return out;
}

// ---- basic elementwise / reduction ops -------------------------------------

inline Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    // Either equal shapes, or b broadcast across the leading (batch) dim of a:
    // b may drop the batch dim entirely or carry a batch dim of 1.
    bool bcast = !av.same_shape(bv);
    if (bcast) {
        if (av.ndim() == bv.ndim()) {
            check_numeric(bv.dim(0) == 1, "add: incompatible shapes");
            for (int i = 1; i < bv.ndim(); ++i)
                check_numeric(av.dim(i) == bv.dim(i), "add: incompatible shapes");
        } else {
            check_numeric(av.ndim() == bv.ndim() + 1, "add: incompatible shapes");
            for (int i = 0; i < bv.ndim(); ++i)
                check_numeric(av.dim(i + 1) == bv.dim(i), "add: incompatible shapes");
        }
    }
    Tensor out(av.shape());
    if (!bcast) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    } else {
        int64_t inner = bv.numel();
        int batch = av.dim(0);
        for (int nb = 0; nb < batch; ++nb)
            for (int64_t i = 0; i < inner; ++i) out[nb * inner + i] = av[nb * inner + i] + bv[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn, bcast](Node& n) {
        if (an->requires_grad) an->accumulate(n.grad);
        if (bn->requires_grad) {
            if (!bcast) {
                bn->accumulate(n.grad);
            } else {
                bn->ensure_grad();
                int64_t inner = bn->value.numel();
                int batch = an->value.dim(0);
                for (int nb = 0; nb < batch; ++nb)
                    for (int64_t i = 0; i < inner; ++i) bn->grad[i] += n.grad[nb * inner + i];
            }
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c;
    auto an = a.node();
    return make_op(std::move(out), {a}, [an, c](Node& n) {
        an->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) an->grad[i] += c * n.grad[i];
    });
}

inline Var relu(const Var& a) {
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](Node& n) {
        an->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += n.grad[i];
    });
}

inline Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](Node& n) {
        an->ensure_grad();
        double g = n.grad[0];
        for (int64_t i = 0; i < an->grad.numel(); ++i) an->grad[i] += g;
    });
}

// Weighted sum with fixed weights; handy scalar head for gradient checks.
inline Var dot_const(const Var& a, const Tensor& w) {
    check_numeric(a.value().numel() == w.numel(), "dot_const: size mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) s += a.value()[i] * w[i];
    auto an = a.node();
    return make_op(Tensor::scalar(s), {a}, [an, w](Node& n) {
        an->ensure_grad();
        double g = n.grad[0];
        for (int64_t i = 0; i < w.numel(); ++i) an->grad[i] += g * w[i];
    });
}

inline Var add_scalars(const std::vector<Var>& terms, const std::vector<double>& coeffs) {
    check_numeric(terms.size() == coeffs.size(), "add_scalars: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < terms.size(); ++i) s += coeffs[i] * terms[i].value()[0];
    std::vector<Var> inputs(terms);
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& t : terms) nodes.push_back(t.node());
    return make_op(Tensor::scalar(s), inputs, [nodes, coeffs](Node& n) {
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i]->requires_grad) continue;
            nodes[i]->ensure_grad();
            nodes[i]->grad[0] += coeffs[i] * n.grad[0];
        }
    });
}

}  // namespace drop
