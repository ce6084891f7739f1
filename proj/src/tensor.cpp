#include "attnd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "attnd/errors.hpp"

namespace attnd {

namespace {

size_t checked_numel(const std::vector<size_t>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + Tensor::shape_str(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<size_t> shape, double fill, bool requires_grad) {
    const size_t n = checked_numel(shape);
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data.assign(n, fill);
    node_->requires_grad = requires_grad;
    node_->needs_grad = requires_grad;
    if (requires_grad) node_->grad.assign(n, 0.0);
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data, bool requires_grad) {
    const size_t n = checked_numel(shape);
    if (n != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->needs_grad = requires_grad;
    if (requires_grad) node_->grad.assign(n, 0.0);
}

Tensor Tensor::from_op(std::vector<size_t> shape, std::vector<double> data,
                       const std::vector<Tensor>& parents,
                       std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    bool any = false;
    for (const Tensor& p : parents) {
        if (p.defined() && p.node()->needs_grad) {
            any = true;
            break;
        }
    }
    if (any) {
        out.node_->needs_grad = true;
        out.node_->grad.assign(out.size(), 0.0);
        out.node_->parents.reserve(parents.size());
        for (const Tensor& p : parents) out.node_->parents.push_back(p.node());
        out.node_->backward_rule = std::move(backward);
    }
    return out;
}

double Tensor::value() const {
    if (size() != 1) throw StateError("value() requires a single-element tensor, shape is " + shape_str());
    return node_->data[0];
}

void Tensor::set_requires_grad(bool v) {
    if (!node_->parents.empty()) throw StateError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
    node_->needs_grad = v;
    if (v) {
        if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    } else {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }
}

const std::vector<double>& Tensor::grad() const {
    if (!node_->needs_grad) throw StateError("tensor does not carry a gradient");
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    node_->backward_done = false;
}

void Tensor::backward() const {
    if (!defined()) throw StateError("backward on an undefined tensor");
    if (size() != 1) throw StateError("backward requires a scalar loss, shape is " + shape_str());
    if (node_->backward_done) {
        throw StateError("backward already ran on this graph; zero_grad the root before running again");
    }
    if (!node_->needs_grad) {
        node_->backward_done = true;
        return;  // no requires_grad leaf is reachable
    }

    // Iterative DFS post-order gives the topological order; children are
    // visited in recorded parent order, so the pass is deterministic.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_rule) n->backward_rule(*n);
    }
    node_->backward_done = true;
}

Tensor Tensor::clone_detached() const {
    return Tensor(node_->shape, node_->data, false);
}

std::string Tensor::shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string Tensor::shape_str() const { return shape_str(node_->shape); }

}  // namespace attnd
