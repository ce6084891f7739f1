#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace attnd {

/// Dense float64 tensor with reverse-mode automatic differentiation.
///
/// A Tensor is a cheap value handle onto a shared node. Every differentiable
/// operation records its inputs and a backward rule on the node it produces;
/// the recorded graph is the computation record that backward() replays in
/// reverse topological order. Data is row-major and owned; ops copy rather
/// than alias. Treat a tensor as immutable once it has been fed to an op —
/// the recorded backward rules assume the forward values they captured.
class Tensor {
public:
    struct Node {
        std::vector<size_t> shape;
        std::vector<double> data;
        std::vector<double> grad;        // allocated iff needs_grad
        bool requires_grad = false;      // leaf flag set by the user
        bool needs_grad = false;         // true if any reachable leaf requires grad
        bool backward_done = false;      // set on the root after backward()
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_rule;  // accumulates into parents' grad
    };

    Tensor() = default;

    Tensor(std::vector<size_t> shape, double fill = 0.0, bool requires_grad = false);
    Tensor(std::vector<size_t> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }
    static Tensor full(std::vector<size_t> shape, double v, bool requires_grad = false) {
        return Tensor(std::move(shape), v, requires_grad);
    }
    static Tensor scalar(double v) { return Tensor({1}, v); }

    /// Node produced by an op. `backward` accumulates output grad into the
    /// parents; it is dropped entirely when no parent carries gradient, which
    /// prunes frozen subgraphs at record time.
    static Tensor from_op(std::vector<size_t> shape, std::vector<double> data,
                          const std::vector<Tensor>& parents,
                          std::function<void(Node&)> backward);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t dim(size_t i) const { return node_->shape[i]; }
    size_t size() const { return node_->data.size(); }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& data() { return node_->data; }

    double at(size_t i) const { return node_->data[i]; }
    double at(size_t i, size_t j) const { return node_->data[i * node_->shape[1] + j]; }
    double at(size_t i, size_t j, size_t k) const {
        return node_->data[(i * node_->shape[1] + j) * node_->shape[2] + k];
    }
    double& mut(size_t i) { return node_->data[i]; }
    double& mut(size_t i, size_t j) { return node_->data[i * node_->shape[1] + j]; }

    /// Value of a single-element tensor.
    double value() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v);
    bool needs_grad() const { return node_->needs_grad; }

    const std::vector<double>& grad() const;
    void zero_grad();

    /// Reverse pass from a scalar. Populates grad on every reachable
    /// requires_grad leaf; repeated calls on the same root without a reset
    /// throw StateError.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

    /// Deep copy of values (no graph, no grad).
    Tensor clone_detached() const;

    std::string shape_str() const;
    static std::string shape_str(const std::vector<size_t>& shape);

private:
    std::shared_ptr<Node> node_;
};

}  // namespace attnd
