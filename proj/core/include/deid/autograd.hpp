#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "deid/tensor.hpp"

namespace deid {
namespace autograd {

struct Node;

/// Handle to a node in the dynamically built computation graph.
class Variable {
public:
    Variable() = default;
    explicit Variable(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    /// Leaf constructors.
    static Variable leaf(Tensor value, bool requires_grad = false);
    static Variable constant(Tensor value) { return leaf(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const;
    Tensor& mutable_value();
    bool requires_grad() const;

    /// Accumulated parameter gradient (valid on leaves after backward()).
    const Tensor& grad() const;
    bool has_grad() const;
    void zero_grad();

    /// Same value, detached from the graph.
    Variable detach() const;

    /// Backpropagate from this scalar; accumulates into leaf .grad tensors.
    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }
    Node* raw() const { return node_.get(); }

private:
    std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<std::vector<Variable>(const Variable& grad_out)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Variable> inputs;   // only retained when grad mode is on
    BackwardFn backward_fn;         // returns grads aligned with inputs
    Tensor grad;                    // leaf accumulation
    bool has_grad = false;
};

/// Thread-local switch; ops built while disabled are constants.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
private:
    bool prev_;
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
private:
    bool prev_;
};

/// Build a node from inputs; drops edges when grad mode is off or no input
/// requires grad.
Variable make_op(Tensor value, std::vector<Variable> inputs, BackwardFn backward_fn);

/// Gradients of a scalar `output` w.r.t. `targets`. With create_graph the
/// returned variables are themselves differentiable.
std::vector<Variable> grad(const Variable& output, const std::vector<Variable>& targets,
                           bool create_graph);

} // namespace autograd

using autograd::Variable;

} // namespace deid
