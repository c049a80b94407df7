#include "deid/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "deid/ops.hpp"

namespace deid {
namespace autograd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = prev_; }

Variable Variable::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Variable(std::move(n));
}

const Tensor& Variable::value() const {
    if (!node_) throw std::logic_error("Variable: undefined");
    return node_->value;
}

Tensor& Variable::mutable_value() {
    if (!node_) throw std::logic_error("Variable: undefined");
    return node_->value;
}

bool Variable::requires_grad() const { return node_ && node_->requires_grad; }

const Tensor& Variable::grad() const {
    if (!node_ || !node_->has_grad) throw std::logic_error("Variable: no grad accumulated");
    return node_->grad;
}

bool Variable::has_grad() const { return node_ && node_->has_grad; }

void Variable::zero_grad() {
    if (node_) {
        node_->has_grad = false;
        node_->grad = Tensor();
    }
}

Variable Variable::detach() const { return leaf(value(), false); }

Variable make_op(Tensor value, std::vector<Variable> inputs, BackwardFn backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs)
            if (in.requires_grad()) { any = true; break; }
        if (any) {
            n->requires_grad = true;
            n->inputs = std::move(inputs);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Variable(std::move(n));
}

namespace {

void topo_visit(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    if (seen.count(n)) return;
    seen.insert(n);
    for (const auto& in : n->inputs)
        if (in.raw() && in.requires_grad()) topo_visit(in.raw(), seen, order);
    order.push_back(n);
}

// Reverse-mode sweep; grads held in a side map so repeated backward passes
// over shared subgraphs do not interfere.
std::unordered_map<Node*, Variable> run_backward(const Variable& output, bool create_graph) {
    if (output.value().size() != 1)
        throw std::invalid_argument("backward: output must be scalar");
    std::unordered_set<Node*> seen;
    std::vector<Node*> order;
    if (!output.requires_grad()) return {};
    topo_visit(output.raw(), seen, order);

    std::unordered_map<Node*, Variable> grads;
    grads[output.raw()] = Variable::constant(Tensor::scalar(1.0));

    GradModeGuard gm(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        auto gi = grads.find(n);
        if (gi == grads.end() || !n->backward_fn) continue;
        std::vector<Variable> in_grads = n->backward_fn(gi->second);
        if (in_grads.size() != n->inputs.size())
            throw std::logic_error("backward_fn arity mismatch");
        for (std::size_t i = 0; i < in_grads.size(); ++i) {
            const Variable& in = n->inputs[i];
            if (!in.requires_grad() || !in_grads[i].defined()) continue;
            auto cur = grads.find(in.raw());
            if (cur == grads.end())
                grads[in.raw()] = in_grads[i];
            else
                cur->second = ops::add(cur->second, in_grads[i]);
        }
    }
    return grads;
}

} // namespace

void Variable::backward() const {
    auto grads = run_backward(*this, /*create_graph=*/false);
    for (auto& [n, g] : grads) {
        if (!n->backward_fn && n->requires_grad) { // leaf parameter
            if (!n->has_grad) {
                n->grad = g.value();
                n->has_grad = true;
            } else {
                const Tensor& gt = g.value();
                for (std::size_t i = 0; i < gt.size(); ++i) n->grad[i] += gt[i];
            }
        }
    }
}

std::vector<Variable> grad(const Variable& output, const std::vector<Variable>& targets,
                           bool create_graph) {
    auto grads = run_backward(output, create_graph);
    std::vector<Variable> out;
    out.reserve(targets.size());
    for (const auto& t : targets) {
        auto it = grads.find(t.raw());
        if (it != grads.end())
            out.push_back(it->second);
        else
            out.push_back(Variable::constant(Tensor(t.value().shape(), 0.0)));
    }
    return out;
}

} // namespace autograd
} // namespace deid
