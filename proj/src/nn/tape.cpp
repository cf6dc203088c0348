#include "morphlm/nn/tape.hpp"

#include <stdexcept>

namespace morphlm::nn {

std::size_t ParameterStore::add(std::string name, Tensor init) {
    if (index_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    const std::size_t idx = params_.size();
    index_.emplace(name, idx);
    Tensor grad(init.shape());
    params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
    return idx;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

Parameter& ParameterStore::get(std::string_view name) {
    auto idx = find(name);
    if (!idx) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return params_[*idx];
}

const Parameter& ParameterStore::get(std::string_view name) const {
    auto idx = find(name);
    if (!idx) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return params_[*idx];
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) {
        p.grad.fill(0.0);
    }
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.size();
    }
    return n;
}

Var Tape::parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
        return Var{this, it->second};
    }
    Node node;
    node.param = &p;
    node.requires_grad = training();
    nodes_.push_back(std::move(node));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && training();
    if (node.requires_grad) {
        node.backward = std::move(fn);
    }
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_[v.id];
    n.touched = true;
    if (n.param) {
        return n.param->grad;
    }
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
        n.grad = Tensor(n.value.shape());
    }
    return n.grad;
}

void Tape::backward(Var root) {
    if (!training()) {
        throw std::logic_error("backward() on an inference tape");
    }
    const Tensor& rv = value(root);
    if (rv.size() != 1) {
        throw std::invalid_argument("backward() root must be a scalar, got " + rv.shape_string());
    }
    for (Node& n : nodes_) {
        n.touched = false;
        if (!n.param) {
            n.grad = Tensor();
        }
    }
    grad(root)[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.touched && n.backward) {
            n.backward(*this, n.grad);
        }
    }
}

}  // namespace morphlm::nn
