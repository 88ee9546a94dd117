#include "dilvae/tape.hpp"

#include "dilvae/errors.hpp"

namespace dilvae {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& parameter) {
    if (auto it = params_.find(&parameter); it != params_.end()) return Var{this, it->second};
    Var v = leaf(parameter);
    params_.emplace(&parameter, v.id);
    return v;
}

const Tensor* Tape::param_grad(const Tensor& parameter) const {
    auto it = params_.find(&parameter);
    if (it == params_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::check_owner(Var v) const {
    if (v.tape != this || v.id >= nodes_.size())
        throw std::logic_error("variable does not belong to this tape");
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        check_owner(in);
        node.inputs.push_back(in.id);
        node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad(NodeId id) { return grad_buffer(id); }

void Tape::backward(Var loss) {
    check_owner(loss);
    if (loss.value().numel() != 1)
        throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    backward(loss, Tensor(loss.shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
    check_owner(output);
    if (seed.shape() != output.shape())
        throw DimensionError("backward seed " + shape_str(seed.shape()) + " vs output " +
                             shape_str(output.shape()));
    Tensor& g = grad_buffer(output.id);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
    for (NodeId id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        n.backward(*this, id);
    }
}

void Tape::zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor();
}

} // namespace dilvae
