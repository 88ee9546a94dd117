#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "dilvae/tensor.hpp"

namespace dilvae {

using NodeId = std::size_t;
class Tape;

/// Handle to a tensor recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    NodeId id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Define-by-run reverse-mode autodiff tape. Nodes are appended in
/// evaluation order, so the node vector is already topologically sorted.
/// A tape and everything recorded on it belong to a single thread.
class Tape {
public:
    /// Propagates the output gradient of node `self` into its inputs.
    using Backward = std::function<void(Tape&, NodeId self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value);
    /// Leaf bound to a model parameter; repeated calls with the same tensor
    /// return the same node so gradients accumulate in one place.
    Var param(const Tensor& parameter);
    const Tensor* param_grad(const Tensor& parameter) const;

    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, std::span<const Var> inputs, Backward backward);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
    void backward(Var loss);
    void backward(Var output, const Tensor& seed);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    /// Gradient of a node after backward(); zeros when nothing reached it.
    const Tensor& grad(NodeId id);
    const Tensor& grad(Var v) { return grad(v.id); }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    /// Mutable gradient buffer, allocated as zeros on first access.
    Tensor& grad_buffer(NodeId id);
    const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }

    std::size_t size() const { return nodes_.size(); }
    void zero_grad();

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<NodeId> inputs;
        Backward backward;
        bool requires_grad = false;
    };

    void check_owner(Var v) const;

    std::deque<Node> nodes_;  // deque keeps value references stable while recording
    std::unordered_map<const Tensor*, NodeId> params_;
};

} // namespace dilvae
