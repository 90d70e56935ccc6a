#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/tensor.hpp"

namespace relmetric {

// A named trainable (or buffer) tensor owned by a model. Gradients from every
// tape that uses the parameter accumulate into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros_like(value)),
        trainable(trainable_) {}

  void zero_grad() { grad.fill(Real{0}); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

// Reverse-mode autodiff record. Nodes are appended in evaluation order, so the
// node list is already topologically sorted and backward() walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push_owned(std::move(value), false); }

  // Leaf owned by the tape that still collects a gradient (used by tests and
  // finite-difference checks).
  Var variable(Tensor value) { return push_owned(std::move(value), true); }

  // Trainable parameter: gradients flow straight into `p.grad`.
  Var parameter(Parameter& p) {
    Node node;
    node.value_ref = &p.value;
    node.requires_grad = p.trainable;
    node.grad_target = p.trainable ? &p.grad : nullptr;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  // Read-only use of a parameter; safe on a frozen snapshot shared by threads.
  Var parameter(const Parameter& p) {
    Node node;
    node.value_ref = &p.value;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  // Appends the result of a primitive. The backward closure runs only when the
  // node requires a gradient, which is the case iff some input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    Node node;
    node.owned = std::move(value);
    node.value_ref = nullptr;
    for (const Var& in : inputs) {
      if (in.tape != this) throw ContractError("tape: input belongs to a different tape");
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).get(); }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient accumulated so far, or nullptr when the node never received one.
  const Tensor* grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad_target) return node.grad_target;
    return node.grad ? node.grad.get() : nullptr;
  }

  // Accumulation buffer for an input inside a backward closure. Returns nullptr
  // for constants so closures can skip work.
  Tensor* grad_buffer(Var v) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) return nullptr;
    if (node.grad_target) return node.grad_target;
    if (!node.grad) node.grad = std::make_unique<Tensor>(Tensor::zeros_like(node.get()));
    return node.grad.get();
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    Tensor* seed = grad_buffer(loss);
    (*seed)[0] += Real{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward) continue;
      const Tensor* g = node.grad_target ? node.grad_target : node.grad.get();
      if (!g) continue;
      node.backward(*this, *g);
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* value_ref = nullptr;
    std::unique_ptr<Tensor> grad;
    Tensor* grad_target = nullptr;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor& get() const { return value_ref ? *value_ref : owned; }
  };

  Var push_owned(Tensor value, bool requires_grad) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace relmetric
