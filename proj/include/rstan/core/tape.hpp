#pragma once

#include <cstddef>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rstan/core/tensor.hpp"

namespace rstan {

// Trainable leaf: value plus an accumulated gradient of the same shape.
struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad = Tensor::zeros_like(value); }

  Tensor value;
  Tensor grad;
  bool requires_grad = true;
};

using NodeId = std::size_t;

class Tape;
struct GraphNode;

// Saved context plus the vector-Jacobian rule of one recorded operation.
class BackwardRule {
 public:
  virtual ~BackwardRule() = default;
  virtual void backward(Tape& tape, const GraphNode& node) const = 0;
};

struct GraphNode {
  std::string op_kind;
  std::vector<NodeId> input_ids;
  NodeId output_id = 0;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  Parameter* param = nullptr;
  std::unique_ptr<BackwardRule> rule;
};

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

// Append-only record of operations. Node ids are creation indices, so every
// input precedes its consumer and reverse creation order is a valid
// topological order for the backward sweep.
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  // Binds a parameter; backward() adds this node's gradient into p.grad.
  Var param(Parameter& p);

  // Records an op output. The rule is discarded when no input needs grad.
  Var record(std::string op_kind, std::initializer_list<Var> inputs,
             Tensor value, std::unique_ptr<BackwardRule> rule);
  Var record(std::string op_kind, std::span<const Var> inputs, Tensor value,
             std::unique_ptr<BackwardRule> rule);

  void backward(Var loss);

  const GraphNode& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  // Gradient of a node after backward(); nullptr when none reached it.
  const Tensor* grad(NodeId id) const;

  // Zero-initialised gradient buffer of a node, or an empty span when the
  // node does not require grad. Rules accumulate into it with +=.
  std::span<double> grad_sink(NodeId id);

  bool check_finite() const { return check_finite_; }

 private:
  // deque: references to node values stay valid while recording.
  std::deque<GraphNode> nodes_;
  bool check_finite_;
  bool backward_done_ = false;
};

}  // namespace rstan
