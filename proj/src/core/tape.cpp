#include "rstan/core/tape.hpp"

#include "rstan/core/errors.hpp"

namespace rstan {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("non-finite value in leaf tensor of shape " +
                       to_string(value.shape()));
  }
  GraphNode n;
  n.op_kind = "leaf";
  n.output_id = nodes_.size();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Var v = leaf(p.value, p.requires_grad);
  nodes_[v.id()].op_kind = "param";
  nodes_[v.id()].param = &p;
  return v;
}

Var Tape::record(std::string op_kind, std::initializer_list<Var> inputs,
                 Tensor value, std::unique_ptr<BackwardRule> rule) {
  return record(std::move(op_kind), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(value), std::move(rule));
}

Var Tape::record(std::string op_kind, std::span<const Var> inputs,
                 Tensor value, std::unique_ptr<BackwardRule> rule) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("op '" + op_kind + "' produced a non-finite value");
  }
  GraphNode n;
  n.op_kind = std::move(op_kind);
  n.output_id = nodes_.size();
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) {
      throw ContractError("op '" + n.op_kind + "' mixes vars from different tapes");
    }
    n.input_ids.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor* Tape::grad(NodeId id) const {
  return nodes_[id].has_grad ? &nodes_[id].grad : nullptr;
}

std::span<double> Tape::grad_sink(NodeId id) {
  GraphNode& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad.data();
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (backward_done_) throw ContractError("backward called twice on one tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        to_string(lv.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_sink(loss.id())[0] = 1.0;

  for (NodeId id = loss.id() + 1; id-- > 0;) {
    const GraphNode& n = nodes_[id];
    if (n.has_grad && n.rule) n.rule->backward(*this, n);
  }
  for (GraphNode& n : nodes_) {
    if (n.param == nullptr || !n.has_grad) continue;
    if (n.param->grad.shape() != n.grad.shape()) n.param->zero_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
  }
}

}  // namespace rstan
