#include <vector>

#include "sslcrop/autodiff.hpp"
#include "sslcrop/error.hpp"

namespace sslcrop::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(std::string name, Tensor value) {
  if (name.empty()) throw ContractError("parameters need a name");
  nodes_.push_back(Node{std::move(value), {}, {}, std::move(name), true, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("operand belongs to a different tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::stop_gradient(Var v) {
  if (v.tape() != this) throw ContractError("operand belongs to a different tape");
  Node node;
  node.value = nodes_[v.id()].value;
  node.inputs = {v.id()};
  node.stop_gradient = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> names;
  for (const Node& n : nodes_) {
    if (!n.parameter_name.empty()) names.push_back(n.parameter_name);
  }
  return names;
}

GradientMap backward(const Tape& tape, Var root) {
  if (root.tape() != &tape) throw ContractError("root does not belong to this tape");
  if (tape.value(root.id()).size() != 1) {
    throw ContractError("backward root must be a scalar, got shape " +
                        shape_string(tape.value(root.id()).shape()));
  }

  GradientMap result;
  for (const auto& node : tape.nodes_) {
    if (!node.parameter_name.empty()) {
      result.try_emplace(node.parameter_name, Tensor(node.value.shape()));
    }
  }

  std::vector<Tensor> grads(root.id() + 1);
  grads[root.id()] = Tensor(tape.value(root.id()).shape(), 1.0);

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const auto& node = tape.nodes_[i];
    if (!node.requires_grad || grads[i].empty()) continue;

    if (!node.parameter_name.empty()) {
      result[node.parameter_name] += grads[i];
      continue;
    }
    if (!node.backward) continue;

    inputs.clear();
    input_grads.clear();
    for (std::size_t in : node.inputs) {
      inputs.push_back(&tape.nodes_[in].value);
      if (tape.nodes_[in].requires_grad) {
        if (grads[in].empty()) grads[in] = Tensor(tape.nodes_[in].value.shape());
        input_grads.push_back(&grads[in]);
      } else {
        input_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{node.value, grads[i], inputs, input_grads});
    // Each node is visited once; its adjoint is no longer needed.
    grads[i] = Tensor();
  }
  return result;
}

}  // namespace sslcrop::ad
