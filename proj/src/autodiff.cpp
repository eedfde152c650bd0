#include "mvt/autodiff.hpp"

namespace mvt {

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Tensor<Scalar> value, bool requires_grad) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  leaves_.push_back(node);
  return Var<Scalar>(std::move(node), this);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Tensor<Scalar> value, bool requires_grad, BackwardFn backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (requires_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    ops_.push_back(node);
  }
  return Var<Scalar>(std::move(node), this);
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  // A loss that does not depend on any parameter leaves every gradient at zero.
  if (!loss.requires_grad()) return;
  if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");
  loss.node().grad_buffer().data().setOnes();
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node<Scalar>& node = **it;
    if (node.has_grad && node.backward) node.backward(node);
  }
}

template <typename Scalar>
std::size_t Tape<Scalar>::live_bytes() const {
  std::size_t elems = 0;
  auto count = [&](const auto& nodes) {
    for (const auto& n : nodes) {
      elems += static_cast<std::size_t>(n->value.size());
      if (n->has_grad) elems += static_cast<std::size_t>(n->grad.size());
    }
  };
  count(leaves_);
  count(ops_);
  return elems * sizeof(Scalar);
}

template <typename Scalar>
VarStore<Scalar> bind_params(Tape<Scalar>& tape, const ParamStore<Scalar>& params, bool requires_grad) {
  VarStore<Scalar> vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t, requires_grad));
  return vars;
}

template <typename Scalar>
ParamStore<Scalar> collect_grads(const VarStore<Scalar>& vars) {
  ParamStore<Scalar> grads;
  for (const auto& [name, v] : vars) {
    grads.emplace(name, v.grad() ? *v.grad() : Tensor<Scalar>(v.shape()));
  }
  return grads;
}

template class Tape<float>;
template class Tape<double>;
template VarStore<float> bind_params(Tape<float>&, const ParamStore<float>&, bool);
template VarStore<double> bind_params(Tape<double>&, const ParamStore<double>&, bool);
template ParamStore<float> collect_grads(const VarStore<float>&);
template ParamStore<double> collect_grads(const VarStore<double>&);

}  // namespace mvt
