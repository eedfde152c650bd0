#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mvt/tensor.hpp"

namespace mvt {

template <typename Scalar>
class Tape;

/// One value on the tape. `backward` reads the node's own gradient and
/// accumulates into its inputs' gradients.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::function<void(const Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor<Scalar>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<Scalar>(value.shape());
      has_grad = true;
    }
    return grad;
  }

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    grad_buffer().matrix().noalias() += g;
  }
};

/// Handle to a tape node. Cheap to copy; copies alias the same node.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<Scalar>> node, Tape<Scalar>* tape) : node_(std::move(node)), tape_(tape) {}

  /// Untracked constant, not attached to any tape.
  static Var constant(Tensor<Scalar> value) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    return Var(std::move(node), nullptr);
  }

  bool valid() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient after backward; nullptr when no gradient reached this node.
  const Tensor<Scalar>* grad() const { return node_->has_grad ? &node_->grad : nullptr; }

  Node<Scalar>& node() const { return *node_; }
  const std::shared_ptr<Node<Scalar>>& node_ptr() const { return node_; }
  Tape<Scalar>* tape() const { return tape_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
  Tape<Scalar>* tape_ = nullptr;
};

/// Dynamic reverse-mode tape. Operations append nodes in execution order, so
/// the recorded list is already topologically sorted; backward walks it in
/// reverse and visits each node once.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Node<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input or parameter. Only leaves with requires_grad receive gradients.
  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false);

  /// Appends the result of an operation. The node is recorded only when some
  /// input requires a gradient; otherwise the value is returned untracked.
  Var<Scalar> record(Tensor<Scalar> value, bool requires_grad, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(const Var<Scalar>& loss);

  std::size_t size() const { return ops_.size(); }

  /// Bytes held by values and gradients of every node this tape owns.
  std::size_t live_bytes() const;

 private:
  std::vector<std::shared_ptr<Node<Scalar>>> leaves_;
  std::vector<std::shared_ptr<Node<Scalar>>> ops_;
};

/// Binds every entry of a store as a tape leaf.
template <typename Scalar>
using VarStore = std::map<std::string, Var<Scalar>>;

template <typename Scalar>
VarStore<Scalar> bind_params(Tape<Scalar>& tape, const ParamStore<Scalar>& params, bool requires_grad);

/// Collects gradients of bound leaves; unreached parameters get exact zeros.
template <typename Scalar>
ParamStore<Scalar> collect_grads(const VarStore<Scalar>& vars);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mvt
