#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"

namespace smamba {

template <typename Scalar>
class Tape;

// Handle to one value recorded on a tape. Cheap to copy; valid while the
// tape is alive.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool defined() const { return tape != nullptr && id >= 0; }
  const Array<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape; }
  std::size_t numel() const { return tape->value(id).numel(); }
};

// Reverse-mode gradient tape. Operations append nodes in execution order;
// backward() replays adjoint closures in reverse. A tape is consumed by
// exactly one backward pass. Single-threaded; independent tapes may run
// concurrently.
template <typename Scalar>
class Tape {
 public:
  // Adjoint closure: reads grad(self_id), accumulates into input grads.
  using BackwardFn = std::function<void(Tape&, int self_id)>;

  struct Node {
    Array<Scalar> value;
    Array<Scalar> grad;  // allocated at backward(); same shape as value
    bool requires_grad = false;
    BackwardFn backward;
    std::string op;
  };

  Var<Scalar> leaf(Array<Scalar> value, bool requires_grad = false) {
    if (!all_finite(value)) throw ComputeError("leaf holds non-finite values");
    return push("leaf", std::move(value), requires_grad, nullptr);
  }

  Var<Scalar> record(const std::string& op, Array<Scalar> value, bool requires_grad,
                     BackwardFn fn) {
    if (!all_finite(value))
      throw ComputeError("op '" + op + "' produced non-finite values");
    return push(op, std::move(value), requires_grad, requires_grad ? std::move(fn) : nullptr);
  }

  const Array<Scalar>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Mutable gradient accumulator; only valid during/after backward().
  Array<Scalar>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() == 0) throw StateError("gradients not materialized; run backward() first");
    return n.grad;
  }

  const Array<Scalar>& grad_of(Var<Scalar> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.numel() == 0) throw StateError("gradients not materialized; run backward() first");
    return n.grad;
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse execution
  // order. Populates grad for every node; unreachable nodes keep zeros.
  void backward(Var<Scalar> loss) {
    if (loss.tape != this) throw ContractError("loss belongs to a different tape");
    if (nodes_.empty()) throw StateError("backward on an empty tape");
    if (consumed_) throw StateError("tape already consumed by a previous backward pass");
    if (value(loss.id).numel() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(value(loss.id).shape));
    consumed_ = true;
    for (Node& n : nodes_) n.grad = Array<Scalar>(n.value.shape);
    nodes_[static_cast<std::size_t>(loss.id)].grad[0] = Scalar(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward) n.backward(*this, i);
    }
  }

 private:
  Var<Scalar> push(const std::string& op, Array<Scalar> value, bool requires_grad,
                   BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace smamba
