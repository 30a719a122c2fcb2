#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "vstudent/tensor.hpp"

namespace vstudent::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Append-only computation graph. Nodes are recorded in evaluation order, so
/// the reverse sweep is a walk from the root back to node 0.
class Tape {
 public:
  /// Called during the reverse sweep with the node's accumulated gradient.
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value);
  Var constant(Matrix value);
  /// Records a derived node. The backward closure is dropped if no parent
  /// needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

  /// Reverse sweep from a 1×1 root. Gradients from an earlier sweep are cleared.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_[v.index()].value; }
  /// Gradient of the last backward root with respect to v; a zero matrix of
  /// v's shape when nothing flowed into it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }

  /// Adds contribution into v's gradient. No-op for nodes that need none.
  void accumulate(Var v, const Matrix& contribution);
  void accumulate(Var v, Matrix&& contribution);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Entrywise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Broadcasts a 1×cols bias over the rows of x.
Var add_row(Var x, Var bias);
Var relu(Var a);
Var square(Var a);
Var exp(Var a);
/// sqrt(a + floor); the floor keeps the derivative finite at zero.
Var sqrt(Var a, double floor);
/// Sum of all entries as a 1×1 node.
Var sum(Var a);
/// Σ weights[i]·terms[i] over 1×1 nodes.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

double scalar(Var v);

}  // namespace vstudent::ad
