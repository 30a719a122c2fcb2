#include "vstudent/autograd.hpp"

#include <cmath>

#include "vstudent/errors.hpp"

namespace vstudent::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  return push(Node{std::move(value), {}, true, {}});
}

Var Tape::constant(Matrix value) {
  return push(Node{std::move(value), {}, false, {}});
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.index()].requires_grad;
  return push(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.index()].requires_grad;
  return push(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
}

void Tape::backward(Var root) {
  const Matrix& root_value = nodes_[root.index()].value;
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw ShapeError("backward root must be 1x1, got " + root_value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  if (!nodes_[root.index()].requires_grad) return;
  nodes_[root.index()].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.index()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& contribution) {
  Node& n = nodes_[v.index()];
  if (!n.requires_grad) return;
  if (!contribution.same_shape(n.value)) {
    throw ShapeError("gradient shape " + contribution.shape_string() + " does not match node " +
                     n.value.shape_string());
  }
  if (n.grad.empty()) {
    n.grad = contribution;
    return;
  }
  auto dst = n.grad.data();
  auto src = contribution.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate(Var v, Matrix&& contribution) {
  Node& n = nodes_[v.index()];
  if (!n.requires_grad) return;
  if (n.grad.empty() && contribution.same_shape(n.value)) {
    n.grad = std::move(contribution);
    return;
  }
  accumulate(v, static_cast<const Matrix&>(contribution));
}

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(vstudent::matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(a)) tape.accumulate(a, matmul_nt(g, b.value()));
                    if (tape.requires_grad(b)) tape.accumulate(b, matmul_tn(a.value(), g));
                  });
}

Var add(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(apply(BinaryOp::add, a.value(), b.value()), {a, b},
                  [a, b](Tape& tape, const Matrix& g) {
                    tape.accumulate(a, g);
                    tape.accumulate(b, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(apply(BinaryOp::subtract, a.value(), b.value()), {a, b},
                  [a, b](Tape& tape, const Matrix& g) {
                    tape.accumulate(a, g);
                    if (tape.requires_grad(b)) tape.accumulate(b, vstudent::scale(g, -1.0));
                  });
}

Var mul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(apply(BinaryOp::multiply, a.value(), b.value()), {a, b},
                  [a, b](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(a))
                      tape.accumulate(a, apply(BinaryOp::multiply, g, b.value()));
                    if (tape.requires_grad(b))
                      tape.accumulate(b, apply(BinaryOp::multiply, g, a.value()));
                  });
}

Var scale(Var a, double factor) {
  Tape& t = a.tape();
  return t.record(vstudent::scale(a.value(), factor), {a},
                  [a, factor](Tape& tape, const Matrix& g) {
                    tape.accumulate(a, vstudent::scale(g, factor));
                  });
}

Var add_row(Var x, Var bias) {
  Tape& t = x.tape();
  return t.record(vstudent::add_row(x.value(), bias.value()), {x, bias},
                  [x, bias](Tape& tape, const Matrix& g) {
                    tape.accumulate(x, g);
                    if (tape.requires_grad(bias)) tape.accumulate(bias, column_sums(g));
                  });
}

Var relu(Var a) {
  Tape& t = a.tape();
  return t.record(apply(UnaryOp::relu, a.value()), {a}, [a](Tape& tape, const Matrix& g) {
    Matrix local = g;
    auto d = local.data();
    auto x = a.value().data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(x[i] > 0.0)) d[i] = 0.0;
    tape.accumulate(a, std::move(local));
  });
}

Var square(Var a) {
  Tape& t = a.tape();
  return t.record(apply(UnaryOp::square, a.value()), {a}, [a](Tape& tape, const Matrix& g) {
    Matrix local = g;
    auto d = local.data();
    auto x = a.value().data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 2.0 * x[i];
    tape.accumulate(a, std::move(local));
  });
}

Var exp(Var a) {
  Tape& t = a.tape();
  Matrix value = apply(UnaryOp::exp, a.value());
  Matrix local_slope = value;
  return t.record(std::move(value), {a},
                  [a, slope = std::move(local_slope)](Tape& tape, const Matrix& g) {
                    tape.accumulate(a, apply(BinaryOp::multiply, g, slope));
                  });
}

Var sqrt(Var a, double floor) {
  Tape& t = a.tape();
  Matrix value = a.value();
  for (double& x : value.data()) x = std::sqrt(x + floor);
  Matrix root = value;
  return t.record(std::move(value), {a}, [a, root = std::move(root)](Tape& tape, const Matrix& g) {
    Matrix local = g;
    auto d = local.data();
    auto s = root.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 0.5 / s[i];
    tape.accumulate(a, std::move(local));
  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  return t.record(Matrix(1, 1, vstudent::sum(a.value())), {a}, [a](Tape& tape, const Matrix& g) {
    const Matrix& x = a.value();
    tape.accumulate(a, Matrix(x.rows(), x.cols(), g(0, 0)));
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ShapeError("weighted_sum: need one weight per term");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Matrix& v = terms[i].value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("weighted_sum: terms must be 1x1");
    total += weights[i] * v(0, 0);
  }
  Tape& t = terms.front().tape();
  return t.record(Matrix(1, 1, total), terms, [terms, weights](Tape& tape, const Matrix& g) {
    for (std::size_t i = 0; i < terms.size(); ++i)
      tape.accumulate(terms[i], Matrix(1, 1, weights[i] * g(0, 0)));
  });
}

double scalar(Var v) {
  const Matrix& m = v.value();
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar: node is " + m.shape_string());
  return m(0, 0);
}

}  // namespace vstudent::ad
