#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "vstudent/autograd.hpp"
#include "vstudent/errors.hpp"

using namespace vstudent;

namespace {

// sum(exp(relu(x·w + b)) ⊙ sqrt((x·w)² + 1e-3)) - 0.5·sum(w²), evaluated as values.
double composite_value(const Matrix& x, const Matrix& w, const Matrix& b) {
  ad::Tape tape;
  const ad::Var xv = tape.constant(x);
  const ad::Var wv = tape.constant(w);
  const ad::Var bv = tape.constant(b);
  const ad::Var pre = ad::matmul(xv, wv);
  const ad::Var act = ad::exp(ad::scale(ad::relu(ad::add_row(pre, bv)), 0.3));
  const ad::Var mag = ad::sqrt(ad::square(pre), 1e-3);
  const ad::Var out = ad::weighted_sum({ad::sum(ad::mul(act, mag)), ad::sum(ad::square(wv))}, {1.0, -0.5});
  return ad::scalar(out);
}

}  // namespace

TEST_CASE("reverse sweep matches central differences on a composite graph") {
  Matrix x = test::random_matrix(4, 3, 1);
  Matrix w = test::random_matrix(3, 5, 2);
  Matrix b = test::random_matrix(1, 5, 3, 0.2);

  ad::Tape tape;
  const ad::Var xv = tape.variable(x);
  const ad::Var wv = tape.variable(w);
  const ad::Var bv = tape.variable(b);
  const ad::Var pre = ad::matmul(xv, wv);
  const ad::Var act = ad::exp(ad::scale(ad::relu(ad::add_row(pre, bv)), 0.3));
  const ad::Var mag = ad::sqrt(ad::square(pre), 1e-3);
  const ad::Var out = ad::weighted_sum({ad::sum(ad::mul(act, mag)), ad::sum(ad::square(wv))}, {1.0, -0.5});
  CHECK(std::abs(ad::scalar(out) - composite_value(x, w, b)) < 1e-14);
  tape.backward(out);

  auto f = [&] { return composite_value(x, w, b); };
  CHECK(test::max_rel_error(tape.grad(xv), test::numeric_grad(f, x)) < 1e-6);
  CHECK(test::max_rel_error(tape.grad(wv), test::numeric_grad(f, w)) < 1e-6);
  CHECK(test::max_rel_error(tape.grad(bv), test::numeric_grad(f, b)) < 1e-6);
}

TEST_CASE("add and sub propagate with signs") {
  ad::Tape tape;
  const ad::Var a = tape.variable(Matrix(2, 2, 1.0));
  const ad::Var b = tape.variable(Matrix(2, 2, 2.0));
  const ad::Var out = ad::sum(ad::sub(ad::add(a, b), ad::scale(b, 3.0)));
  tape.backward(out);
  CHECK(tape.grad(a) == Matrix(2, 2, 1.0));
  CHECK(tape.grad(b) == Matrix(2, 2, -2.0));
}

TEST_CASE("constants receive no gradient") {
  ad::Tape tape;
  const ad::Var c = tape.constant(Matrix(1, 3, 2.0));
  const ad::Var v = tape.variable(Matrix(1, 3, 1.0));
  const ad::Var out = ad::sum(ad::mul(c, v));
  CHECK_FALSE(tape.requires_grad(c));
  tape.backward(out);
  CHECK(tape.grad(c) == Matrix(1, 3, 0.0));
  CHECK(tape.grad(v) == Matrix(1, 3, 2.0));
}

TEST_CASE("gradient reuse accumulates across uses") {
  ad::Tape tape;
  const ad::Var v = tape.variable(Matrix(1, 1, 3.0));
  const ad::Var out = ad::sum(ad::add(ad::mul(v, v), v));
  tape.backward(out);
  CHECK(tape.grad(v)(0, 0) == 7.0);
  // A second sweep starts from cleared gradients.
  tape.backward(out);
  CHECK(tape.grad(v)(0, 0) == 7.0);
}

TEST_CASE("backward needs a scalar root") {
  ad::Tape tape;
  const ad::Var v = tape.variable(Matrix(2, 1, 1.0));
  CHECK_THROWS_AS(tape.backward(v), ShapeError);
}

TEST_CASE("relu passes gradient only where the input is positive") {
  ad::Tape tape;
  const ad::Var v = tape.variable(Matrix::from_rows({{-1, 0, 2}}));
  tape.backward(ad::sum(ad::relu(v)));
  CHECK(tape.grad(v) == Matrix::from_rows({{0, 0, 1}}));
}
