#include "vstudent/optim.hpp"

#include <cmath>

#include "vstudent/errors.hpp"

namespace vstudent {

void adam_step(AdamState& state, std::span<const ParamSlot> params) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->rows(), p.value->cols());
      state.v.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.grad->same_shape(*p.value) || !state.m[i].same_shape(*p.value)) {
      throw ShapeError("adam_step: shape mismatch at " + p.path);
    }
    if (!all_finite(*p.grad)) throw TrainingError("non-finite gradient in " + p.path);
  }

  state.t += 1;
  const auto& o = state.options;
  const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value->data();
    auto g = params[i].grad->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

double clip_gradients(std::span<Matrix> grads, double max_norm) {
  double squared = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) squared += x * x;
  const double norm = std::sqrt(squared);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.data()) x *= factor;
  }
  return norm;
}

std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t epoch) {
  return RngStream(run_seed, 0x5u).split(epoch).next_u64();
}

Matrix he_uniform(std::size_t rows, std::size_t cols, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows));
  Matrix w(rows, cols);
  for (double& x : w.data()) x = (2.0 * rng.next_uniform() - 1.0) * bound;
  return w;
}

}  // namespace vstudent
