#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vstudent/tensor.hpp"

namespace vstudent {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// A parameter tensor the optimizer updates in place, with its gradient and
/// a path used in error messages ("layer1.theta").
struct ParamSlot {
  std::string path;
  Matrix* value;
  const Matrix* grad;
};

/// First/second moment estimates mirroring the parameter list. Moments are
/// allocated on the first step.
struct AdamState {
  AdamOptions options;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update. Throws TrainingError naming the parameter if a
/// gradient entry is not finite; nothing is modified in that case.
void adam_step(AdamState& state, std::span<const ParamSlot> params);

/// Rescales all gradients so their joint l2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_gradients(std::span<Matrix> grads, double max_norm);

/// Seed of the batch order for one epoch of a run.
std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t epoch);

/// Uniform(−√(6/rows), √(6/rows)) fan-in initialisation.
Matrix he_uniform(std::size_t rows, std::size_t cols, RngStream& rng);

}  // namespace vstudent
