#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "vstudent/autograd.hpp"
#include "vstudent/checkpoint.hpp"
#include "vstudent/teacher.hpp"
#include "vstudent/tensor.hpp"

namespace vstudent {

// Sigmoid fit of the negative KL for the log-uniform prior.
inline constexpr double kSvdK1 = 0.63576;
inline constexpr double kSvdK2 = 1.87320;
inline constexpr double kSvdK3 = 1.48695;

/// log α is clamped to this range inside the KL penalties.
inline constexpr double kLogAlphaClamp = 40.0;
inline constexpr double kDefaultLogSigma2 = -8.0;
/// log σ² of a deterministic (point-mass) student.
inline constexpr double kPointMassLogSigma2 = -200.0;
inline constexpr double kDefaultPruneThreshold = 3.0;
/// Added under the square root of the pre-activation variance.
inline constexpr double kVarianceFloor = 1e-20;

/// Dense layer with a factorised Gaussian posterior N(θ, σ²) per weight and a
/// deterministic bias.
struct VariationalDenseLayer {
  Matrix theta;       // K×H
  Matrix log_sigma2;  // K×H
  Matrix bias;        // 1×H

  std::size_t inputs() const noexcept { return theta.rows(); }
  std::size_t outputs() const noexcept { return theta.cols(); }
  /// Throws ShapeError if theta, log_sigma2 and bias disagree.
  void validate() const;
};

/// keep(k, h) = 1 when the weight survives pruning at the stored threshold.
struct PruneMask {
  Matrix keep;
  double threshold = kDefaultPruneThreshold;

  std::size_t kept() const;
};

enum class ForwardMode { train, eval };

/// Same θ initialisation as a teacher with this architecture and seed.
std::vector<VariationalDenseLayer> init_student(const Architecture& arch, std::uint64_t seed,
                                                double log_sigma2 = kDefaultLogSigma2);

/// log α = log σ² − log θ², +∞ where θ = 0.
Matrix alpha_log(const VariationalDenseLayer& layer);

/// Per-weight penalties as functions of (clamped) log α.
double kl_svd_weight(double log_alpha);
double kl_vbd_weight(double log_alpha);
double clamp_log_alpha(double log_alpha);

/// Σ k1 − k1·σ(k2 + k3·log α) + ½·log(1 + 1/α): non-negative, → 0 as α → ∞.
double kl_svd(const VariationalDenseLayer& layer);
/// Σ ½·log(1 + 1/α).
double kl_vbd(const VariationalDenseLayer& layer);

PruneMask prune_mask(const VariationalDenseLayer& layer, double threshold);
std::vector<PruneMask> prune_masks(std::span<const VariationalDenseLayer> layers,
                                   double threshold);
/// θ ⊙ keep.
Matrix masked_weights(const VariationalDenseLayer& layer, const PruneMask* mask);

/// Train mode samples pre-activations with the local reparameterisation
/// trick: mean x·θ + b, variance (x²)·σ². Eval mode is x·(θ ⊙ keep) + b with
/// an all-ones mask when none is given.
Matrix variational_forward(const VariationalDenseLayer& layer, const Matrix& input,
                           RngStream& rng, ForwardMode mode, const PruneMask* mask = nullptr);

/// Layers composed with ReLU between them and none after the last.
Matrix student_logits(std::span<const VariationalDenseLayer> layers, const Matrix& input,
                      RngStream& rng, ForwardMode mode,
                      std::span<const PruneMask> masks = {});

/// Tape handles for one layer's parameters.
struct LayerVars {
  ad::Var theta;
  ad::Var log_sigma2;
  ad::Var bias;
};

/// theta and bias become variables; log σ² is a variable only when
/// train_log_sigma2 is set.
std::vector<LayerVars> register_layers(ad::Tape& tape,
                                       std::span<const VariationalDenseLayer> layers,
                                       bool train_log_sigma2);

/// Differentiable counterparts of the functions above.
ad::Var variational_forward(const LayerVars& layer, ad::Var input, RngStream& rng,
                            ForwardMode mode, const PruneMask* mask = nullptr);
ad::Var student_logits(std::span<const LayerVars> layers, ad::Var input, RngStream& rng,
                       ForwardMode mode, std::span<const PruneMask> masks = {});
ad::Var kl_svd(const LayerVars& layer);
ad::Var kl_vbd(const LayerVars& layer);

struct StudentCheckpoint {
  std::vector<VariationalDenseLayer> layers;
  double threshold = kDefaultPruneThreshold;
  Manifest manifest;
};

/// Payload: per layer θ then bias, followed by a log σ² section per layer.
void save_student(std::span<const VariationalDenseLayer> layers, double threshold,
                  const std::filesystem::path& stem, const Manifest& extra = {});
StudentCheckpoint load_student(const std::filesystem::path& stem);
std::vector<double> flatten_student(std::span<const VariationalDenseLayer> layers);
Architecture student_architecture(std::span<const VariationalDenseLayer> layers);

}  // namespace vstudent
