#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vstudent/checkpoint.hpp"
#include "vstudent/mnist.hpp"
#include "vstudent/tensor.hpp"

namespace vstudent {

/// Layer widths such as {784, 1200, 1200, 10}.
using Architecture = std::vector<std::size_t>;

/// Parses "784-1200-1200-10". Throws UsageError on empty fields, zeros,
/// non-digits or fewer than two widths.
Architecture parse_architecture(const std::string& text);
std::string format_architecture(const Architecture& arch);
/// Σ (K·H + H) over consecutive width pairs.
std::size_t count_parameters(const Architecture& arch);

enum class Activation { relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& text);

struct DenseLayer {
  Matrix weight;  // K×H
  Matrix bias;    // 1×H
};

struct DenseMLP {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  Architecture architecture() const;
  /// Throws ShapeError if the layer shapes do not chain.
  void validate() const;
};

/// He-uniform weights and zero biases drawn from the run seed.
DenseMLP init_dense_mlp(const Architecture& arch, std::uint64_t seed);

/// Shared by teacher and student initialisation so both start from identical
/// weights for a given seed.
std::vector<Matrix> init_weights(const Architecture& arch, std::uint64_t seed);

Matrix forward_logits(const DenseMLP& net, const Matrix& batch);
std::size_t count_parameters(const DenseMLP& net);

/// Top-1 error fraction of the network on a dataset.
double classification_error(const DenseMLP& net, const Dataset& ds);

struct TeacherConfig {
  Architecture architecture{784, 1200, 1200, 10};
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct TeacherEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  /// Error of the running predictions made while training through the epoch.
  double running_train_error = 0.0;
  double seconds = 0.0;
};

using TeacherObserver = std::function<void(const TeacherEpoch&, const DenseMLP&)>;

/// Minimises batch-mean cross-entropy with Adam. Throws TrainingError carrying
/// the epoch index if the loss stops being finite.
DenseMLP train_teacher(const Dataset& ds, const TeacherConfig& config,
                       const TeacherObserver& observer = {});

/// Weights then biases of each layer in order, row-major.
std::vector<double> flatten_parameters(const DenseMLP& net);
std::string checkpoint_digest(const DenseMLP& net);

/// Writes <stem>.manifest and <stem>.bin. Extra entries are appended to the
/// manifest verbatim.
void save_checkpoint(const DenseMLP& net, const std::filesystem::path& stem,
                     const Manifest& extra = {});
DenseMLP load_checkpoint(const std::filesystem::path& stem);

/// Raw teacher logits, one row per dataset example.
struct LogitCache {
  Matrix logits;
  std::string source_digest;

  LogitCache select(std::span<const std::size_t> indices) const;
};

LogitCache precompute_logits(const DenseMLP& net, const Dataset& ds);
void save_logit_cache(const LogitCache& cache, const std::filesystem::path& stem);
/// Throws StalenessError when the cache was produced by a different teacher.
LogitCache load_logit_cache(const std::filesystem::path& stem, const std::string& expected_digest);

}  // namespace vstudent
