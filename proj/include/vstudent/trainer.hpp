#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vstudent/checkpoint.hpp"
#include "vstudent/losses.hpp"
#include "vstudent/mnist.hpp"
#include "vstudent/teacher.hpp"
#include "vstudent/variational.hpp"

namespace vstudent {

struct StudentConfig {
  Architecture architecture{784, 500, 50, 10};
  LossConfig loss;
  std::size_t epochs = 100;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  double threshold = kDefaultPruneThreshold;
  /// Joint gradient norm cap; 0 disables clipping.
  double grad_clip = 0.0;
  /// Evaluate after every epoch rather than only after the last one.
  bool evaluate_each_epoch = true;
  /// Free-form label carried into the session record.
  std::string variant;

  void validate() const;
  /// Whether the student keeps a learnable posterior variance. Without a KL
  /// weight it is trained as a point estimate.
  bool variational() const;
  /// λ_V_max, defaulting to 1 / training set size.
  double resolved_lambda_v(std::size_t train_size) const;
};

/// Key/value snapshot of every field, in a fixed order.
Manifest describe(const StudentConfig& config);

struct Evaluation {
  double top1_error = 0.0;
  std::vector<double> per_layer_sparsity;
  double r_s = 1.0;
  std::size_t kept_weights = 0;
  std::size_t total_weights = 0;
};

/// Deterministic masked forward at threshold τ. Argmax ties go to the lowest
/// class index.
Evaluation evaluate(std::span<const VariationalDenseLayer> layers, const Dataset& ds,
                    double threshold);

struct EpochRecord {
  std::size_t epoch = 0;
  /// Batch-size weighted means over the epoch.
  LossBreakdown terms;
  double train_error = 0.0;
  /// Negative when no test set was given or the epoch was not evaluated.
  double test_error = -1.0;
  std::vector<double> per_layer_sparsity;
  double r_s = 1.0;
  std::size_t kept_weights = 0;
  bool evaluated = false;
};

struct TrainSession {
  Manifest config;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> records;
  /// Wall-clock seconds per epoch. Kept out of the replayable log.
  std::vector<double> epoch_seconds;

  /// One JSON object per line: a config line, then one line per epoch.
  std::string to_jsonl() const;
  std::string timing_jsonl() const;
};

/// Inputs borrowed for one training run.
struct StudentData {
  const Dataset* train = nullptr;
  /// Logit rows aligned with train; required when λ_T > 0.
  const LogitCache* teacher_logits = nullptr;
  /// Teacher weights; required by the block-sparse term.
  const DenseMLP* teacher = nullptr;
  /// Optional held-out set for per-epoch test error.
  const Dataset* test = nullptr;
};

struct StepInfo {
  std::size_t epoch;
  std::size_t batch;
  const LossBreakdown& terms;
};
using StepObserver = std::function<void(const StepInfo&)>;
using EpochObserver = std::function<void(const EpochRecord&, double seconds)>;

struct StudentRun {
  std::vector<VariationalDenseLayer> layers;
  TrainSession session;
};

/// Mini-batch Adam on θ, log σ² and biases. Throws TrainingError with epoch
/// and batch indices if the loss stops being finite.
StudentRun train_student(const StudentData& data, const StudentConfig& config,
                         const EpochObserver& on_epoch = {}, const StepObserver& on_step = {});

struct SweepRow {
  std::size_t size = 0;
  std::uint64_t seed = 0;
  bool hint = false;
  double test_error = 0.0;
  double r_s = 1.0;
};

struct SweepSummary {
  std::size_t size = 0;
  bool hint = false;
  std::size_t runs = 0;
  double mean_error = 0.0;
  /// Sample standard deviation; 0 for a single run.
  double std_error = 0.0;
};

/// Trains hint-on (config as given) and hint-off (λ_T = 0) students on a
/// stratified subset for every (size, seed) pair. Rows come out ordered by
/// size, then seed, hint-on before hint-off.
std::vector<SweepRow> lowdata_sweep(const Dataset& train, const LogitCache& cache,
                                    const DenseMLP* teacher, const Dataset& test,
                                    const StudentConfig& config,
                                    std::span<const std::size_t> sizes,
                                    std::span<const std::uint64_t> seeds,
                                    const std::function<void(const SweepRow&)>& on_row = {});

std::vector<SweepSummary> summarize(std::span<const SweepRow> rows);

}  // namespace vstudent
