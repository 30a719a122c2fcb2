#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vstudent/tensor.hpp"
#include "vstudent/variational.hpp"

namespace vstudent {

/// Storage widths assumed by the footprint accounting.
inline constexpr std::size_t kValueBytes = 4;
inline constexpr std::size_t kIndexBytes = 4;

struct SparsityStats {
  /// Percentage of zero weights per layer; biases are not counted.
  std::vector<double> per_layer_pct;
  /// |W| / |W≠0|, +inf when every weight is zero.
  double r_s = 1.0;
  std::size_t total_weights = 0;
  std::size_t nonzero_weights = 0;
};

/// Works on already-masked weight matrices. Emits a warning on std::clog when
/// nothing survives.
SparsityStats sparsity_ratio(std::span<const Matrix> masked_weights);

/// p_before / p_after. Throws DomainError for a zero count.
double compression_ratio(std::size_t teacher_params, std::size_t student_params);

std::size_t count_nonzero(const Matrix& m);
/// nnz·(value + index bytes) + (rows + 1)·index bytes.
std::size_t csr_bytes(const Matrix& masked_weights);
std::size_t dense_bytes(std::size_t values);

struct Footprint {
  /// Σ min(dense, CSR) over weight matrices plus dense biases.
  std::size_t stored_bytes = 0;
  /// Everything stored dense.
  std::size_t dense_bytes = 0;
  /// Layers where CSR would have been larger than dense storage.
  std::vector<bool> dense_fallback;
};

Footprint student_footprint(std::span<const Matrix> masked_weights, std::size_t bias_count);

/// Median seconds of `repetitions` deterministic forward passes after three
/// discarded warm-up calls. An empty mask span means unmasked.
double inference_time(std::span<const VariationalDenseLayer> layers,
                      std::span<const PruneMask> masks, const Matrix& batch,
                      std::size_t repetitions);

/// One evaluated network. Field names match the JSON rendering.
struct SparsityReport {
  std::string network;
  std::string variant;
  std::string architecture;
  double test_error_pct = 0.0;
  std::vector<double> per_layer_sparsity;
  double r_s = 1.0;
  double r_c = 1.0;
  std::size_t parameters = 0;
  std::size_t teacher_parameters = 0;
  std::size_t dense_bytes = 0;
  std::size_t teacher_dense_bytes = 0;
  std::size_t csr_bytes = 0;
  double footprint_compression = 1.0;
  double inference_ms = 0.0;
  double inference_ms_unmasked = 0.0;
  double threshold = kDefaultPruneThreshold;
  /// Resolved run configuration, echoed verbatim.
  std::vector<std::pair<std::string, std::string>> config;
};

enum class ReportFormat { json, markdown, csv };
ReportFormat parse_report_format(const std::string& text);

/// Stable sort key: network, test_error_pct, r_s, r_c or footprint_compression.
void sort_reports(std::vector<SparsityReport>& reports, const std::string& key);

std::string report_to_json(const SparsityReport& report);
SparsityReport report_from_json(const std::string& text);

/// Renders reports as given. Throws UsageError when there are none.
std::string emit_report(std::span<const SparsityReport> reports, ReportFormat format);

/// Assembles a report for a trained student at threshold τ. The test error
/// is passed in as a fraction. timing_repetitions = 0 skips the timing.
SparsityReport make_report(std::span<const VariationalDenseLayer> layers, double threshold,
                           double test_error, std::size_t teacher_parameters,
                           const std::string& variant,
                           std::vector<std::pair<std::string, std::string>> config,
                           const Matrix& timing_batch, std::size_t timing_repetitions);

/// Network label such as "S1-KD-SVD" from an architecture and variant name.
std::string network_label(const std::string& architecture, const std::string& variant);

}  // namespace vstudent
