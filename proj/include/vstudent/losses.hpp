#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vstudent/autograd.hpp"
#include "vstudent/teacher.hpp"
#include "vstudent/tensor.hpp"
#include "vstudent/variational.hpp"

namespace vstudent {

enum class KlVariant { none, svd, vbd };
enum class BsrVariant { none, l1_linf, l1_l2, l1_lq };
/// Which way round the softened distributions enter the hint KL.
enum class HintDirection { student_teacher, teacher_student };

std::string to_string(KlVariant v);
std::string to_string(BsrVariant v);
std::string to_string(HintDirection d);
KlVariant parse_kl_variant(const std::string& text);
BsrVariant parse_bsr_variant(const std::string& text);
HintDirection parse_hint_direction(const std::string& text);

struct LossConfig {
  double temperature = 2.0;
  double lambda_t = 2.0;
  /// Unset means 1 / (training set size), resolved by the trainer.
  std::optional<double> lambda_v_max;
  double lambda_g = 0.01;
  KlVariant kl = KlVariant::svd;
  BsrVariant bsr = BsrVariant::none;
  /// Exponent for l1_lq; +inf selects the max-abs norm.
  double q = 2.0;
  std::size_t warmup_epochs = 10;
  HintDirection hint_direction = HintDirection::student_teacher;

  /// Throws DomainError on a non-positive temperature, negative weights or q < 1.
  void validate() const;
  /// Exponent actually used by the block-sparse term.
  double effective_q() const;
};

/// -(1/N) Σ log softmax(logits_n)[y_n].
double cross_entropy(const Matrix& logits, std::span<const std::uint8_t> labels);
/// 2T² · mean over rows of KL(softmax(z_s/T) ‖ softmax(z_t/T)).
double hint_loss(const Matrix& student_logits, const Matrix& teacher_logits, double temperature,
                 HintDirection direction = HintDirection::student_teacher);

ad::Var cross_entropy(ad::Var logits, std::span<const std::uint8_t> labels);
ad::Var hint_loss(ad::Var student_logits, const Matrix& teacher_logits, double temperature,
                  HintDirection direction = HintDirection::student_teacher);

enum class SliceSource { teacher, student };

struct ConcatSlice {
  SliceSource source;
  std::size_t layer;
  Matrix weights;
};

/// Teacher and student weight matrices stacked along a layer axis and
/// zero-padded to a common M×N. Padding is implicit: at() returns 0 outside a
/// slice's own extent.
class ConcatTensor {
 public:
  explicit ConcatTensor(std::vector<ConcatSlice> slices);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t depth() const noexcept { return slices_.size(); }
  double at(std::size_t m, std::size_t n, std::size_t l) const;
  const std::vector<ConcatSlice>& slices() const noexcept { return slices_; }

  /// Same entries in a larger M×N frame.
  ConcatTensor padded(std::size_t height, std::size_t width) const;

 private:
  std::vector<ConcatSlice> slices_;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
};

/// Teacher slices first, then the student's θ means.
ConcatTensor concat_weights(const DenseMLP& teacher,
                            std::span<const VariationalDenseLayer> student);

/// Σ_m (Σ_{n,l} |w_mnl|^q)^{1/q}; with q = +inf, Σ_m max_{n,l} |w_mnl|. Zero for none.
double bsr(const ConcatTensor& tensor, BsrVariant variant, double q = 2.0);
double bsr_exponent(BsrVariant variant, double q);

/// Block-sparse penalty over the teacher/student stack for training. The
/// teacher's per-row contributions are computed once; gradients flow only into
/// student θ.
class BlockSparseTerm {
 public:
  BlockSparseTerm(const DenseMLP& teacher, BsrVariant variant, double q);

  double value(std::span<const Matrix> student_theta) const;
  ad::Var operator()(std::span<const ad::Var> student_theta) const;

  std::span<const double> teacher_row_stats() const noexcept { return teacher_rows_; }

 private:
  std::vector<double> student_row_stats(std::span<const Matrix> student_theta,
                                        std::size_t rows) const;
  double combine(std::span<const double> student_rows, std::vector<double>* row_norms) const;

  double q_;
  std::vector<double> teacher_rows_;  // Σ|w|^q or max|w| per row
};

/// min(1, epoch / warmup_epochs); 1 when warmup_epochs is 0.
double warmup_scale(std::size_t epoch, std::size_t warmup_epochs);

struct LossBreakdown {
  double cross_entropy = 0.0;
  double hint = 0.0;
  double kl = 0.0;
  double bsr = 0.0;
  double lambda_t = 0.0;
  double lambda_v = 0.0;
  double lambda_g = 0.0;
  double total = 0.0;
};

struct LossGraph {
  ad::Var total;
  ad::Var logits;
  LossBreakdown breakdown;
};

/// Everything total_loss needs besides the student parameters.
struct LossInputs {
  const Matrix* batch = nullptr;
  std::span<const std::uint8_t> labels;
  /// Rows of the logit cache for this batch; may be null when λ_T = 0.
  const Matrix* teacher_logits = nullptr;
  /// Required when the configured BSR variant is not none.
  const BlockSparseTerm* block_sparse = nullptr;
};

/// Records L_S + λ_T·L_H + λ_V·L_KL + λ_g·R_g on the tape. λ_V is the
/// already-warmed-up weight. Terms with zero weight are skipped.
LossGraph build_total_loss(std::span<const LayerVars> student, const LossInputs& inputs,
                           const LossConfig& config, double lambda_v, RngStream& rng,
                           ForwardMode mode);

/// Value-only evaluation at a given epoch; λ_V = λ_V_max · warmup_scale.
LossBreakdown total_loss(std::span<const VariationalDenseLayer> student, const LossInputs& inputs,
                         const LossConfig& config, std::size_t epoch, RngStream rng,
                         ForwardMode mode = ForwardMode::train);

}  // namespace vstudent
