#include "vstudent/losses.hpp"

#include <algorithm>
#include <cmath>

#include "vstudent/errors.hpp"

namespace vstudent {

namespace {

void check_labels(const Matrix& logits, std::span<const std::uint8_t> labels) {
  if (logits.rows() != labels.size()) {
    throw ShapeError("cross_entropy: " + logits.shape_string() + " logits for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (logits.rows() == 0) throw ShapeError("cross_entropy: empty batch");
  for (auto y : labels) {
    if (y >= logits.cols()) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(logits.cols()) + ")");
    }
  }
}

void check_hint_shapes(const Matrix& zs, const Matrix& zt) {
  if (!zs.same_shape(zt)) {
    throw ShapeError("hint_loss: student logits " + zs.shape_string() + " vs teacher logits " +
                     zt.shape_string());
  }
  if (zs.rows() == 0) throw ShapeError("hint_loss: empty batch");
}

struct HintParts {
  Matrix p_student;
  Matrix p_teacher;
  std::vector<double> row_kl;
  double value = 0.0;
};

HintParts hint_parts(const Matrix& zs, const Matrix& zt, double temperature,
                     HintDirection direction) {
  check_hint_shapes(zs, zt);
  HintParts parts;
  const Matrix log_ps = row_log_softmax(zs, temperature);
  const Matrix log_pt = row_log_softmax(zt, temperature);
  parts.p_student = row_softmax(zs, temperature);
  parts.p_teacher = row_softmax(zt, temperature);
  const Matrix& p_from = direction == HintDirection::student_teacher ? parts.p_student : parts.p_teacher;
  const Matrix& log_from = direction == HintDirection::student_teacher ? log_ps : log_pt;
  const Matrix& log_to = direction == HintDirection::student_teacher ? log_pt : log_ps;
  parts.row_kl.assign(zs.rows(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < zs.rows(); ++r) {
    double kl = 0.0;
    for (std::size_t c = 0; c < zs.cols(); ++c) kl += p_from(r, c) * (log_from(r, c) - log_to(r, c));
    parts.row_kl[r] = kl;
    total += kl;
  }
  parts.value = 2.0 * temperature * temperature * total / static_cast<double>(zs.rows());
  return parts;
}

double abs_pow(double w, double q) {
  const double a = std::abs(w);
  if (q == 1.0) return a;
  if (q == 2.0) return a * a;
  return std::pow(a, q);
}

double sign(double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string to_string(KlVariant v) {
  switch (v) {
    case KlVariant::none: return "none";
    case KlVariant::svd: return "svd";
    case KlVariant::vbd: return "vbd";
  }
  return "?";
}

std::string to_string(BsrVariant v) {
  switch (v) {
    case BsrVariant::none: return "none";
    case BsrVariant::l1_linf: return "l1linf";
    case BsrVariant::l1_l2: return "l1l2";
    case BsrVariant::l1_lq: return "l1lq";
  }
  return "?";
}

std::string to_string(HintDirection d) {
  return d == HintDirection::student_teacher ? "student-teacher" : "teacher-student";
}

KlVariant parse_kl_variant(const std::string& text) {
  if (text == "none") return KlVariant::none;
  if (text == "svd") return KlVariant::svd;
  if (text == "vbd") return KlVariant::vbd;
  throw UsageError("unknown KL variant '" + text + "' (expected none, svd or vbd)");
}

BsrVariant parse_bsr_variant(const std::string& text) {
  if (text == "none") return BsrVariant::none;
  if (text == "l1linf") return BsrVariant::l1_linf;
  if (text == "l1l2") return BsrVariant::l1_l2;
  if (text == "l1lq") return BsrVariant::l1_lq;
  throw UsageError("unknown BSR variant '" + text + "' (expected none, l1linf, l1l2 or l1lq)");
}

HintDirection parse_hint_direction(const std::string& text) {
  if (text == "student-teacher") return HintDirection::student_teacher;
  if (text == "teacher-student") return HintDirection::teacher_student;
  throw UsageError("unknown hint direction '" + text +
                   "' (expected student-teacher or teacher-student)");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  if (!(lambda_t >= 0.0) || !(lambda_g >= 0.0) || (lambda_v_max && !(*lambda_v_max >= 0.0))) {
    throw DomainError("loss weights must be non-negative");
  }
  if (bsr == BsrVariant::l1_lq && !(q >= 1.0)) {
    throw DomainError("l1/lq needs q >= 1, got " + std::to_string(q));
  }
}

double LossConfig::effective_q() const { return bsr_exponent(bsr, q); }

double cross_entropy(const Matrix& logits, std::span<const std::uint8_t> labels) {
  check_labels(logits, labels);
  const Matrix log_p = row_log_softmax(logits);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) total -= log_p(r, labels[r]);
  return total / static_cast<double>(logits.rows());
}

double hint_loss(const Matrix& student_logits, const Matrix& teacher_logits, double temperature,
                 HintDirection direction) {
  return hint_parts(student_logits, teacher_logits, temperature, direction).value;
}

ad::Var cross_entropy(ad::Var logits, std::span<const std::uint8_t> labels) {
  const Matrix& z = logits.value();
  check_labels(z, labels);
  const Matrix log_p = row_log_softmax(z);
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) total -= log_p(r, labels[r]);
  const double n = static_cast<double>(z.rows());
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return logits.tape().record(
      Matrix(1, 1, total / n), {logits},
      [logits, y = std::move(y), n](ad::Tape& tape, const Matrix& g) {
        Matrix d = row_softmax(logits.value());
        for (std::size_t r = 0; r < d.rows(); ++r) d(r, y[r]) -= 1.0;
        const double factor = g(0, 0) / n;
        for (double& x : d.data()) x *= factor;
        tape.accumulate(logits, std::move(d));
      });
}

ad::Var hint_loss(ad::Var student_logits, const Matrix& teacher_logits, double temperature,
                  HintDirection direction) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  HintParts parts = hint_parts(student_logits.value(), teacher_logits, temperature, direction);
  const double value = parts.value;
  return student_logits.tape().record(
      Matrix(1, 1, value), {student_logits},
      [student_logits, parts = std::move(parts), temperature, direction](ad::Tape& tape,
                                                                         const Matrix& g) {
        const Matrix& ps = parts.p_student;
        const Matrix& pt = parts.p_teacher;
        Matrix d(ps.rows(), ps.cols());
        const double factor = g(0, 0) * 2.0 * temperature / static_cast<double>(ps.rows());
        for (std::size_t r = 0; r < ps.rows(); ++r) {
          for (std::size_t c = 0; c < ps.cols(); ++c) {
            if (direction == HintDirection::student_teacher) {
              const double log_ratio = std::log(ps(r, c)) - std::log(pt(r, c));
              d(r, c) = factor * ps(r, c) * (log_ratio - parts.row_kl[r]);
            } else {
              d(r, c) = factor * (ps(r, c) - pt(r, c));
            }
          }
        }
        tape.accumulate(student_logits, std::move(d));
      });
}

ConcatTensor::ConcatTensor(std::vector<ConcatSlice> slices) : slices_(std::move(slices)) {
  for (const auto& s : slices_) {
    height_ = std::max(height_, s.weights.rows());
    width_ = std::max(width_, s.weights.cols());
  }
}

double ConcatTensor::at(std::size_t m, std::size_t n, std::size_t l) const {
  if (m >= height_ || n >= width_ || l >= slices_.size()) {
    throw DomainError("ConcatTensor index out of range");
  }
  const Matrix& w = slices_[l].weights;
  if (m >= w.rows() || n >= w.cols()) return 0.0;
  return w(m, n);
}

ConcatTensor ConcatTensor::padded(std::size_t height, std::size_t width) const {
  if (height < height_ || width < width_) throw DomainError("padding cannot shrink the tensor");
  ConcatTensor out = *this;
  out.height_ = height;
  out.width_ = width;
  return out;
}

ConcatTensor concat_weights(const DenseMLP& teacher,
                            std::span<const VariationalDenseLayer> student) {
  if (teacher.layers.empty() || student.empty()) {
    throw ShapeError("concat_weights needs non-empty teacher and student");
  }
  std::vector<ConcatSlice> slices;
  for (std::size_t l = 0; l < teacher.layers.size(); ++l)
    slices.push_back({SliceSource::teacher, l, teacher.layers[l].weight});
  for (std::size_t l = 0; l < student.size(); ++l)
    slices.push_back({SliceSource::student, l, student[l].theta});
  return ConcatTensor(std::move(slices));
}

double bsr_exponent(BsrVariant variant, double q) {
  switch (variant) {
    case BsrVariant::l1_linf: return INFINITY;
    case BsrVariant::l1_l2: return 2.0;
    case BsrVariant::l1_lq:
      if (!(q >= 1.0)) throw DomainError("l1/lq needs q >= 1");
      return q;
    case BsrVariant::none: break;
  }
  throw DomainError("block-sparse variant 'none' has no exponent");
}

double bsr(const ConcatTensor& tensor, BsrVariant variant, double q) {
  if (variant == BsrVariant::none) return 0.0;
  const double p = bsr_exponent(variant, q);
  double total = 0.0;
  for (std::size_t m = 0; m < tensor.height(); ++m) {
    double acc = 0.0;
    for (const auto& s : tensor.slices()) {
      if (m >= s.weights.rows()) continue;
      for (double w : s.weights.row(m)) acc = std::isinf(p) ? std::max(acc, std::abs(w)) : acc + abs_pow(w, p);
    }
    total += std::isinf(p) ? acc : std::pow(acc, 1.0 / p);
  }
  return total;
}

BlockSparseTerm::BlockSparseTerm(const DenseMLP& teacher, BsrVariant variant, double q)
    : q_(bsr_exponent(variant, q)) {
  std::size_t rows = 0;
  for (const auto& l : teacher.layers) rows = std::max(rows, l.weight.rows());
  teacher_rows_.assign(rows, 0.0);
  for (const auto& l : teacher.layers) {
    for (std::size_t m = 0; m < l.weight.rows(); ++m) {
      for (double w : l.weight.row(m)) {
        if (std::isinf(q_)) teacher_rows_[m] = std::max(teacher_rows_[m], std::abs(w));
        else teacher_rows_[m] += abs_pow(w, q_);
      }
    }
  }
}

std::vector<double> BlockSparseTerm::student_row_stats(std::span<const Matrix> student_theta,
                                                       std::size_t rows) const {
  std::vector<double> stats(rows, 0.0);
  for (const auto& w : student_theta) {
    for (std::size_t m = 0; m < w.rows(); ++m) {
      for (double x : w.row(m)) {
        if (std::isinf(q_)) stats[m] = std::max(stats[m], std::abs(x));
        else stats[m] += abs_pow(x, q_);
      }
    }
  }
  return stats;
}

double BlockSparseTerm::combine(std::span<const double> student_rows,
                                std::vector<double>* row_norms) const {
  double total = 0.0;
  if (row_norms) row_norms->assign(student_rows.size(), 0.0);
  for (std::size_t m = 0; m < student_rows.size(); ++m) {
    const double t = m < teacher_rows_.size() ? teacher_rows_[m] : 0.0;
    const double r = std::isinf(q_) ? std::max(t, student_rows[m]) : std::pow(t + student_rows[m], 1.0 / q_);
    if (row_norms) (*row_norms)[m] = r;
    total += r;
  }
  return total;
}

double BlockSparseTerm::value(std::span<const Matrix> student_theta) const {
  std::size_t rows = teacher_rows_.size();
  for (const auto& w : student_theta) rows = std::max(rows, w.rows());
  return combine(student_row_stats(student_theta, rows), nullptr);
}

ad::Var BlockSparseTerm::operator()(std::span<const ad::Var> student_theta) const {
  if (student_theta.empty()) throw ShapeError("block-sparse term needs student weights");
  std::vector<Matrix> values;
  std::size_t rows = teacher_rows_.size();
  for (const auto& v : student_theta) {
    values.push_back(v.value());
    rows = std::max(rows, v.value().rows());
  }
  const auto stats = student_row_stats(values, rows);
  std::vector<double> norms;
  const double total = combine(stats, &norms);
  std::vector<ad::Var> parents(student_theta.begin(), student_theta.end());
  ad::Tape& tape = parents.front().tape();
  const double q = q_;
  std::vector<double> teacher_rows = teacher_rows_;
  return tape.record(
      Matrix(1, 1, total), parents,
      [parents, norms = std::move(norms), stats, teacher_rows = std::move(teacher_rows), q](
          ad::Tape& tp, const Matrix& g) {
        const double up = g(0, 0);
        if (std::isinf(q)) {
          // Subgradient goes to the first entry attaining the row maximum in
          // (slice, column) order, teacher slices first.
          std::vector<bool> claimed(stats.size(), false);
          for (std::size_t m = 0; m < stats.size(); ++m) {
            const double t = m < teacher_rows.size() ? teacher_rows[m] : 0.0;
            claimed[m] = !(stats[m] > t) || stats[m] == 0.0;
          }
          for (const auto& v : parents) {
            const Matrix& w = v.value();
            Matrix d(w.rows(), w.cols());
            for (std::size_t m = 0; m < w.rows(); ++m) {
              if (claimed[m]) continue;
              for (std::size_t n = 0; n < w.cols(); ++n) {
                if (std::abs(w(m, n)) == stats[m]) {
                  d(m, n) = up * sign(w(m, n));
                  claimed[m] = true;
                  break;
                }
              }
            }
            tp.accumulate(v, std::move(d));
          }
          return;
        }
        for (const auto& v : parents) {
          const Matrix& w = v.value();
          Matrix d(w.rows(), w.cols());
          for (std::size_t m = 0; m < w.rows(); ++m) {
            const double r = norms[m];
            if (r == 0.0) continue;
            const double inv = q == 2.0 ? 1.0 / r : std::pow(r, 1.0 - q);
            for (std::size_t n = 0; n < w.cols(); ++n) {
              const double x = w(m, n);
              if (q == 1.0) d(m, n) = up * sign(x);
              else if (q == 2.0) d(m, n) = up * x * inv;
              else d(m, n) = up * sign(x) * std::pow(std::abs(x), q - 1.0) * inv;
            }
          }
          tp.accumulate(v, std::move(d));
        }
      });
}

double warmup_scale(std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

LossGraph build_total_loss(std::span<const LayerVars> student, const LossInputs& inputs,
                           const LossConfig& config, double lambda_v, RngStream& rng,
                           ForwardMode mode) {
  config.validate();
  if (inputs.batch == nullptr) throw ShapeError("total_loss: missing batch");
  if (student.empty()) throw ShapeError("total_loss: student has no layers");
  ad::Tape& tape = student.front().theta.tape();

  LossGraph graph;
  LossBreakdown& b = graph.breakdown;
  b.lambda_t = config.lambda_t;
  b.lambda_v = lambda_v;
  b.lambda_g = config.lambda_g;

  graph.logits = student_logits(student, tape.constant(*inputs.batch), rng, mode);
  std::vector<ad::Var> terms{cross_entropy(graph.logits, inputs.labels)};
  std::vector<double> weights{1.0};
  b.cross_entropy = ad::scalar(terms.back());

  if (config.lambda_t > 0.0) {
    if (inputs.teacher_logits == nullptr) {
      throw ShapeError("total_loss: hint weight is set but no teacher logits were given");
    }
    terms.push_back(hint_loss(graph.logits, *inputs.teacher_logits, config.temperature,
                              config.hint_direction));
    weights.push_back(config.lambda_t);
    b.hint = ad::scalar(terms.back());
  } else if (inputs.teacher_logits != nullptr) {
    b.hint = hint_loss(graph.logits.value(), *inputs.teacher_logits, config.temperature,
                       config.hint_direction);
  }

  if (config.kl != KlVariant::none) {
    for (const auto& layer : student) {
      if (lambda_v > 0.0) {
        terms.push_back(config.kl == KlVariant::svd ? kl_svd(layer) : kl_vbd(layer));
        weights.push_back(lambda_v);
        b.kl += ad::scalar(terms.back());
      } else {
        VariationalDenseLayer snapshot{layer.theta.value(), layer.log_sigma2.value(),
                                       layer.bias.value()};
        b.kl += config.kl == KlVariant::svd ? kl_svd(snapshot) : kl_vbd(snapshot);
      }
    }
  }

  if (config.bsr != BsrVariant::none) {
    if (inputs.block_sparse == nullptr) {
      throw ShapeError("total_loss: block-sparse variant set but no teacher stack was given");
    }
    std::vector<ad::Var> thetas;
    for (const auto& layer : student) thetas.push_back(layer.theta);
    if (config.lambda_g > 0.0) {
      terms.push_back((*inputs.block_sparse)(thetas));
      weights.push_back(config.lambda_g);
      b.bsr = ad::scalar(terms.back());
    } else {
      std::vector<Matrix> values;
      for (const auto& t : thetas) values.push_back(t.value());
      b.bsr = inputs.block_sparse->value(values);
    }
  }

  graph.total = ad::weighted_sum(terms, weights);
  b.total = ad::scalar(graph.total);
  return graph;
}

LossBreakdown total_loss(std::span<const VariationalDenseLayer> student, const LossInputs& inputs,
                         const LossConfig& config, std::size_t epoch, RngStream rng,
                         ForwardMode mode) {
  const double lambda_v =
      config.lambda_v_max.value_or(0.0) * warmup_scale(epoch, config.warmup_epochs);
  ad::Tape tape;
  const auto vars = register_layers(tape, student, true);
  return build_total_loss(vars, inputs, config, lambda_v, rng, mode).breakdown;
}

}  // namespace vstudent
