#include "vstudent/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vstudent/errors.hpp"

namespace vstudent {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

ConstMap view(const Matrix& m) {
  return ConstMap(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

MutMap view(Matrix& m) {
  return MutMap(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void shape_mismatch(const char* what, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(mix64(seed ^ mix64(stream_id + kGolden))) {}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::next_uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t RngStream::next_index(std::uint64_t n) {
  if (n == 0) throw DomainError("next_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

RngStream RngStream::split(std::uint64_t child_id) const {
  RngStream child(0);
  child.key_ = mix64(key_ ^ mix64(child_id * kGolden + 0x632BE59BD9B4E019ULL));
  return child;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_mismatch("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  if (a.rows() == 0) return out;
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_mismatch("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

Matrix apply(UnaryOp op, const Matrix& a) {
  Matrix out = a;
  auto d = out.data();
  switch (op) {
    case UnaryOp::square:
      for (double& x : d) x *= x;
      break;
    case UnaryOp::sqrt:
      for (double& x : d) {
        if (!(x >= 0.0)) throw DomainError("sqrt of negative entry " + std::to_string(x));
        x = std::sqrt(x);
      }
      break;
    case UnaryOp::exp:
      for (double& x : d) x = std::exp(x);
      break;
    case UnaryOp::log:
      for (double& x : d) {
        if (!(x > 0.0)) throw DomainError("log of non-positive entry " + std::to_string(x));
        x = std::log(x);
      }
      break;
    case UnaryOp::sigmoid:
      for (double& x : d) x = stable_sigmoid(x);
      break;
    case UnaryOp::relu:
      for (double& x : d) x = x > 0.0 ? x : 0.0;
      break;
  }
  return out;
}

Matrix apply(BinaryOp op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_mismatch("elementwise", a, b);
  Matrix out = a;
  auto d = out.data();
  auto e = b.data();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += e[i];
      break;
    case BinaryOp::subtract:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
      break;
    case BinaryOp::multiply:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= e[i];
      break;
  }
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix out = a;
  for (double& x : out.data()) x *= factor;
  return out;
}

Matrix add_row(const Matrix& m, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) shape_mismatch("add_row", m, row);
  Matrix out = m;
  const auto b = row.data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += b[c];
  }
  return out;
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  auto dst = out.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  return out;
}

double sum(const Matrix& m) {
  double total = 0.0;
  for (double x : m.data()) total += x;
  return total;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double x) { return std::isfinite(x); });
}

Matrix row_log_softmax(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw DomainError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto src = logits.row(r);
    auto dst = out.row(r);
    double peak = -INFINITY;
    for (double z : src) peak = std::max(peak, z / temperature);
    double total = 0.0;
    for (std::size_t c = 0; c < src.size(); ++c) {
      dst[c] = src[c] / temperature - peak;
      total += std::exp(dst[c]);
    }
    const double log_total = std::log(total);
    for (double& x : dst) x -= log_total;
  }
  return out;
}

Matrix row_softmax(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw DomainError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto src = logits.row(r);
    auto dst = out.row(r);
    double peak = -INFINITY;
    for (double z : src) peak = std::max(peak, z / temperature);
    double total = 0.0;
    for (std::size_t c = 0; c < src.size(); ++c) {
      dst[c] = std::exp(src[c] / temperature - peak);
      total += dst[c];
    }
    for (double& x : dst) x /= total;
  }
  return out;
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < src.size(); ++c)
      if (src[c] > src[best]) best = c;
    out[r] = best;
  }
  return out;
}

Matrix gaussian_sample(RngStream& rng, std::size_t rows, std::size_t cols) {
  Matrix out(rows, cols);
  for (double& x : out.data()) x = rng.next_gaussian();
  return out;
}

}  // namespace vstudent
