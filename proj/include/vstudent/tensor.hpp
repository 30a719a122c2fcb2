#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vstudent {

/// Dense row-major matrix of doubles. Every numeric quantity in the library
/// (inputs, weights, activations, logits, gradients) is carried in one.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Counter-based pseudo-random stream. Output n of a stream is a pure function
/// of (key, n), so a stream can be reproduced anywhere from its seed, and
/// child streams split off by id are independent of how far the parent has
/// advanced.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double next_uniform();
  double next_gaussian();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t next_index(std::uint64_t n);

  RngStream split(std::uint64_t child_id) const;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class UnaryOp { square, sqrt, exp, log, sigmoid, relu };
enum class BinaryOp { add, subtract, multiply };

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix apply(UnaryOp op, const Matrix& a);
Matrix apply(BinaryOp op, const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);

/// Adds a 1×cols row to every row of m.
Matrix add_row(const Matrix& m, const Matrix& row);
/// Column sums as a 1×cols row.
Matrix column_sums(const Matrix& m);
double sum(const Matrix& m);
bool all_finite(const Matrix& m);

/// Row-wise softmax of logits / temperature with max-subtraction.
Matrix row_softmax(const Matrix& logits, double temperature = 1.0);
Matrix row_log_softmax(const Matrix& logits, double temperature = 1.0);

/// Column of the maximum in each row; ties go to the lowest column.
std::vector<std::size_t> row_argmax(const Matrix& m);

Matrix gaussian_sample(RngStream& rng, std::size_t rows, std::size_t cols);

}  // namespace vstudent
