#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "vstudent/mnist.hpp"
#include "vstudent/tensor.hpp"

namespace vstudent::test {

// Central differences of f with respect to every entry of param.
inline Matrix numeric_grad(const std::function<double()>& f, Matrix& param, double h = 1e-5) {
  Matrix g(param.rows(), param.cols(), 0.0);
  for (std::size_t r = 0; r < param.rows(); ++r) {
    for (std::size_t c = 0; c < param.cols(); ++c) {
      const double keep = param(r, c);
      param(r, c) = keep + h;
      const double up = f();
      param(r, c) = keep - h;
      const double down = f();
      param(r, c) = keep;
      g(r, c) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_rel_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed, 77);
  Matrix m(rows, cols, 0.0);
  for (auto& v : m.data()) v = scale * (2.0 * rng.next_uniform() - 1.0);
  return m;
}

// Uniform pixels with labels cycling through the classes.
inline Dataset synthetic_dataset(std::size_t n, std::size_t features, std::uint64_t seed) {
  Dataset ds;
  ds.images = Matrix(n, features, 0.0);
  RngStream rng(seed, 91);
  for (auto& v : ds.images.data()) v = rng.next_uniform();
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<std::uint8_t>(i % kNumClasses));
  return ds;
}

// Images whose class is readable from which block of pixels is bright, so
// small networks can learn them within a few epochs.
inline Dataset separable_dataset(std::size_t n, std::size_t features, std::uint64_t seed) {
  Dataset ds;
  ds.images = Matrix(n, features, 0.0);
  RngStream rng(seed, 92);
  const std::size_t block = features / kNumClasses;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint8_t>(rng.next_index(kNumClasses));
    ds.labels.push_back(label);
    for (std::size_t c = 0; c < features; ++c) {
      const bool lit = c / block == label;
      ds.images(i, c) = lit ? 0.6 + 0.4 * rng.next_uniform() : 0.3 * rng.next_uniform();
    }
  }
  return ds;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vstudent-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vstudent::test
