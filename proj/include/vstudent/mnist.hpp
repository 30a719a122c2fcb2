#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "vstudent/tensor.hpp"

namespace vstudent {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::size_t kNumClasses = 10;

/// Images as an N×features matrix in [0, 1] plus one label per row.
struct Dataset {
  Matrix images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t features() const noexcept { return images.cols(); }

  /// Rows picked by index, in the order given.
  Dataset select(std::span<const std::size_t> indices) const;
  /// Checks the row/label count and value ranges; throws ConsistencyError.
  void validate() const;
};

/// Reads an IDX image/label file pair. Pixels are divided by 255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Writes a dataset back to IDX; pixels are rounded to the nearest byte.
void write_idx(const Dataset& ds, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct MnistSplit {
  Dataset train;
  Dataset test;
};

/// Loads the canonical train-/t10k- file pairs from a directory.
MnistSplit load_mnist_dir(const std::filesystem::path& dir);

/// Class-stratified sample of n rows without replacement. Per-class quotas use
/// largest remainders so they sum to n; indices come back ascending.
std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed);
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Fisher–Yates shuffle driven by an RngStream.
void shuffle_indices(std::vector<std::size_t>& indices, RngStream& rng);

/// One epoch of mini-batch index ranges. Without a seed the batches follow
/// stored order; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::size_t dataset_size, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed);

  std::size_t batch_count() const noexcept;
  std::span<const std::size_t> batch(std::size_t i) const;
  std::span<const std::size_t> order() const noexcept { return order_; }

 private:
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

struct Batch {
  Matrix images;
  std::vector<std::uint8_t> labels;
};

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> indices);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace vstudent
