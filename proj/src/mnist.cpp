#include "vstudent/mnist.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vstudent/errors.hpp"

namespace vstudent {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw LengthError(path.string() + ": header truncated at byte " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_magic(std::uint32_t found, std::uint32_t expected, const std::filesystem::path& path) {
  if (found != expected) {
    std::ostringstream msg;
    msg << path.string() << ": bad IDX magic, expected " << expected << " (0x" << std::hex
        << expected << ") but found " << std::dec << found << " (0x" << std::hex << found << ")";
    throw FormatError(msg.str());
  }
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), bytes.size());
}

}  // namespace

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = gather_rows(images, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (images.rows() != labels.size()) {
    throw ConsistencyError("dataset has " + std::to_string(images.rows()) + " images but " +
                           std::to_string(labels.size()) + " labels");
  }
  for (double p : images.data())
    if (!(p >= 0.0 && p <= 1.0)) throw ConsistencyError("pixel outside [0, 1]");
  for (auto y : labels)
    if (y >= kNumClasses) throw ConsistencyError("label " + std::to_string(y) + " out of range");
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  check_magic(read_be32(image_bytes, 0, images_path), kIdxImagesMagic, images_path);
  const std::size_t n = read_be32(image_bytes, 4, images_path);
  const std::size_t rows = read_be32(image_bytes, 8, images_path);
  const std::size_t cols = read_be32(image_bytes, 12, images_path);
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + n * pixels) {
    throw LengthError(images_path.string() + ": payload has " +
                      std::to_string(image_bytes.size() - 16) + " bytes, header promises " +
                      std::to_string(n * pixels));
  }

  const auto label_bytes = read_file(labels_path);
  check_magic(read_be32(label_bytes, 0, labels_path), kIdxLabelsMagic, labels_path);
  const std::size_t n_labels = read_be32(label_bytes, 4, labels_path);
  if (label_bytes.size() < 8 + n_labels) {
    throw LengthError(labels_path.string() + ": payload has " +
                      std::to_string(label_bytes.size() - 8) + " bytes, header promises " +
                      std::to_string(n_labels));
  }
  if (n_labels != n) {
    throw ConsistencyError("image count " + std::to_string(n) + " does not match label count " +
                           std::to_string(n_labels));
  }

  Dataset ds;
  ds.images = Matrix(n, pixels);
  auto dst = ds.images.data();
  for (std::size_t i = 0; i < n * pixels; ++i) dst[i] = image_bytes[16 + i] / 255.0;
  ds.labels.assign(label_bytes.begin() + 8, label_bytes.begin() + 8 + static_cast<long>(n));
  for (auto y : ds.labels) {
    if (y >= kNumClasses) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(y) + " out of range");
    }
  }
  return ds;
}

void write_idx(const Dataset& ds, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (image_rows * image_cols != ds.features()) {
    throw ShapeError("write_idx: image shape does not match feature count");
  }
  std::ofstream images(images_path, std::ios::binary | std::ios::trunc);
  if (!images) throw FormatError("cannot write " + images_path.string());
  put_be32(images, kIdxImagesMagic);
  put_be32(images, static_cast<std::uint32_t>(ds.size()));
  put_be32(images, static_cast<std::uint32_t>(image_rows));
  put_be32(images, static_cast<std::uint32_t>(image_cols));
  std::vector<char> pixels(ds.images.size());
  const auto src = ds.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(src[i] * 255.0)));
  images.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));

  std::ofstream labels(labels_path, std::ios::binary | std::ios::trunc);
  if (!labels) throw FormatError("cannot write " + labels_path.string());
  put_be32(labels, kIdxLabelsMagic);
  put_be32(labels, static_cast<std::uint32_t>(ds.size()));
  labels.write(reinterpret_cast<const char*>(ds.labels.data()),
               static_cast<std::streamsize>(ds.labels.size()));
}

MnistSplit load_mnist_dir(const std::filesystem::path& dir) {
  return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

void shuffle_indices(std::vector<std::size_t>& indices, RngStream& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const std::size_t j = rng.next_index(i);
    std::swap(indices[i - 1], indices[j]);
  }
}

std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const std::size_t total = ds.size();
  if (n < 1 || n > total) {
    throw DomainError("subset size " + std::to_string(n) + " outside [1, " +
                      std::to_string(total) + "]");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < total; ++i) by_class[ds.labels[i]].push_back(i);

  std::array<std::size_t, kNumClasses> quota{};
  std::array<double, kNumClasses> remainder{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double exact = static_cast<double>(n) * by_class[c].size() / total;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - quota[c];
    assigned += quota[c];
  }
  std::array<std::size_t, kNumClasses> order{};
  for (std::size_t c = 0; c < kNumClasses; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % kNumClasses) {
    const std::size_t c = order[k];
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  RngStream rng(seed, 0x50B5E7u);
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    RngStream class_rng = rng.split(c);
    auto pool = by_class[c];
    shuffle_indices(pool, class_rng);
    picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<long>(quota[c]));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const auto indices = subset_indices(ds, n, seed);
  return ds.select(indices);
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : batch_size_(batch_size), order_(dataset_size) {
  if (batch_size == 0) throw DomainError("batch size must be at least 1");
  for (std::size_t i = 0; i < dataset_size; ++i) order_[i] = i;
  if (shuffle_seed) {
    RngStream rng(*shuffle_seed, 0xB);
    shuffle_indices(order_, rng);
  }
}

std::size_t BatchIterator::batch_count() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::span<const std::size_t> BatchIterator::batch(std::size_t i) const {
  const std::size_t begin = i * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  return std::span<const std::size_t>(order_).subspan(begin, end - begin);
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m.rows()) throw DomainError("row index out of range");
    const auto src = m.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.images = gather_rows(ds.images, indices);
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) b.labels.push_back(ds.labels[i]);
  return b;
}

}  // namespace vstudent
