#include "vstudent/teacher.hpp"

#include <chrono>
#include <cmath>

#include "vstudent/autograd.hpp"
#include "vstudent/errors.hpp"
#include "vstudent/losses.hpp"
#include "vstudent/optim.hpp"

namespace vstudent {

namespace {

constexpr std::size_t kForwardChunk = 2000;

std::size_t count_errors(const Matrix& logits, std::span<const std::uint8_t> labels) {
  const auto predicted = row_argmax(logits);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != labels[i];
  return wrong;
}

}  // namespace

Architecture parse_architecture(const std::string& text) {
  Architecture arch;
  std::size_t start = 0;
  while (true) {
    const auto dash = text.find('-', start);
    const std::string field = text.substr(start, dash == std::string::npos ? std::string::npos : dash - start);
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("malformed architecture '" + text + "': expected widths like 784-500-50-10");
    }
    const auto width = std::stoull(field);
    if (width == 0) throw UsageError("malformed architecture '" + text + "': widths must be >= 1");
    arch.push_back(width);
    if (dash == std::string::npos) break;
    start = dash + 1;
  }
  if (arch.size() < 2) {
    throw UsageError("malformed architecture '" + text + "': need an input and an output width");
  }
  return arch;
}

std::string format_architecture(const Architecture& arch) {
  std::string out;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(arch[i]);
  }
  return out;
}

std::size_t count_parameters(const Architecture& arch) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) total += arch[l] * arch[l + 1] + arch[l + 1];
  return total;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
  }
  return "?";
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::relu;
  throw FormatError("unknown activation '" + text + "'");
}

Architecture DenseMLP::architecture() const {
  Architecture arch;
  if (layers.empty()) return arch;
  arch.push_back(layers.front().weight.rows());
  for (const auto& l : layers) arch.push_back(l.weight.cols());
  return arch;
}

void DenseMLP::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols()) {
      throw ShapeError("layer " + std::to_string(l) + ": bias " + layer.bias.shape_string() +
                       " does not match weight " + layer.weight.shape_string());
    }
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows()) {
      throw ShapeError("layer " + std::to_string(l) + " input width " +
                       std::to_string(layer.weight.rows()) + " does not chain with previous output " +
                       std::to_string(layers[l - 1].weight.cols()));
    }
  }
}

std::vector<Matrix> init_weights(const Architecture& arch, std::uint64_t seed) {
  if (arch.size() < 2) throw ShapeError("architecture needs at least two widths");
  RngStream root(seed, 0x1417u);
  std::vector<Matrix> weights;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    RngStream rng = root.split(l);
    weights.push_back(he_uniform(arch[l], arch[l + 1], rng));
  }
  return weights;
}

DenseMLP init_dense_mlp(const Architecture& arch, std::uint64_t seed) {
  DenseMLP net;
  net.seed = seed;
  auto weights = init_weights(arch, seed);
  for (auto& w : weights) {
    const std::size_t h = w.cols();
    net.layers.push_back({std::move(w), Matrix(1, h)});
  }
  return net;
}

Matrix forward_logits(const DenseMLP& net, const Matrix& batch) {
  net.validate();
  if (batch.cols() != net.layers.front().weight.rows()) {
    throw ShapeError("forward_logits: batch " + batch.shape_string() + " for input width " +
                     std::to_string(net.layers.front().weight.rows()));
  }
  Matrix h = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    h = add_row(matmul(h, net.layers[l].weight), net.layers[l].bias);
    if (l + 1 < net.layers.size()) h = apply(UnaryOp::relu, h);
  }
  return h;
}

std::size_t count_parameters(const DenseMLP& net) {
  std::size_t total = 0;
  for (const auto& l : net.layers) total += l.weight.size() + l.bias.size();
  return total;
}

double classification_error(const DenseMLP& net, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += kForwardChunk) {
    const std::size_t end = std::min(ds.size(), begin + kForwardChunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Batch b = gather_batch(ds, idx);
    wrong += count_errors(forward_logits(net, b.images), b.labels);
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

DenseMLP train_teacher(const Dataset& ds, const TeacherConfig& config,
                       const TeacherObserver& observer) {
  ds.validate();
  if (ds.size() == 0) throw DomainError("train_teacher: empty dataset");
  if (config.architecture.front() != ds.features()) {
    throw ShapeError("architecture input width " + std::to_string(config.architecture.front()) +
                     " does not match " + std::to_string(ds.features()) + " features");
  }
  DenseMLP net = init_dense_mlp(config.architecture, config.seed);
  AdamState adam;
  adam.options.learning_rate = config.learning_rate;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    BatchIterator batches(ds.size(), config.batch_size, epoch_shuffle_seed(config.seed, epoch));
    double loss_sum = 0.0;
    std::size_t wrong = 0;
    for (std::size_t bi = 0; bi < batches.batch_count(); ++bi) {
      const Batch b = gather_batch(ds, batches.batch(bi));
      ad::Tape tape;
      std::vector<ad::Var> weights;
      std::vector<ad::Var> biases;
      ad::Var h = tape.constant(b.images);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        weights.push_back(tape.variable(net.layers[l].weight));
        biases.push_back(tape.variable(net.layers[l].bias));
        h = ad::add_row(ad::matmul(h, weights.back()), biases.back());
        if (l + 1 < net.layers.size()) h = ad::relu(h);
      }
      ad::Var loss = cross_entropy(h, b.labels);
      const double value = ad::scalar(loss);
      if (!std::isfinite(value)) {
        throw TrainingError("teacher loss became non-finite in epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi));
      }
      loss_sum += value * static_cast<double>(b.labels.size());
      wrong += count_errors(h.value(), b.labels);
      tape.backward(loss);

      std::vector<Matrix> grads;
      grads.reserve(2 * net.layers.size());
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        grads.push_back(tape.grad(weights[l]));
        grads.push_back(tape.grad(biases[l]));
      }
      std::vector<ParamSlot> slots;
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        slots.push_back({"layer" + std::to_string(l) + ".weight", &net.layers[l].weight, &grads[2 * l]});
        slots.push_back({"layer" + std::to_string(l) + ".bias", &net.layers[l].bias, &grads[2 * l + 1]});
      }
      try {
        adam_step(adam, slots);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
      }
    }
    TeacherEpoch record;
    record.epoch = epoch;
    record.mean_loss = loss_sum / static_cast<double>(ds.size());
    record.running_train_error = static_cast<double>(wrong) / static_cast<double>(ds.size());
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (observer) observer(record, net);
  }
  return net;
}

std::vector<double> flatten_parameters(const DenseMLP& net) {
  std::vector<double> values;
  values.reserve(count_parameters(net));
  for (const auto& l : net.layers) {
    values.insert(values.end(), l.weight.data().begin(), l.weight.data().end());
    values.insert(values.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return values;
}

std::string checkpoint_digest(const DenseMLP& net) { return payload_digest(flatten_parameters(net)); }

void save_checkpoint(const DenseMLP& net, const std::filesystem::path& stem, const Manifest& extra) {
  net.validate();
  const auto values = flatten_parameters(net);
  Manifest m;
  m.set("format", "vstudent-dense-v1");
  m.set("architecture", format_architecture(net.architecture()));
  m.set("activation", to_string(net.activation));
  m.set("seed", std::to_string(net.seed));
  m.set("payload_values", std::to_string(values.size()));
  m.set("digest", payload_digest(values));
  for (const auto& [k, v] : extra.entries()) m.set(k, v);
  write_payload(payload_path(stem), values);
  write_manifest(manifest_path(stem), m);
}

DenseMLP load_checkpoint(const std::filesystem::path& stem) {
  const Manifest m = read_manifest(manifest_path(stem));
  if (m.at("format") != "vstudent-dense-v1") {
    throw FormatError(manifest_path(stem).string() + ": unexpected format '" + m.at("format") + "'");
  }
  Architecture arch;
  try {
    arch = parse_architecture(m.at("architecture"));
  } catch (const UsageError& e) {
    throw FormatError(manifest_path(stem).string() + ": " + e.what());
  }
  const std::size_t declared = parse_count(m.at("payload_values"), "payload_values");
  if (declared != count_parameters(arch)) {
    throw ConsistencyError(manifest_path(stem).string() + ": architecture " + m.at("architecture") +
                           " implies " + std::to_string(count_parameters(arch)) +
                           " values, manifest declares " + std::to_string(declared));
  }
  const auto values = read_payload(payload_path(stem), declared);
  if (payload_digest(values) != m.at("digest")) {
    throw FormatError(payload_path(stem).string() + ": payload digest does not match manifest");
  }
  DenseMLP net;
  net.activation = parse_activation(m.at("activation"));
  net.seed = parse_count(m.at("seed"), "seed");
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const std::size_t k = arch[l];
    const std::size_t h = arch[l + 1];
    auto at = values.begin() + static_cast<long>(pos);
    Matrix w(k, h, std::vector<double>(at, at + static_cast<long>(k * h)));
    at += static_cast<long>(k * h);
    Matrix b(1, h, std::vector<double>(at, at + static_cast<long>(h)));
    pos += k * h + h;
    net.layers.push_back({std::move(w), std::move(b)});
  }
  return net;
}

LogitCache LogitCache::select(std::span<const std::size_t> indices) const {
  return {gather_rows(logits, indices), source_digest};
}

LogitCache precompute_logits(const DenseMLP& net, const Dataset& ds) {
  LogitCache cache;
  cache.source_digest = checkpoint_digest(net);
  const std::size_t classes = net.layers.back().weight.cols();
  cache.logits = Matrix(ds.size(), classes);
  for (std::size_t begin = 0; begin < ds.size(); begin += kForwardChunk) {
    const std::size_t end = std::min(ds.size(), begin + kForwardChunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Matrix part = forward_logits(net, gather_rows(ds.images, idx));
    std::copy(part.data().begin(), part.data().end(), cache.logits.row(begin).begin());
  }
  return cache;
}

void save_logit_cache(const LogitCache& cache, const std::filesystem::path& stem) {
  Manifest m;
  m.set("format", "vstudent-logits-v1");
  m.set("rows", std::to_string(cache.logits.rows()));
  m.set("cols", std::to_string(cache.logits.cols()));
  m.set("source_digest", cache.source_digest);
  m.set("digest", payload_digest(cache.logits.data()));
  write_payload(payload_path(stem), cache.logits.data());
  write_manifest(manifest_path(stem), m);
}

LogitCache load_logit_cache(const std::filesystem::path& stem, const std::string& expected_digest) {
  const Manifest m = read_manifest(manifest_path(stem));
  if (m.at("format") != "vstudent-logits-v1") {
    throw FormatError(manifest_path(stem).string() + ": unexpected format '" + m.at("format") + "'");
  }
  if (m.at("source_digest") != expected_digest) {
    throw StalenessError(manifest_path(stem).string() + ": cache was computed from teacher " +
                         m.at("source_digest") + " but the current teacher is " + expected_digest);
  }
  const std::size_t rows = parse_count(m.at("rows"), "rows");
  const std::size_t cols = parse_count(m.at("cols"), "cols");
  auto values = read_payload(payload_path(stem), rows * cols);
  if (payload_digest(values) != m.at("digest")) {
    throw FormatError(payload_path(stem).string() + ": payload digest does not match manifest");
  }
  return {Matrix(rows, cols, std::move(values)), m.at("source_digest")};
}

}  // namespace vstudent
