#include "vstudent/variational.hpp"

#include <algorithm>
#include <cmath>

#include "vstudent/errors.hpp"

namespace vstudent {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double raw_log_alpha(double theta, double log_sigma2) {
  if (theta == 0.0) return INFINITY;
  return log_sigma2 - 2.0 * std::log(std::abs(theta));
}

double kl_svd_slope(double log_alpha) {
  const double s = sigmoid(kSvdK2 + kSvdK3 * log_alpha);
  return -kSvdK1 * kSvdK3 * s * (1.0 - s) - 0.5 * sigmoid(-log_alpha);
}

double kl_vbd_slope(double log_alpha) { return -0.5 * sigmoid(-log_alpha); }

template <double (*Penalty)(double)>
double kl_sum(const VariationalDenseLayer& layer) {
  layer.validate();
  const auto theta = layer.theta.data();
  const auto ls2 = layer.log_sigma2.data();
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i)
    total += Penalty(clamp_log_alpha(raw_log_alpha(theta[i], ls2[i])));
  return total;
}

template <double (*Penalty)(double), double (*Slope)(double)>
ad::Var kl_node(const LayerVars& layer) {
  ad::Tape& tape = layer.theta.tape();
  ad::Var theta = layer.theta;
  ad::Var ls2 = layer.log_sigma2;
  const auto t = theta.value().data();
  const auto s = ls2.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    total += Penalty(clamp_log_alpha(raw_log_alpha(t[i], s[i])));
  return tape.record(Matrix(1, 1, total), {theta, ls2},
                     [theta, ls2](ad::Tape& tp, const Matrix& g) {
                       const Matrix& tv = theta.value();
                       const Matrix& sv = ls2.value();
                       Matrix d_theta(tv.rows(), tv.cols());
                       Matrix d_ls2(tv.rows(), tv.cols());
                       const auto tt = tv.data();
                       const auto ss = sv.data();
                       auto dt = d_theta.data();
                       auto ds = d_ls2.data();
                       const double up = g(0, 0);
                       for (std::size_t i = 0; i < tt.size(); ++i) {
                         const double la = raw_log_alpha(tt[i], ss[i]);
                         if (!(la > -kLogAlphaClamp && la < kLogAlphaClamp)) continue;
                         const double slope = up * Slope(la);
                         ds[i] = slope;
                         dt[i] = -2.0 * slope / tt[i];
                       }
                       if (tp.requires_grad(theta)) tp.accumulate(theta, std::move(d_theta));
                       if (tp.requires_grad(ls2)) tp.accumulate(ls2, std::move(d_ls2));
                     });
}

void check_input(const Matrix& input, std::size_t expected) {
  if (input.cols() != expected) {
    throw ShapeError("layer expects " + std::to_string(expected) + " inputs, batch is " +
                     input.shape_string());
  }
}

}  // namespace

void VariationalDenseLayer::validate() const {
  if (!theta.same_shape(log_sigma2) || bias.rows() != 1 || bias.cols() != theta.cols()) {
    throw ShapeError("variational layer shapes disagree: theta " + theta.shape_string() +
                     ", log_sigma2 " + log_sigma2.shape_string() + ", bias " +
                     bias.shape_string());
  }
}

std::size_t PruneMask::kept() const {
  return static_cast<std::size_t>(
      std::count_if(keep.data().begin(), keep.data().end(), [](double x) { return x != 0.0; }));
}

std::vector<VariationalDenseLayer> init_student(const Architecture& arch, std::uint64_t seed,
                                                double log_sigma2) {
  std::vector<VariationalDenseLayer> layers;
  auto weights = init_weights(arch, seed);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const std::size_t k = weights[l].rows();
    const std::size_t h = weights[l].cols();
    layers.push_back({std::move(weights[l]), Matrix(k, h, log_sigma2), Matrix(1, h)});
  }
  return layers;
}

Matrix alpha_log(const VariationalDenseLayer& layer) {
  layer.validate();
  Matrix out(layer.theta.rows(), layer.theta.cols());
  const auto t = layer.theta.data();
  const auto s = layer.log_sigma2.data();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = raw_log_alpha(t[i], s[i]);
  return out;
}

double clamp_log_alpha(double log_alpha) {
  return std::clamp(log_alpha, -kLogAlphaClamp, kLogAlphaClamp);
}

double kl_svd_weight(double log_alpha) {
  const double la = clamp_log_alpha(log_alpha);
  return kSvdK1 - kSvdK1 * sigmoid(kSvdK2 + kSvdK3 * la) + 0.5 * std::log1p(std::exp(-la));
}

double kl_vbd_weight(double log_alpha) {
  const double la = clamp_log_alpha(log_alpha);
  return 0.5 * std::log1p(std::exp(-la));
}

double kl_svd(const VariationalDenseLayer& layer) { return kl_sum<kl_svd_weight>(layer); }
double kl_vbd(const VariationalDenseLayer& layer) { return kl_sum<kl_vbd_weight>(layer); }

PruneMask prune_mask(const VariationalDenseLayer& layer, double threshold) {
  const Matrix log_alpha = alpha_log(layer);
  PruneMask mask{Matrix(log_alpha.rows(), log_alpha.cols()), threshold};
  const auto la = log_alpha.data();
  auto keep = mask.keep.data();
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = la[i] > threshold ? 0.0 : 1.0;
  return mask;
}

std::vector<PruneMask> prune_masks(std::span<const VariationalDenseLayer> layers,
                                   double threshold) {
  std::vector<PruneMask> masks;
  masks.reserve(layers.size());
  for (const auto& l : layers) masks.push_back(prune_mask(l, threshold));
  return masks;
}

Matrix masked_weights(const VariationalDenseLayer& layer, const PruneMask* mask) {
  if (mask == nullptr) return layer.theta;
  if (!mask->keep.same_shape(layer.theta)) {
    throw ShapeError("mask " + mask->keep.shape_string() + " does not match layer " +
                     layer.theta.shape_string());
  }
  return apply(BinaryOp::multiply, layer.theta, mask->keep);
}

Matrix variational_forward(const VariationalDenseLayer& layer, const Matrix& input,
                           RngStream& rng, ForwardMode mode, const PruneMask* mask) {
  layer.validate();
  check_input(input, layer.inputs());
  if (mode == ForwardMode::eval) {
    return add_row(matmul(input, masked_weights(layer, mask)), layer.bias);
  }
  Matrix mean = add_row(matmul(input, layer.theta), layer.bias);
  const Matrix variance =
      matmul(apply(UnaryOp::square, input), apply(UnaryOp::exp, layer.log_sigma2));
  const Matrix noise = gaussian_sample(rng, mean.rows(), mean.cols());
  auto out = mean.data();
  const auto v = variance.data();
  const auto e = noise.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::sqrt(v[i] + kVarianceFloor) * e[i];
  return mean;
}

Matrix student_logits(std::span<const VariationalDenseLayer> layers, const Matrix& input,
                      RngStream& rng, ForwardMode mode, std::span<const PruneMask> masks) {
  if (layers.empty()) throw ShapeError("student has no layers");
  if (!masks.empty() && masks.size() != layers.size()) {
    throw ShapeError("need one prune mask per layer");
  }
  Matrix h = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const PruneMask* mask = masks.empty() ? nullptr : &masks[l];
    h = variational_forward(layers[l], h, rng, mode, mask);
    if (l + 1 < layers.size()) h = apply(UnaryOp::relu, h);
  }
  return h;
}

std::vector<LayerVars> register_layers(ad::Tape& tape,
                                       std::span<const VariationalDenseLayer> layers,
                                       bool train_log_sigma2) {
  std::vector<LayerVars> vars;
  vars.reserve(layers.size());
  for (const auto& l : layers) {
    l.validate();
    LayerVars v;
    v.theta = tape.variable(l.theta);
    v.log_sigma2 = train_log_sigma2 ? tape.variable(l.log_sigma2) : tape.constant(l.log_sigma2);
    v.bias = tape.variable(l.bias);
    vars.push_back(v);
  }
  return vars;
}

ad::Var variational_forward(const LayerVars& layer, ad::Var input, RngStream& rng,
                            ForwardMode mode, const PruneMask* mask) {
  ad::Tape& tape = input.tape();
  check_input(input.value(), layer.theta.value().rows());
  if (mode == ForwardMode::eval) {
    ad::Var weights = layer.theta;
    if (mask != nullptr) weights = ad::mul(weights, tape.constant(mask->keep));
    return ad::add_row(ad::matmul(input, weights), layer.bias);
  }
  ad::Var mean = ad::add_row(ad::matmul(input, layer.theta), layer.bias);
  ad::Var variance = ad::matmul(ad::square(input), ad::exp(layer.log_sigma2));
  ad::Var noise = tape.constant(gaussian_sample(rng, mean.value().rows(), mean.value().cols()));
  return ad::add(mean, ad::mul(ad::sqrt(variance, kVarianceFloor), noise));
}

ad::Var student_logits(std::span<const LayerVars> layers, ad::Var input, RngStream& rng,
                       ForwardMode mode, std::span<const PruneMask> masks) {
  if (layers.empty()) throw ShapeError("student has no layers");
  if (!masks.empty() && masks.size() != layers.size()) {
    throw ShapeError("need one prune mask per layer");
  }
  ad::Var h = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const PruneMask* mask = masks.empty() ? nullptr : &masks[l];
    h = variational_forward(layers[l], h, rng, mode, mask);
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

ad::Var kl_svd(const LayerVars& layer) { return kl_node<kl_svd_weight, kl_svd_slope>(layer); }
ad::Var kl_vbd(const LayerVars& layer) { return kl_node<kl_vbd_weight, kl_vbd_slope>(layer); }

Architecture student_architecture(std::span<const VariationalDenseLayer> layers) {
  Architecture arch;
  if (layers.empty()) return arch;
  arch.push_back(layers.front().inputs());
  for (const auto& l : layers) arch.push_back(l.outputs());
  return arch;
}

std::vector<double> flatten_student(std::span<const VariationalDenseLayer> layers) {
  std::vector<double> values;
  for (const auto& l : layers) {
    values.insert(values.end(), l.theta.data().begin(), l.theta.data().end());
    values.insert(values.end(), l.bias.data().begin(), l.bias.data().end());
  }
  for (const auto& l : layers)
    values.insert(values.end(), l.log_sigma2.data().begin(), l.log_sigma2.data().end());
  return values;
}

void save_student(std::span<const VariationalDenseLayer> layers, double threshold,
                  const std::filesystem::path& stem, const Manifest& extra) {
  for (const auto& l : layers) l.validate();
  const auto values = flatten_student(layers);
  Manifest m;
  m.set("format", "vstudent-variational-v1");
  m.set("architecture", format_architecture(student_architecture(layers)));
  m.set("activation", to_string(Activation::relu));
  m.set("threshold", format_real(threshold));
  m.set("payload_values", std::to_string(values.size()));
  m.set("digest", payload_digest(values));
  for (const auto& [k, v] : extra.entries()) m.set(k, v);
  write_payload(payload_path(stem), values);
  write_manifest(manifest_path(stem), m);
}

StudentCheckpoint load_student(const std::filesystem::path& stem) {
  StudentCheckpoint ckpt;
  ckpt.manifest = read_manifest(manifest_path(stem));
  const Manifest& m = ckpt.manifest;
  if (m.at("format") != "vstudent-variational-v1") {
    throw FormatError(manifest_path(stem).string() + ": unexpected format '" + m.at("format") + "'");
  }
  const Architecture arch = parse_architecture(m.at("architecture"));
  parse_activation(m.at("activation"));
  ckpt.threshold = parse_real(m.at("threshold"), "threshold");
  const std::size_t declared = parse_count(m.at("payload_values"), "payload_values");
  std::size_t implied = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) implied += 2 * arch[l] * arch[l + 1] + arch[l + 1];
  if (declared != implied) {
    throw ConsistencyError(manifest_path(stem).string() + ": architecture " + m.at("architecture") +
                           " implies " + std::to_string(implied) + " values, manifest declares " +
                           std::to_string(declared));
  }
  const auto values = read_payload(payload_path(stem), declared);
  if (payload_digest(values) != m.at("digest")) {
    throw FormatError(payload_path(stem).string() + ": payload digest does not match manifest");
  }
  std::size_t pos = 0;
  auto take = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> chunk(values.begin() + static_cast<long>(pos),
                              values.begin() + static_cast<long>(pos + rows * cols));
    pos += rows * cols;
    return Matrix(rows, cols, std::move(chunk));
  };
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    VariationalDenseLayer layer;
    layer.theta = take(arch[l], arch[l + 1]);
    layer.bias = take(1, arch[l + 1]);
    ckpt.layers.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) ckpt.layers[l].log_sigma2 = take(arch[l], arch[l + 1]);
  return ckpt;
}

}  // namespace vstudent
