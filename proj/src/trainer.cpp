#include "vstudent/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "vstudent/autograd.hpp"
#include "vstudent/errors.hpp"
#include "vstudent/metrics.hpp"
#include "vstudent/optim.hpp"

namespace vstudent {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kEvalChunk = 2000;
constexpr std::uint64_t kNoiseStream = 0x4015E;

ojson real_json(double v) {
  if (std::isfinite(v)) return v;
  return format_real(v);
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

}  // namespace

void StudentConfig::validate() const {
  if (architecture.size() < 2) throw UsageError("student architecture needs at least two widths");
  if (batch_size == 0) throw DomainError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (grad_clip < 0.0) throw DomainError("gradient clip must be non-negative");
  if (std::isnan(threshold)) throw DomainError("pruning threshold is NaN");
  loss.validate();
}

bool StudentConfig::variational() const {
  return loss.kl != KlVariant::none && loss.lambda_v_max.value_or(1.0) > 0.0;
}

double StudentConfig::resolved_lambda_v(std::size_t train_size) const {
  if (loss.lambda_v_max) return *loss.lambda_v_max;
  if (train_size == 0) throw DomainError("cannot default lambda_v for an empty training set");
  return 1.0 / static_cast<double>(train_size);
}

Manifest describe(const StudentConfig& c) {
  Manifest m;
  m.set("architecture", format_architecture(c.architecture));
  m.set("variant", c.variant);
  m.set("kl", to_string(c.loss.kl));
  m.set("bsr", to_string(c.loss.bsr));
  m.set("q", format_real(c.loss.q));
  m.set("temperature", format_real(c.loss.temperature));
  m.set("lambda_t", format_real(c.loss.lambda_t));
  m.set("lambda_v", c.loss.lambda_v_max ? format_real(*c.loss.lambda_v_max) : "auto");
  m.set("lambda_g", format_real(c.loss.lambda_g));
  m.set("warmup_epochs", std::to_string(c.loss.warmup_epochs));
  m.set("hint_direction", to_string(c.loss.hint_direction));
  m.set("epochs", std::to_string(c.epochs));
  m.set("batch", std::to_string(c.batch_size));
  m.set("lr", format_real(c.learning_rate));
  m.set("seed", std::to_string(c.seed));
  m.set("tau", format_real(c.threshold));
  m.set("grad_clip", format_real(c.grad_clip));
  m.set("evaluate_each_epoch", yes_no(c.evaluate_each_epoch));
  return m;
}

Evaluation evaluate(std::span<const VariationalDenseLayer> layers, const Dataset& ds,
                    double threshold) {
  Evaluation out;
  const auto masks = prune_masks(layers, threshold);
  std::vector<Matrix> masked;
  for (std::size_t l = 0; l < layers.size(); ++l) masked.push_back(masked_weights(layers[l], &masks[l]));
  const SparsityStats stats = sparsity_ratio(masked);
  out.per_layer_sparsity = stats.per_layer_pct;
  out.r_s = stats.r_s;
  out.kept_weights = stats.nonzero_weights;
  out.total_weights = stats.total_weights;

  if (ds.size() == 0) return out;
  RngStream unused(0, 0);
  std::size_t wrong = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), begin + kEvalChunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Batch b = gather_batch(ds, idx);
    const auto predicted =
        row_argmax(student_logits(layers, b.images, unused, ForwardMode::eval, masks));
    for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != b.labels[i];
  }
  out.top1_error = static_cast<double>(wrong) / static_cast<double>(ds.size());
  return out;
}

std::string TrainSession::to_jsonl() const {
  std::string out;
  ojson head;
  head["type"] = "config";
  head["seed"] = seed;
  ojson cfg = ojson::object();
  for (const auto& [k, v] : config.entries()) cfg[k] = v;
  head["config"] = cfg;
  out += head.dump() + "\n";
  for (const auto& r : records) {
    ojson j;
    j["type"] = "epoch";
    j["epoch"] = r.epoch;
    j["cross_entropy"] = r.terms.cross_entropy;
    j["hint"] = r.terms.hint;
    j["kl"] = r.terms.kl;
    j["bsr"] = r.terms.bsr;
    j["lambda_t"] = r.terms.lambda_t;
    j["lambda_v"] = r.terms.lambda_v;
    j["lambda_g"] = r.terms.lambda_g;
    j["total"] = r.terms.total;
    if (r.evaluated) {
      j["train_error"] = r.train_error;
      j["test_error"] = r.test_error >= 0.0 ? ojson(r.test_error) : ojson(nullptr);
      j["per_layer_sparsity"] = r.per_layer_sparsity;
      j["r_s"] = real_json(r.r_s);
      j["kept_weights"] = r.kept_weights;
    }
    out += j.dump() + "\n";
  }
  return out;
}

std::string TrainSession::timing_jsonl() const {
  std::string out;
  for (std::size_t e = 0; e < epoch_seconds.size(); ++e) {
    ojson j;
    j["epoch"] = e;
    j["seconds"] = epoch_seconds[e];
    out += j.dump() + "\n";
  }
  return out;
}

StudentRun train_student(const StudentData& data, const StudentConfig& config,
                         const EpochObserver& on_epoch, const StepObserver& on_step) {
  config.validate();
  if (data.train == nullptr) throw UsageError("train_student: no training set");
  const Dataset& ds = *data.train;
  ds.validate();
  if (ds.size() == 0) throw DomainError("train_student: empty training set");
  if (config.architecture.front() != ds.features()) {
    throw ShapeError("architecture input width " + std::to_string(config.architecture.front()) +
                     " does not match " + std::to_string(ds.features()) + " features");
  }
  if (data.teacher_logits != nullptr && data.teacher_logits->logits.rows() != ds.size()) {
    throw ShapeError("logit cache has " + std::to_string(data.teacher_logits->logits.rows()) +
                     " rows for " + std::to_string(ds.size()) + " training examples");
  }
  if (config.loss.lambda_t > 0.0 && data.teacher_logits == nullptr) {
    throw UsageError("hint weight is positive but no teacher logit cache was given");
  }
  std::optional<BlockSparseTerm> block_sparse;
  if (config.loss.bsr != BsrVariant::none) {
    if (data.teacher == nullptr) throw UsageError("block-sparse term needs the teacher weights");
    block_sparse.emplace(*data.teacher, config.loss.bsr, config.loss.q);
  }

  const bool variational = config.variational();
  const double lambda_v_max = config.resolved_lambda_v(ds.size());
  const ForwardMode mode = variational ? ForwardMode::train : ForwardMode::eval;

  StudentRun run;
  run.layers = init_student(config.architecture, config.seed,
                            variational ? kDefaultLogSigma2 : kPointMassLogSigma2);
  run.session.config = describe(config);
  run.session.config.set("lambda_v_resolved", format_real(lambda_v_max));
  run.session.config.set("train_size", std::to_string(ds.size()));
  run.session.seed = config.seed;

  AdamState adam;
  adam.options.learning_rate = config.learning_rate;
  const RngStream noise_root(config.seed, kNoiseStream);
  const std::size_t n_layers = run.layers.size();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lambda_v = lambda_v_max * warmup_scale(epoch, config.loss.warmup_epochs);
    BatchIterator batches(ds.size(), config.batch_size, epoch_shuffle_seed(config.seed, epoch));
    RngStream epoch_noise = noise_root.split(epoch);
    EpochRecord record;
    record.epoch = epoch;

    for (std::size_t bi = 0; bi < batches.batch_count(); ++bi) {
      const auto idx = batches.batch(bi);
      const Batch b = gather_batch(ds, idx);
      Matrix teacher_rows;
      if (data.teacher_logits != nullptr) teacher_rows = gather_rows(data.teacher_logits->logits, idx);

      ad::Tape tape;
      const auto vars = register_layers(tape, run.layers, variational);
      LossInputs inputs;
      inputs.batch = &b.images;
      inputs.labels = b.labels;
      inputs.teacher_logits = data.teacher_logits != nullptr ? &teacher_rows : nullptr;
      inputs.block_sparse = block_sparse ? &*block_sparse : nullptr;
      RngStream noise = epoch_noise.split(bi);
      const LossGraph graph = build_total_loss(vars, inputs, config.loss, lambda_v, noise, mode);
      const LossBreakdown& t = graph.breakdown;
      if (!std::isfinite(t.total)) {
        throw TrainingError("student loss became non-finite in epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi));
      }
      if (on_step) on_step(StepInfo{epoch, bi, t});

      const double w = static_cast<double>(b.labels.size());
      record.terms.cross_entropy += w * t.cross_entropy;
      record.terms.hint += w * t.hint;
      record.terms.kl += w * t.kl;
      record.terms.bsr += w * t.bsr;
      record.terms.total += w * t.total;
      record.terms.lambda_t = t.lambda_t;
      record.terms.lambda_v = t.lambda_v;
      record.terms.lambda_g = t.lambda_g;

      tape.backward(graph.total);
      std::vector<Matrix> grads;
      grads.reserve(3 * n_layers);
      for (const auto& v : vars) {
        grads.push_back(tape.grad(v.theta));
        if (variational) grads.push_back(tape.grad(v.log_sigma2));
        grads.push_back(tape.grad(v.bias));
      }
      if (config.grad_clip > 0.0) clip_gradients(grads, config.grad_clip);
      std::vector<ParamSlot> slots;
      std::size_t g = 0;
      for (std::size_t l = 0; l < n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l);
        slots.push_back({prefix + ".theta", &run.layers[l].theta, &grads[g++]});
        if (variational) slots.push_back({prefix + ".log_sigma2", &run.layers[l].log_sigma2, &grads[g++]});
        slots.push_back({prefix + ".bias", &run.layers[l].bias, &grads[g++]});
      }
      try {
        adam_step(adam, slots);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi) + ")");
      }
    }
    const double n = static_cast<double>(ds.size());
    record.terms.cross_entropy /= n;
    record.terms.hint /= n;
    record.terms.kl /= n;
    record.terms.bsr /= n;
    record.terms.total /= n;

    if (config.evaluate_each_epoch || epoch + 1 == config.epochs) {
      const Evaluation train_eval = evaluate(run.layers, ds, config.threshold);
      record.evaluated = true;
      record.train_error = train_eval.top1_error;
      record.per_layer_sparsity = train_eval.per_layer_sparsity;
      record.r_s = train_eval.r_s;
      record.kept_weights = train_eval.kept_weights;
      if (data.test != nullptr) record.test_error = evaluate(run.layers, *data.test, config.threshold).top1_error;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    run.session.records.push_back(record);
    run.session.epoch_seconds.push_back(seconds);
    if (on_epoch) on_epoch(record, seconds);
  }
  return run;
}

std::vector<SweepRow> lowdata_sweep(const Dataset& train, const LogitCache& cache,
                                    const DenseMLP* teacher, const Dataset& test,
                                    const StudentConfig& config,
                                    std::span<const std::size_t> sizes,
                                    std::span<const std::uint64_t> seeds,
                                    const std::function<void(const SweepRow&)>& on_row) {
  for (std::size_t n : sizes) {
    if (n == 0 || n > train.size()) {
      throw DomainError("sweep size " + std::to_string(n) + " is outside [1, " +
                        std::to_string(train.size()) + "]");
    }
  }
  std::vector<SweepRow> rows;
  for (std::size_t n : sizes) {
    for (std::uint64_t seed : seeds) {
      const auto idx = subset_indices(train, n, seed);
      const Dataset sub = train.select(idx);
      const LogitCache sub_cache = cache.select(idx);
      for (bool hint : {true, false}) {
        StudentConfig c = config;
        c.seed = seed;
        c.evaluate_each_epoch = false;
        if (!hint) c.loss.lambda_t = 0.0;
        StudentData data{&sub, &sub_cache, teacher, &test};
        const StudentRun run = train_student(data, c);
        const EpochRecord& last = run.session.records.back();
        SweepRow row{n, seed, hint, last.test_error, last.r_s};
        rows.push_back(row);
        if (on_row) on_row(row);
      }
    }
  }
  return rows;
}

std::vector<SweepSummary> summarize(std::span<const SweepRow> rows) {
  std::vector<SweepSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummary& s) {
      return s.size == r.size && s.hint == r.hint;
    });
    if (it == out.end()) {
      out.push_back(SweepSummary{r.size, r.hint, 0, 0.0, 0.0});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_error += r.test_error;
  }
  for (auto& s : out) {
    s.mean_error /= static_cast<double>(s.runs);
    double ss = 0.0;
    for (const auto& r : rows)
      if (r.size == s.size && r.hint == s.hint) ss += (r.test_error - s.mean_error) * (r.test_error - s.mean_error);
    s.std_error = s.runs > 1 ? std::sqrt(ss / static_cast<double>(s.runs - 1)) : 0.0;
  }
  return out;
}

}  // namespace vstudent
