// vstudent: train teachers and sparse variational students on MNIST, then
// evaluate and tabulate them.

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vstudent/errors.hpp"
#include "vstudent/metrics.hpp"
#include "vstudent/mnist.hpp"
#include "vstudent/run_config.hpp"
#include "vstudent/teacher.hpp"
#include "vstudent/trainer.hpp"
#include "vstudent/variational.hpp"

namespace fs = std::filesystem;
using namespace vstudent;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kTeacherStem = "teacher";
constexpr const char* kLogitStem = "logits";
constexpr const char* kStudentStem = "student";

// A string-valued flag that feeds RunConfig only when given on the command line.
struct Flag {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

class Flags {
 public:
  void add(CLI::App* app, const std::string& name, const std::string& key,
           const std::string& fallback, const std::string& help) {
    Flag& f = flags_.emplace_back(Flag{key, fallback, nullptr});
    f.option = app->add_option(name, f.value, help);
    if (!fallback.empty()) f.option->default_str(fallback);
  }

  // Config file first, then every flag that was actually given.
  RunConfig resolve(const std::string& command, const std::string& config_file) const {
    RunConfig rc(command);
    if (!config_file.empty()) rc.load_file(config_file);
    for (const auto& f : flags_)
      if (f.option->count() > 0) rc.set(f.key, f.value);
    return rc;
  }

 private:
  std::deque<Flag> flags_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void prepare_out(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--out is required");
  fs::create_directories(dir);
}

MnistSplit load_data(const RunConfig& rc) {
  const fs::path dir = rc.get("mnist", "");
  if (dir.empty()) throw UsageError("--mnist is required");
  for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    if (!fs::exists(dir / name)) throw UsageError("missing MNIST file " + (dir / name).string());
  }
  return load_mnist_dir(dir);
}

struct TeacherArtifacts {
  DenseMLP net;
  LogitCache logits;
};

std::optional<TeacherArtifacts> load_teacher(const RunConfig& rc, bool required) {
  const std::string dir = rc.get("teacher", "");
  if (dir.empty()) {
    if (required) throw UsageError("--teacher is required for this variant");
    return std::nullopt;
  }
  const fs::path stem = fs::path(dir) / kTeacherStem;
  if (!fs::exists(manifest_path(stem))) throw UsageError("no teacher checkpoint at " + stem.string());
  TeacherArtifacts t;
  t.net = load_checkpoint(stem);
  t.logits = load_logit_cache(fs::path(dir) / kLogitStem, checkpoint_digest(t.net));
  return t;
}

std::vector<VariationalDenseLayer> as_point_mass(const DenseMLP& net) {
  std::vector<VariationalDenseLayer> layers;
  for (const auto& l : net.layers) {
    layers.push_back({l.weight, Matrix(l.weight.rows(), l.weight.cols(), kPointMassLogSigma2), l.bias});
  }
  return layers;
}

Matrix timing_batch(const Dataset& test, std::size_t rows) {
  std::vector<std::size_t> idx(std::min(rows, test.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather_rows(test.images, idx);
}

std::vector<std::pair<std::string, std::string>> with_prefix(const Manifest& m, const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : m.entries()) out.emplace_back(prefix + k, v);
  return out;
}

Manifest teacher_manifest(const TeacherConfig& c) {
  Manifest m;
  m.set("architecture", format_architecture(c.architecture));
  m.set("epochs", std::to_string(c.epochs));
  m.set("batch", std::to_string(c.batch_size));
  m.set("lr", format_real(c.learning_rate));
  m.set("seed", std::to_string(c.seed));
  return m;
}

int cmd_train_teacher(const RunConfig& rc) {
  const TeacherConfig config = rc.teacher();
  const fs::path out = rc.get("out", "");
  prepare_out(out);
  const MnistSplit data = load_data(rc);
  const Manifest resolved = teacher_manifest(config);
  write_text(out / "config.txt", resolved.to_string());

  std::string log;
  {
    ojson head;
    head["type"] = "config";
    ojson cfg = ojson::object();
    for (const auto& [k, v] : resolved.entries()) cfg[k] = v;
    head["config"] = cfg;
    log += head.dump() + "\n";
  }
  std::string timing;
  const DenseMLP net = train_teacher(data.train, config, [&](const TeacherEpoch& e, const DenseMLP& n) {
    const double test_error = classification_error(n, data.test);
    ojson j;
    j["type"] = "epoch";
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["running_train_error"] = e.running_train_error;
    j["test_error"] = test_error;
    log += j.dump() + "\n";
    timing += ojson{{"epoch", e.epoch}, {"seconds", e.seconds}}.dump() + "\n";
    std::fprintf(stderr, "epoch %zu  loss %.5f  train err %.4f  test err %.4f  (%.1fs)\n", e.epoch,
                 e.mean_loss, e.running_train_error, test_error, e.seconds);
  });

  Manifest extra;
  for (const auto& [k, v] : resolved.entries()) extra.set("config." + k, v);
  save_checkpoint(net, out / kTeacherStem, extra);
  save_logit_cache(precompute_logits(net, data.train), out / kLogitStem);
  write_text(out / "session.jsonl", log);
  write_text(out / "timing.jsonl", timing);

  const double test_error = classification_error(net, data.test);
  const auto layers = as_point_mass(net);
  SparsityReport report = make_report(layers, kDefaultPruneThreshold, test_error, count_parameters(net), "",
                                      with_prefix(resolved, ""), timing_batch(data.test, 1), 100);
  write_text(out / "report.json", report_to_json(report));
  std::printf("teacher %s: test error %.2f%%, %zu parameters\n", format_architecture(config.architecture).c_str(),
              100.0 * test_error, count_parameters(net));
  return 0;
}

std::size_t teacher_parameter_count(const std::optional<TeacherArtifacts>& t) {
  return t ? count_parameters(t->net) : count_parameters(Architecture{784, 1200, 1200, 10});
}

int cmd_train_student(const RunConfig& rc) {
  const StudentConfig config = rc.student();
  const fs::path out = rc.get("out", "");
  prepare_out(out);
  const bool needs_teacher = config.loss.lambda_t > 0.0 || config.loss.bsr != BsrVariant::none;
  const auto teacher = load_teacher(rc, needs_teacher);
  const MnistSplit data = load_data(rc);

  StudentData inputs{&data.train, teacher ? &teacher->logits : nullptr, teacher ? &teacher->net : nullptr,
                     &data.test};
  const std::string teacher_digest = teacher ? checkpoint_digest(teacher->net) : "";
  StudentRun run = train_student(inputs, config, [](const EpochRecord& r, double seconds) {
    std::fprintf(stderr, "epoch %zu  loss %.5f  ce %.5f  kl %.1f  train err %.4f  test err %.4f  R_s %.2f  (%.1fs)\n",
                 r.epoch, r.terms.total, r.terms.cross_entropy, r.terms.kl, r.train_error, r.test_error, r.r_s,
                 seconds);
  });
  if (teacher && checkpoint_digest(teacher->net) != teacher_digest) {
    throw TrainingError("teacher weights changed during student training");
  }

  Manifest extra;
  for (const auto& [k, v] : run.session.config.entries()) extra.set("config." + k, v);
  if (teacher) extra.set("teacher_digest", teacher_digest);
  save_student(run.layers, config.threshold, out / kStudentStem, extra);
  write_text(out / "config.txt", run.session.config.to_string());
  write_text(out / "session.jsonl", run.session.to_jsonl());
  write_text(out / "timing.jsonl", run.session.timing_jsonl());

  const double test_error = run.session.records.empty() ? 0.0 : run.session.records.back().test_error;
  const SparsityReport report =
      make_report(run.layers, config.threshold, test_error, teacher_parameter_count(teacher), config.variant,
                  run.session.config.entries(), timing_batch(data.test, 1), 100);
  write_text(out / "report.json", report_to_json(report));
  std::printf("%s", emit_report(std::span(&report, 1), ReportFormat::markdown).c_str());
  return 0;
}

int cmd_evaluate(const RunConfig& rc, std::size_t repetitions) {
  fs::path stem = rc.get("checkpoint", "");
  if (stem.empty()) throw UsageError("--checkpoint is required");
  if (fs::is_directory(stem)) stem /= kStudentStem;
  if (!fs::exists(manifest_path(stem))) throw UsageError("no student checkpoint at " + stem.string());
  const StudentCheckpoint ckpt = load_student(stem);
  const double tau = rc.threshold();
  const MnistSplit data = load_data(rc);
  const auto teacher = load_teacher(rc, false);

  const Evaluation eval = evaluate(ckpt.layers, data.test, tau);
  std::vector<std::pair<std::string, std::string>> config;
  for (const auto& [k, v] : ckpt.manifest.entries())
    if (k.starts_with("config.")) config.emplace_back(k.substr(7), v);
  config.emplace_back("tau", format_real(tau));
  const SparsityReport report =
      make_report(ckpt.layers, tau, eval.top1_error, teacher_parameter_count(teacher),
                  ckpt.manifest.find("config.variant").value_or(""), config, timing_batch(data.test, 1), repetitions);
  const fs::path out = rc.get("out", stem.parent_path().string());
  prepare_out(out);
  write_text(out / "report.json", report_to_json(report));
  std::printf("%s", emit_report(std::span(&report, 1), parse_report_format(rc.get("format", "markdown"))).c_str());
  return 0;
}

int cmd_lowdata(const RunConfig& rc) {
  const StudentConfig config = rc.student();
  const auto sizes = rc.sizes();
  const auto seeds = rc.seeds();
  const ReportFormat format = parse_report_format(rc.get("format", "markdown"));
  const fs::path out = rc.get("out", "");
  prepare_out(out);
  const auto teacher = load_teacher(rc, true);
  const MnistSplit data = load_data(rc);

  Manifest resolved = describe(config);
  resolved.set("sizes", rc.get("sizes", "100,500,1000,5000,10000"));
  resolved.set("seeds", rc.get("seeds", "3"));
  write_text(out / "config.txt", resolved.to_string());

  const auto rows = lowdata_sweep(data.train, teacher->logits, &teacher->net, data.test, config, sizes, seeds,
                                  [](const SweepRow& r) {
                                    std::fprintf(stderr, "n=%zu seed=%llu hint=%s  test err %.4f\n", r.size,
                                                 static_cast<unsigned long long>(r.seed), r.hint ? "on" : "off",
                                                 r.test_error);
                                  });
  const auto summary = summarize(rows);

  std::string csv = "size,seed,hint,test_error,r_s\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.size) + "," + std::to_string(r.seed) + "," + (r.hint ? "on" : "off") + "," +
           format_real(r.test_error) + "," + format_real(r.r_s) + "\n";
  }
  std::string summary_csv = "size,hint,runs,mean_test_error,std_test_error\n";
  for (const auto& s : summary) {
    summary_csv += std::to_string(s.size) + "," + (s.hint ? "on" : "off") + "," + std::to_string(s.runs) + "," +
                   format_real(s.mean_error) + "," + format_real(s.std_error) + "\n";
  }
  write_text(out / "lowdata.csv", csv);
  write_text(out / "lowdata_summary.csv", summary_csv);

  if (format == ReportFormat::csv) {
    std::printf("%s", csv.c_str());
  } else if (format == ReportFormat::json) {
    ojson j = ojson::array();
    for (const auto& r : rows)
      j.push_back({{"size", r.size}, {"seed", r.seed}, {"hint", r.hint}, {"test_error", r.test_error}});
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    std::printf("| Samples | Hint | Test error (%%) mean ± std | Runs |\n|---|---|---|---|\n");
    for (const auto& s : summary) {
      std::printf("| %zu | %s | %.2f ± %.2f | %zu |\n", s.size, s.hint ? "on" : "off", 100.0 * s.mean_error,
                  100.0 * s.std_error, s.runs);
    }
  }
  return 0;
}

int cmd_report(const RunConfig& rc) {
  std::vector<SparsityReport> reports;
  std::stringstream list(rc.get("reports", ""));
  std::string item;
  while (std::getline(list, item, ',')) {
    if (item.empty()) continue;
    fs::path p = item;
    if (fs::is_directory(p)) p /= "report.json";
    reports.push_back(report_from_json(read_text(p)));
  }
  if (reports.empty()) throw UsageError("report: no inputs given");
  if (rc.has("sort")) sort_reports(reports, rc.get("sort", ""));
  const std::string doc = emit_report(reports, parse_report_format(rc.get("format", "markdown")));
  if (rc.has("out")) write_text(rc.get("out", ""), doc);
  else std::printf("%s", doc.c_str());
  return 0;
}

void add_student_flags(CLI::App* app, Flags& flags) {
  flags.add(app, "--arch", "arch", "784-500-50-10", "Student layer widths");
  flags.add(app, "--variant", "variant", "kd-svd",
            "simple | kd | kd-svd | kd-vbd | st-svd | st-vbd | svd | vbd");
  flags.add(app, "--kl", "kl", "", "KL penalty: none | svd | vbd (default from variant)");
  flags.add(app, "--bsr", "bsr", "", "Block-sparse term: none | l1linf | l1l2 | l1lq (default from variant)");
  flags.add(app, "--q", "q", "2", "Exponent for l1lq");
  flags.add(app, "--temperature", "temperature", "2", "Softmax temperature of the hint");
  flags.add(app, "--lambda-t", "lambda_t", "", "Hint weight (default from variant: 2 or 0)");
  flags.add(app, "--lambda-v", "lambda_v", "auto", "Maximum KL weight; auto = 1/training size");
  flags.add(app, "--lambda-g", "lambda_g", "", "Block-sparse weight (default from variant: 0.01 or 0)");
  flags.add(app, "--warmup-epochs", "warmup_epochs", "10", "Epochs over which the KL weight ramps up");
  flags.add(app, "--hint-direction", "hint_direction", "student-teacher",
            "KL direction of the hint: student-teacher | teacher-student");
  flags.add(app, "--epochs", "epochs", "100", "Training epochs");
  flags.add(app, "--batch", "batch", "512", "Mini-batch size (lowdata: 64)");
  flags.add(app, "--lr", "lr", "0.001", "Adam learning rate");
  flags.add(app, "--tau", "tau", "3", "Pruning threshold on log alpha");
  flags.add(app, "--seed", "seed", "1", "Run seed");
  flags.add(app, "--grad-clip", "grad_clip", "0", "Gradient norm cap, 0 = off");
  flags.add(app, "--mnist", "mnist", "", "Directory with the MNIST IDX files");
  flags.add(app, "--teacher", "teacher", "", "Teacher run directory");
  flags.add(app, "--out", "out", "", "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse variational student networks distilled from a dense teacher"};
  app.require_subcommand(1);
  std::string config_file;

  Flags teacher_flags;
  auto* teacher = app.add_subcommand("train-teacher", "Train the teacher and cache its logits");
  teacher->add_option("--config", config_file, "key=value settings file");
  teacher_flags.add(teacher, "--arch", "arch", "784-1200-1200-10", "Teacher layer widths");
  teacher_flags.add(teacher, "--epochs", "epochs", "100", "Training epochs");
  teacher_flags.add(teacher, "--batch", "batch", "128", "Mini-batch size");
  teacher_flags.add(teacher, "--lr", "lr", "0.001", "Adam learning rate");
  teacher_flags.add(teacher, "--seed", "seed", "1", "Run seed");
  teacher_flags.add(teacher, "--mnist", "mnist", "", "Directory with the MNIST IDX files");
  teacher_flags.add(teacher, "--out", "out", "", "Output directory");

  Flags student_flags;
  auto* student = app.add_subcommand("train-student", "Train a student variant");
  student->add_option("--config", config_file, "key=value settings file");
  add_student_flags(student, student_flags);

  Flags eval_flags;
  std::size_t repetitions = 100;
  auto* evaluate = app.add_subcommand("evaluate", "Compute sparsity, compression and error of a student");
  evaluate->add_option("--config", config_file, "key=value settings file");
  eval_flags.add(evaluate, "--checkpoint", "checkpoint", "", "Student run directory or checkpoint stem");
  eval_flags.add(evaluate, "--tau", "tau", "3", "Pruning threshold on log alpha");
  eval_flags.add(evaluate, "--mnist", "mnist", "", "Directory with the MNIST IDX files");
  eval_flags.add(evaluate, "--teacher", "teacher", "", "Teacher run directory (for R_c)");
  eval_flags.add(evaluate, "--out", "out", "", "Output directory (default: the checkpoint's)");
  eval_flags.add(evaluate, "--format", "format", "markdown", "json | markdown | csv");
  evaluate->add_option("--repetitions", repetitions, "Timed forward passes, 0 = skip timing")
      ->capture_default_str();

  Flags lowdata_flags;
  auto* lowdata = app.add_subcommand("lowdata", "Hint-on vs hint-off students on small training subsets");
  lowdata->add_option("--config", config_file, "key=value settings file");
  add_student_flags(lowdata, lowdata_flags);
  lowdata_flags.add(lowdata, "--sizes", "sizes", "100,500,1000,5000,10000", "Comma-separated subset sizes");
  lowdata_flags.add(lowdata, "--seeds", "seeds", "3", "Number of seeds per size");
  lowdata_flags.add(lowdata, "--format", "format", "markdown", "json | markdown | csv");

  Flags report_flags;
  auto* report = app.add_subcommand("report", "Tabulate report.json files");
  report->add_option("--config", config_file, "key=value settings file");
  report_flags.add(report, "--reports", "reports", "", "Comma-separated report files or run directories");
  report_flags.add(report, "--format", "format", "markdown", "json | markdown | csv");
  report_flags.add(report, "--sort", "sort", "", "network | test_error_pct | r_s | r_c | footprint_compression");
  report_flags.add(report, "--out", "out", "", "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*teacher) return cmd_train_teacher(teacher_flags.resolve("train-teacher", config_file));
    if (*student) return cmd_train_student(student_flags.resolve("train-student", config_file));
    if (*evaluate) return cmd_evaluate(eval_flags.resolve("evaluate", config_file), repetitions);
    if (*lowdata) return cmd_lowdata(lowdata_flags.resolve("lowdata", config_file));
    if (*report) return cmd_report(report_flags.resolve("report", config_file));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
