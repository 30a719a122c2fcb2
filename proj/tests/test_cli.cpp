#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "support.hpp"
#include "vstudent/run_config.hpp"

using namespace vstudent;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path base = fs::temp_directory_path() / ("vstudent-cli-" + std::to_string(counter++));
  const std::string cmd = std::string("\"") + VSTUDENT_CLI_PATH + "\" " + args + " > \"" + base.string() +
                          ".out\" 2> \"" + base.string() + ".err\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base.string() + ".out");
  r.err = slurp(base.string() + ".err");
  return r;
}

// A tiny stand-in for MNIST with 28x28 images.
const fs::path& mnist_dir() {
  static const fs::path dir = [] {
    const fs::path d = test::scratch_dir("cli-mnist");
    const Dataset train = test::separable_dataset(200, 784, 41);
    const Dataset held = test::separable_dataset(50, 784, 42);
    write_idx(train, 28, 28, d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte");
    write_idx(held, 28, 28, d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte");
    return d;
  }();
  return dir;
}

std::string data_arg() { return " --mnist \"" + mnist_dir().string() + "\""; }

// Small teacher shared by the student tests.
const fs::path& small_teacher() {
  static const fs::path dir = [] {
    const fs::path d = test::scratch_dir("cli-teacher");
    const Result r = run_cli("train-teacher --arch 784-32-10 --epochs 2 --batch 32 --out \"" + d.string() + "\"" +
                             data_arg());
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

std::vector<nlohmann::json> jsonl(const std::string& text) {
  std::vector<nlohmann::json> rows;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("help and usage errors") {
  const Result help = run_cli("train-teacher --help");
  CHECK(help.code == 0);
  CHECK(help.out.find("784-1200-1200-10") != std::string::npos);
  CHECK(help.out.find("0.001") != std::string::npos);
  const Result student_help = run_cli("train-student --help");
  CHECK(student_help.code == 0);
  CHECK(student_help.out.find("kd-svd") != std::string::npos);

  CHECK(run_cli("").code == 2);
  CHECK(run_cli("train-teacher --bogus 1").code == 2);

  const Result arch = run_cli("train-teacher --arch 784--10 --out " + quoted(test::scratch_dir("cli-arch")) + data_arg());
  CHECK(arch.code == 2);
  CHECK(arch.err.find("784--10") != std::string::npos);

  const Result variant = run_cli("train-student --variant kd-xyz --out " + quoted(test::scratch_dir("cli-var")) + data_arg());
  CHECK(variant.code == 2);
  CHECK(variant.err.find("st-vbd") != std::string::npos);

  const Result missing = run_cli("train-teacher --out " + quoted(test::scratch_dir("cli-miss")) +
                                 " --mnist /nonexistent/mnist-dir");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("/nonexistent/mnist-dir") != std::string::npos);

  const Result no_teacher = run_cli("train-student --variant kd-svd --out " + quoted(test::scratch_dir("cli-nt")) + data_arg());
  CHECK(no_teacher.code == 2);
  CHECK(no_teacher.err.find("--teacher") != std::string::npos);
}

TEST_CASE("teacher defaults and byte-identical reruns") {
  const fs::path a = test::scratch_dir("cli-t1");
  const Result r = run_cli("train-teacher --epochs 1 --out " + quoted(a) + data_arg());
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "config.txt").find("architecture=784-1200-1200-10") != std::string::npos);
  CHECK(r.out.find("2395210") != std::string::npos);

  const fs::path b = test::scratch_dir("cli-t2");
  REQUIRE(run_cli("train-teacher --arch 784-32-10 --epochs 2 --batch 32 --out " + quoted(b) + data_arg()).code == 0);
  for (const char* f : {"teacher.bin", "teacher.manifest", "logits.bin", "logits.manifest", "session.jsonl", "config.txt"})
    CHECK(slurp(b / f) == slurp(small_teacher() / f));
  CHECK(count_lines(slurp(b / "session.jsonl")) == 3);
  CHECK(count_lines(slurp(b / "timing.jsonl")) == 2);
}

TEST_CASE("students train with and without a teacher") {
  const fs::path simple = test::scratch_dir("cli-simple");
  const Result s = run_cli("train-student --variant simple --arch 784-16-10 --epochs 2 --batch 32 --out " +
                           quoted(simple) + data_arg());
  REQUIRE(s.code == 0);
  CHECK(s.out.find("| Network |") != std::string::npos);
  CHECK(fs::exists(simple / "report.json"));

  const fs::path st = test::scratch_dir("cli-stvbd");
  const Result r = run_cli("train-student --variant st-vbd --bsr l1linf --arch 784-16-10 --epochs 2 --batch 32 "
                           "--warmup-epochs 0 --teacher " +
                           quoted(small_teacher()) + " --out " + quoted(st) + data_arg());
  REQUIRE(r.code == 0);
  const auto rows = jsonl(slurp(st / "session.jsonl"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0]["config"]["kl"] == "vbd");
  CHECK(rows[0]["config"]["bsr"] == "l1linf");
  const auto& epoch = rows[2];
  CHECK(epoch["cross_entropy"].get<double>() > 0.0);
  CHECK(epoch["hint"].get<double>() > 0.0);
  CHECK(epoch["kl"].get<double>() > 0.0);
  CHECK(epoch["bsr"].get<double>() > 0.0);
  CHECK(epoch["lambda_t"].get<double>() == 2.0);
  CHECK(epoch["lambda_v"].get<double>() == 1.0 / 200.0);
  CHECK(epoch["lambda_g"].get<double>() == 0.01);
}

TEST_CASE("evaluate") {
  const fs::path run = test::scratch_dir("cli-eval");
  REQUIRE(run_cli("train-student --variant kd-svd --arch 784-16-10 --epochs 2 --batch 32 --teacher " +
                  quoted(small_teacher()) + " --out " + quoted(run) + data_arg())
              .code == 0);

  const Result loose = run_cli("evaluate --checkpoint " + quoted(run) + " --tau 1e9 --repetitions 0 --format json" +
                               data_arg());
  REQUIRE(loose.code == 0);
  const auto j = nlohmann::json::parse(slurp(run / "report.json"));
  CHECK(j["r_s"].get<double>() == 1.0);
  CHECK(j["config"]["tau"] == "1e+09");
  CHECK(j["threshold"].get<double>() == 1e9);

  const fs::path out1 = test::scratch_dir("cli-eval1"), out2 = test::scratch_dir("cli-eval2");
  REQUIRE(run_cli("evaluate --checkpoint " + quoted(run) + " --repetitions 0 --out " + quoted(out1) + data_arg()).code == 0);
  REQUIRE(run_cli("evaluate --checkpoint " + quoted(run) + " --repetitions 0 --out " + quoted(out2) + data_arg()).code == 0);
  CHECK(slurp(out1 / "report.json") == slurp(out2 / "report.json"));
  CHECK(nlohmann::json::parse(slurp(out1 / "report.json"))["config"]["tau"] == "3");

  const Result timed = run_cli("evaluate --checkpoint " + quoted(run) + " --repetitions 3 --out " + quoted(out1) + data_arg());
  REQUIRE(timed.code == 0);
  CHECK(nlohmann::json::parse(slurp(out1 / "report.json"))["inference_ms"].get<double>() > 0.0);

  const Result report = run_cli("report --reports " + quoted(out1) + "," + quoted(out2 / "report.json") + " --format csv");
  CHECK(report.code == 0);
  CHECK(count_lines(report.out) == 3);
  CHECK(run_cli("report --reports " + quoted(out1) + " --sort colour").code == 2);
}

TEST_CASE("a stale logit cache is refused") {
  const fs::path other = test::scratch_dir("cli-other");
  REQUIRE(run_cli("train-teacher --arch 784-32-10 --epochs 1 --batch 32 --seed 9 --out " + quoted(other) + data_arg())
              .code == 0);
  const fs::path mixed = test::scratch_dir("cli-mixed");
  for (const char* f : {"logits.bin", "logits.manifest"}) fs::copy_file(small_teacher() / f, mixed / f);
  for (const char* f : {"teacher.bin", "teacher.manifest"}) fs::copy_file(other / f, mixed / f);
  const Result r = run_cli("train-student --variant kd --arch 784-16-10 --epochs 1 --teacher " + quoted(mixed) +
                           " --out " + quoted(test::scratch_dir("cli-stale")) + data_arg());
  CHECK(r.code == 1);
  CHECK(r.err.find("cache was computed from teacher") != std::string::npos);
}

TEST_CASE("lowdata") {
  const fs::path out = test::scratch_dir("cli-lowdata");
  const Result r = run_cli("lowdata --sizes 20 --seeds 1 --arch 784-16-10 --epochs 2 --teacher " +
                           quoted(small_teacher()) + " --out " + quoted(out) + data_arg());
  REQUIRE(r.code == 0);
  CHECK(count_lines(slurp(out / "lowdata.csv")) == 3);
  CHECK(count_lines(slurp(out / "lowdata_summary.csv")) == 3);
  CHECK(r.out.find("±") != std::string::npos);
  CHECK(r.out.find("| 20 | on |") != std::string::npos);

  CHECK(run_cli("lowdata --sizes 500 --seeds 1 --teacher " + quoted(small_teacher()) + " --out " + quoted(out) +
                data_arg())
            .code != 0);

  const RunConfig defaults("lowdata");
  CHECK(defaults.sizes().size() * defaults.seeds().size() * 2 == 30);
  CHECK(defaults.student().batch_size == 64);
}

TEST_CASE("config file then command-line flags") {
  const fs::path dir = test::scratch_dir("cli-config");
  std::ofstream(dir / "run.cfg") << "epochs=1\nseed=5\narch=784-8-10\nbatch=50\n";
  const Result r = run_cli("train-student --variant simple --config " + quoted(dir / "run.cfg") + " --seed 7 --out " +
                           quoted(dir / "out") + data_arg());
  REQUIRE(r.code == 0);
  const std::string config = slurp(dir / "out" / "config.txt");
  CHECK(config.find("seed=7") != std::string::npos);
  CHECK(config.find("epochs=1") != std::string::npos);
  CHECK(config.find("architecture=784-8-10") != std::string::npos);

  std::ofstream(dir / "bad.cfg") << "colour=blue\n";
  CHECK(run_cli("train-student --config " + quoted(dir / "bad.cfg") + " --out " + quoted(dir / "out") + data_arg())
            .code == 2);
}
