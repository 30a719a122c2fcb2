#include "vstudent/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vstudent/errors.hpp"

namespace vstudent {

namespace {

std::string normalise_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

double as_real(const std::string& text, const std::string& key) {
  try {
    return parse_real(text, key);
  } catch (const FormatError&) {
    throw UsageError("--" + key + ": '" + text + "' is not a number");
  }
}

std::uint64_t as_count(const std::string& text, const std::string& key) {
  try {
    return parse_count(text, key);
  } catch (const FormatError&) {
    throw UsageError("--" + key + ": '" + text + "' is not a non-negative integer");
  }
}

}  // namespace

void apply_variant(StudentConfig& c, const std::string& variant) {
  if (std::find(kVariants.begin(), kVariants.end(), variant) == kVariants.end()) {
    std::string valid;
    for (const auto& v : kVariants) valid += (valid.empty() ? "" : ", ") + v;
    throw UsageError("unknown variant '" + variant + "' (valid: " + valid + ")");
  }
  c.variant = variant;
  const bool hint = variant.starts_with("kd") || variant.starts_with("st");
  c.loss.lambda_t = hint ? 2.0 : 0.0;
  if (variant.ends_with("svd")) c.loss.kl = KlVariant::svd;
  else if (variant.ends_with("vbd")) c.loss.kl = KlVariant::vbd;
  else c.loss.kl = KlVariant::none;
  if (variant.starts_with("st")) {
    c.loss.bsr = BsrVariant::l1_linf;
    c.loss.lambda_g = 0.01;
  } else {
    c.loss.bsr = BsrVariant::none;
    c.loss.lambda_g = 0.0;
  }
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys{
      "mnist", "teacher", "out",     "checkpoint", "arch",          "variant",
      "kl",    "bsr",     "q",       "temperature", "lambda_t",     "lambda_v",
      "lambda_g", "warmup_epochs", "epochs", "batch", "lr",          "tau",
      "seed",  "sizes",   "seeds",   "format",     "sort",          "grad_clip",
      "hint_direction", "reports"};
  return keys;
}

RunConfig::RunConfig(std::string command) : command_(std::move(command)) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = normalise_key(key);
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
    throw UsageError("unknown setting '" + key + "'");
  }
  settings_.set(k, value);
}

bool RunConfig::has(const std::string& key) const { return settings_.find(normalise_key(key)).has_value(); }

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  return settings_.find(normalise_key(key)).value_or(fallback);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  Manifest file;
  try {
    file = Manifest::parse(text.str(), path.string());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  for (const auto& [k, v] : file.entries()) set(k, v);
}

TeacherConfig RunConfig::teacher() const {
  TeacherConfig c;
  if (auto v = settings_.find("arch")) c.architecture = parse_architecture(*v);
  if (auto v = settings_.find("epochs")) c.epochs = as_count(*v, "epochs");
  if (auto v = settings_.find("batch")) c.batch_size = as_count(*v, "batch");
  if (auto v = settings_.find("lr")) c.learning_rate = as_real(*v, "lr");
  if (auto v = settings_.find("seed")) c.seed = as_count(*v, "seed");
  if (c.batch_size == 0) throw UsageError("--batch must be positive");
  if (!(c.learning_rate > 0.0)) throw UsageError("--lr must be positive");
  return c;
}

StudentConfig RunConfig::student() const {
  StudentConfig c;
  if (command_ == "lowdata") c.batch_size = 64;
  apply_variant(c, get("variant", "kd-svd"));
  for (const auto& [k, v] : settings_.entries()) {
    if (k == "arch") c.architecture = parse_architecture(v);
    else if (k == "kl") c.loss.kl = parse_kl_variant(v);
    else if (k == "bsr") c.loss.bsr = parse_bsr_variant(v);
    else if (k == "q") c.loss.q = as_real(v, "q");
    else if (k == "temperature") c.loss.temperature = as_real(v, "temperature");
    else if (k == "lambda_t") c.loss.lambda_t = as_real(v, "lambda-t");
    else if (k == "lambda_v") {
      if (v == "auto") c.loss.lambda_v_max.reset();
      else c.loss.lambda_v_max = as_real(v, "lambda-v");
    } else if (k == "lambda_g") c.loss.lambda_g = as_real(v, "lambda-g");
    else if (k == "warmup_epochs") c.loss.warmup_epochs = as_count(v, "warmup-epochs");
    else if (k == "hint_direction") c.loss.hint_direction = parse_hint_direction(v);
    else if (k == "epochs") c.epochs = as_count(v, "epochs");
    else if (k == "batch") c.batch_size = as_count(v, "batch");
    else if (k == "lr") c.learning_rate = as_real(v, "lr");
    else if (k == "seed") c.seed = as_count(v, "seed");
    else if (k == "tau") c.threshold = as_real(v, "tau");
    else if (k == "grad_clip") c.grad_clip = as_real(v, "grad-clip");
  }
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  return c;
}

double RunConfig::threshold() const {
  return has("tau") ? as_real(get("tau", ""), "tau") : kDefaultPruneThreshold;
}

std::vector<std::size_t> RunConfig::sizes() const {
  std::vector<std::size_t> out;
  std::stringstream in(get("sizes", "100,500,1000,5000,10000"));
  std::string field;
  while (std::getline(in, field, ',')) {
    const auto n = as_count(field, "sizes");
    if (n == 0) throw UsageError("--sizes entries must be positive");
    out.push_back(n);
  }
  if (out.empty()) throw UsageError("--sizes is empty");
  return out;
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  const auto count = as_count(get("seeds", "3"), "seeds");
  if (count == 0) throw UsageError("--seeds must be at least 1");
  const auto base = as_count(get("seed", "1"), "seed");
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(base + i);
  return out;
}

}  // namespace vstudent
