#include "vstudent/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "vstudent/checkpoint.hpp"
#include "vstudent/errors.hpp"

namespace vstudent {

using ojson = nlohmann::ordered_json;

SparsityStats sparsity_ratio(std::span<const Matrix> masked_weights) {
  SparsityStats stats;
  for (const Matrix& w : masked_weights) {
    const std::size_t nnz = count_nonzero(w);
    stats.total_weights += w.size();
    stats.nonzero_weights += nnz;
    const double pct =
        w.size() == 0 ? 0.0 : 100.0 * static_cast<double>(w.size() - nnz) / static_cast<double>(w.size());
    stats.per_layer_pct.push_back(pct);
  }
  if (stats.nonzero_weights == 0) {
    if (stats.total_weights > 0) std::clog << "warning: every weight is pruned, R_s is infinite\n";
    stats.r_s = stats.total_weights == 0 ? 1.0 : std::numeric_limits<double>::infinity();
  } else {
    stats.r_s = static_cast<double>(stats.total_weights) / static_cast<double>(stats.nonzero_weights);
  }
  return stats;
}

double compression_ratio(std::size_t teacher_params, std::size_t student_params) {
  if (teacher_params == 0 || student_params == 0)
    throw DomainError("compression_ratio: parameter counts must be positive (got " +
                      std::to_string(teacher_params) + " / " + std::to_string(student_params) + ")");
  return static_cast<double>(teacher_params) / static_cast<double>(student_params);
}

std::size_t count_nonzero(const Matrix& m) {
  const auto d = m.data();
  return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](double v) { return v != 0.0; }));
}

std::size_t csr_bytes(const Matrix& masked_weights) {
  const std::size_t nnz = count_nonzero(masked_weights);
  return nnz * (kValueBytes + kIndexBytes) + (masked_weights.rows() + 1) * kIndexBytes;
}

std::size_t dense_bytes(std::size_t values) { return values * kValueBytes; }

Footprint student_footprint(std::span<const Matrix> masked_weights, std::size_t bias_count) {
  Footprint fp;
  for (const Matrix& w : masked_weights) {
    const std::size_t dense = dense_bytes(w.size());
    const std::size_t csr = csr_bytes(w);
    fp.dense_fallback.push_back(csr > dense);
    fp.stored_bytes += std::min(dense, csr);
    fp.dense_bytes += dense;
  }
  fp.stored_bytes += dense_bytes(bias_count);
  fp.dense_bytes += dense_bytes(bias_count);
  return fp;
}

double inference_time(std::span<const VariationalDenseLayer> layers,
                      std::span<const PruneMask> masks, const Matrix& batch,
                      std::size_t repetitions) {
  if (repetitions == 0) throw DomainError("inference_time: repetitions must be at least 1");
  RngStream unused(0, 0);
  volatile double sink = 0.0;
  auto run = [&] {
    const Matrix out = student_logits(layers, batch, unused, ForwardMode::eval, masks);
    sink = sink + out(0, 0);
  };
  for (int i = 0; i < 3; ++i) run();
  std::vector<double> seconds;
  seconds.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run();
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  const auto mid = seconds.begin() + static_cast<std::ptrdiff_t>(seconds.size() / 2);
  std::nth_element(seconds.begin(), mid, seconds.end());
  if (seconds.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(seconds.begin(), mid);
  return 0.5 * (lower + upper);
}

ReportFormat parse_report_format(const std::string& text) {
  if (text == "json") return ReportFormat::json;
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  if (text == "csv") return ReportFormat::csv;
  throw UsageError("unknown report format '" + text + "' (expected json, markdown or csv)");
}

void sort_reports(std::vector<SparsityReport>& reports, const std::string& key) {
  auto by = [&](auto field) {
    std::stable_sort(reports.begin(), reports.end(),
                     [&](const SparsityReport& a, const SparsityReport& b) { return field(a) < field(b); });
  };
  if (key == "network") by([](const SparsityReport& r) { return r.network; });
  else if (key == "test_error_pct") by([](const SparsityReport& r) { return r.test_error_pct; });
  else if (key == "r_s") by([](const SparsityReport& r) { return r.r_s; });
  else if (key == "r_c") by([](const SparsityReport& r) { return r.r_c; });
  else if (key == "footprint_compression") by([](const SparsityReport& r) { return r.footprint_compression; });
  else
    throw UsageError("unknown sort key '" + key +
                     "' (expected network, test_error_pct, r_s, r_c or footprint_compression)");
}

namespace {

// JSON has no infinity; non-finite values travel as strings.
ojson real_json(double v) {
  if (std::isfinite(v)) return v;
  return format_real(v);
}

double real_from(const ojson& j) {
  if (j.is_string()) return parse_real(j.get<std::string>(), "report value");
  return j.get<double>();
}

ojson to_ojson(const SparsityReport& r) {
  ojson j;
  j["network"] = r.network;
  j["variant"] = r.variant;
  j["architecture"] = r.architecture;
  j["test_error_pct"] = r.test_error_pct;
  ojson layers = ojson::array();
  for (double s : r.per_layer_sparsity) layers.push_back(s);
  j["per_layer_sparsity"] = layers;
  j["r_s"] = real_json(r.r_s);
  j["r_c"] = real_json(r.r_c);
  j["parameters"] = r.parameters;
  j["teacher_parameters"] = r.teacher_parameters;
  j["dense_bytes"] = r.dense_bytes;
  j["teacher_dense_bytes"] = r.teacher_dense_bytes;
  j["csr_bytes"] = r.csr_bytes;
  j["footprint_compression"] = real_json(r.footprint_compression);
  j["inference_ms"] = r.inference_ms;
  j["inference_ms_unmasked"] = r.inference_ms_unmasked;
  j["threshold"] = real_json(r.threshold);
  j["metadata"] = {{"value_bits", kValueBytes * 8}, {"index_bits", kIndexBytes * 8},
                   {"dense_fallback", "per layer min(dense, csr)"}};
  ojson config = ojson::object();
  for (const auto& [k, v] : r.config) config[k] = v;
  j["config"] = config;
  return j;
}

SparsityReport from_ojson(const ojson& j) {
  try {
    SparsityReport r;
    r.network = j.at("network").get<std::string>();
    r.variant = j.value("variant", std::string{});
    r.architecture = j.value("architecture", std::string{});
    r.test_error_pct = j.at("test_error_pct").get<double>();
    for (const auto& s : j.at("per_layer_sparsity")) r.per_layer_sparsity.push_back(s.get<double>());
    r.r_s = real_from(j.at("r_s"));
    r.r_c = real_from(j.at("r_c"));
    r.parameters = j.value("parameters", std::size_t{0});
    r.teacher_parameters = j.value("teacher_parameters", std::size_t{0});
    r.dense_bytes = j.at("dense_bytes").get<std::size_t>();
    r.teacher_dense_bytes = j.value("teacher_dense_bytes", std::size_t{0});
    r.csr_bytes = j.at("csr_bytes").get<std::size_t>();
    r.footprint_compression = real_from(j.at("footprint_compression"));
    r.inference_ms = j.at("inference_ms").get<double>();
    r.inference_ms_unmasked = j.value("inference_ms_unmasked", 0.0);
    if (j.contains("threshold")) r.threshold = real_from(j.at("threshold"));
    if (j.contains("config"))
      for (const auto& [k, v] : j.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what());
  }
}

std::string g6(double v) {
  if (!std::isfinite(v)) return format_real(v);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string joined(std::span<const double> values, const std::string& sep, std::string (*fmt)(double)) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += fmt(values[i]);
  }
  return out;
}

std::string full(double v) { return format_real(v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string render_markdown(std::span<const SparsityReport> reports) {
  std::ostringstream out;
  out << "| Network | Test Error (%) | Sparsity Per Layer (%) | R_s | Parameters | R_c "
         "| CSR bytes | Footprint compression | Inference (ms) |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    out << "| " << r.network << " | " << g6(r.test_error_pct) << " | "
        << joined(r.per_layer_sparsity, "-", g6) << " | " << g6(r.r_s) << " | " << r.parameters
        << " | " << g6(r.r_c) << " | " << r.csr_bytes << " | " << g6(r.footprint_compression)
        << " | " << g6(r.inference_ms) << " |\n";
  }
  return out.str();
}

std::string render_csv(std::span<const SparsityReport> reports) {
  std::ostringstream out;
  out << "network,variant,architecture,test_error_pct,per_layer_sparsity,r_s,r_c,parameters,"
         "teacher_parameters,dense_bytes,teacher_dense_bytes,csr_bytes,footprint_compression,"
         "inference_ms,inference_ms_unmasked,threshold\n";
  for (const auto& r : reports) {
    out << csv_field(r.network) << ',' << csv_field(r.variant) << ',' << csv_field(r.architecture)
        << ',' << full(r.test_error_pct) << ',' << joined(r.per_layer_sparsity, ";", full) << ','
        << full(r.r_s) << ',' << full(r.r_c) << ',' << r.parameters << ',' << r.teacher_parameters
        << ',' << r.dense_bytes << ',' << r.teacher_dense_bytes << ',' << r.csr_bytes << ','
        << full(r.footprint_compression) << ',' << full(r.inference_ms) << ','
        << full(r.inference_ms_unmasked) << ',' << full(r.threshold) << '\n';
  }
  return out.str();
}

}  // namespace

std::string report_to_json(const SparsityReport& report) { return to_ojson(report).dump(2) + "\n"; }

SparsityReport report_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what());
  }
  return from_ojson(j);
}

std::string emit_report(std::span<const SparsityReport> reports, ReportFormat format) {
  if (reports.empty()) throw UsageError("emit_report: no reports to render");
  switch (format) {
    case ReportFormat::json: {
      ojson arr = ojson::array();
      for (const auto& r : reports) arr.push_back(to_ojson(r));
      return arr.dump(2) + "\n";
    }
    case ReportFormat::markdown:
      return render_markdown(reports);
    case ReportFormat::csv:
      return render_csv(reports);
  }
  throw UsageError("emit_report: bad format");
}

SparsityReport make_report(std::span<const VariationalDenseLayer> layers, double threshold,
                           double test_error, std::size_t teacher_parameters,
                           const std::string& variant,
                           std::vector<std::pair<std::string, std::string>> config,
                           const Matrix& timing_batch, std::size_t timing_repetitions) {
  const auto masks = prune_masks(layers, threshold);
  std::vector<Matrix> masked;
  std::size_t biases = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    masked.push_back(masked_weights(layers[l], &masks[l]));
    biases += layers[l].bias.size();
  }
  const SparsityStats stats = sparsity_ratio(masked);
  const Footprint fp = student_footprint(masked, biases);
  const Architecture arch = student_architecture(layers);

  SparsityReport r;
  r.architecture = format_architecture(arch);
  r.variant = variant;
  r.network = network_label(r.architecture, variant);
  r.test_error_pct = 100.0 * test_error;
  r.per_layer_sparsity = stats.per_layer_pct;
  r.r_s = stats.r_s;
  r.parameters = count_parameters(arch);
  r.teacher_parameters = teacher_parameters;
  r.r_c = compression_ratio(teacher_parameters, r.parameters);
  r.dense_bytes = fp.dense_bytes;
  r.teacher_dense_bytes = dense_bytes(teacher_parameters);
  r.csr_bytes = fp.stored_bytes;
  r.footprint_compression =
      static_cast<double>(r.teacher_dense_bytes) / static_cast<double>(r.csr_bytes);
  if (timing_repetitions > 0) {
    r.inference_ms = 1e3 * inference_time(layers, masks, timing_batch, timing_repetitions);
    r.inference_ms_unmasked = 1e3 * inference_time(layers, {}, timing_batch, timing_repetitions);
  }
  r.threshold = threshold;
  r.config = std::move(config);
  return r;
}

std::string network_label(const std::string& architecture, const std::string& variant) {
  std::string name = architecture;
  if (architecture == "784-1200-1200-10") name = "T1";
  else if (architecture == "784-500-50-10") name = "S1";
  else if (architecture == "784-300-100-10") name = "Le-L";
  if (variant.empty()) return name;
  std::string v = variant;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return name + "-" + v;
}

}  // namespace vstudent
