#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstudent/checkpoint.hpp"
#include "vstudent/teacher.hpp"
#include "vstudent/trainer.hpp"

namespace vstudent {

/// Student variants by name. The st-* variants add the block-sparse term.
inline const std::vector<std::string> kVariants{"simple", "kd",     "kd-svd", "kd-vbd",
                                                "st-svd", "st-vbd", "svd",    "vbd"};

/// Presets a variant implies before any explicit setting is applied.
void apply_variant(StudentConfig& config, const std::string& variant);

/// Settings for one CLI command. Values are kept as text in the order they
/// were given; later settings of a key replace earlier ones, so loading a
/// config file before the flags gives flags precedence.
class RunConfig {
 public:
  explicit RunConfig(std::string command);

  const std::string& command() const noexcept { return command_; }

  /// Throws UsageError for keys no command understands.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;

  /// key=value lines, '#' comments. Dashes in keys are read as underscores.
  void load_file(const std::filesystem::path& path);

  TeacherConfig teacher() const;
  /// Built-in defaults, then the variant preset, then explicit settings.
  StudentConfig student() const;
  double threshold() const;
  std::vector<std::size_t> sizes() const;
  /// `seeds` is a count; the run seeds are seed, seed + 1, ...
  std::vector<std::uint64_t> seeds() const;

  /// Explicit settings only.
  const Manifest& explicit_settings() const noexcept { return settings_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::string command_;
  Manifest settings_;
};

}  // namespace vstudent
