#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vstudent {

/// Ordered key=value text manifest. Lines starting with '#' are comments.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  std::optional<std::string> find(const std::string& key) const;
  /// Throws FormatError when the key is absent.
  const std::string& at(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept {
    return entries_;
  }

  std::string to_string() const;
  static Manifest parse(const std::string& text, const std::string& origin);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Raw little-endian IEEE-754 doubles, no header.
void write_payload(const std::filesystem::path& path, std::span<const double> values);
/// Reads exactly expected_count doubles; a short or long file is a LengthError.
std::vector<double> read_payload(const std::filesystem::path& path, std::size_t expected_count);

/// SHA-256 over the little-endian byte image of the values, as lowercase hex.
std::string payload_digest(std::span<const double> values);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double value);
/// Strict parse of a whole string; throws FormatError.
double parse_real(const std::string& text, const std::string& what);
std::uint64_t parse_count(const std::string& text, const std::string& what);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path payload_path(const std::filesystem::path& stem);

}  // namespace vstudent
