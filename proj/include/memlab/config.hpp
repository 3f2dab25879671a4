#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace memlab {

/// Line-oriented `key = value` configuration with dotted section prefixes.
///
/// Blank lines and lines starting with `#` are ignored. Later assignments to
/// the same key override earlier ones. Lookups are typed and throw
/// `DataError` when a value cannot be parsed.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(std::string key, std::string value);
  bool contains(const std::string& key) const;
  void erase(const std::string& key);

  std::optional<std::string> find(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  /// Keys under `prefix.`, returned with the prefix stripped.
  Config section(const std::string& prefix) const;

  /// Canonical text: sorted `key = value` lines. Stable across runs.
  std::string canonical() const;

  /// FNV-1a 64 over `canonical()`, as 16 lowercase hex digits.
  std::string hash_hex() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

std::string fnv1a_hex(std::string_view bytes);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace memlab
