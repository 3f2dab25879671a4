#include "memlab/config.hpp"

#include "memlab/types.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace memlab {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(trim(text.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto key = trim(std::string_view(stripped).substr(0, eq));
    auto value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
    cfg.set(std::move(key), std::move(value));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(std::string key, std::string value) { entries_[std::move(key)] = std::move(value); }

bool Config::contains(const std::string& key) const { return entries_.count(key) != 0; }

void Config::erase(const std::string& key) { entries_.erase(key); }

std::optional<std::string> Config::find(const std::string& key) const {
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  return std::nullopt;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

std::string Config::require_string(const std::string& key) const {
  if (auto v = find(key)) return *v;
  throw DataError("missing config key: " + key);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* begin = value.data();
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end) {
    throw DataError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

}  // namespace

double Config::get_double(const std::string& key, double fallback) const {
  auto v = find(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = find(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = find(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw DataError("config key '" + key + "': expected boolean, got '" + *v + "'");
}

std::vector<std::int64_t> Config::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  auto v = find(key);
  if (!v || v->empty()) return out;
  for (const auto& item : split(*v, ',')) out.push_back(parse_number<std::int64_t>(key, item));
  return out;
}

Config Config::section(const std::string& prefix) const {
  Config out;
  const auto p = prefix + ".";
  for (const auto& [k, v] : entries_) {
    if (k.rfind(p, 0) == 0) out.set(k.substr(p.size()), v);
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

std::string Config::hash_hex() const { return fnv1a_hex(canonical()); }

}  // namespace memlab
