#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace adod {

// Flat `key = value` configuration. Lines starting with '#' and blank lines
// are ignored; list values are comma-separated. Keys are kept sorted so the
// serialized form is canonical.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);
  // Applies "key=value".
  void set_assignment(const std::string& assignment);
  void erase(const std::string& key) { values_.erase(key); }
  void merge(const KeyValues& other);

  const std::string& raw(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Typed readers; each throws ValidationError naming the key on bad input.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace adod
