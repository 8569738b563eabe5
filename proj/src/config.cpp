#include "adod/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adod/error.hpp"

namespace adod {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": expected `key = value`");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key))
      throw ValidationError(origin + ":" + std::to_string(lineno) +
                            ": duplicate key " + key);
    kv.values_[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValues::set(const std::string& key, std::string value) {
  values_[trim(key)] = trim(value);
}

void KeyValues::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
    throw ValidationError("override must look like key=value, got `" + assignment + "`");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

const std::string& KeyValues::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("missing config key " + key);
  return it->second;
}

std::string KeyValues::get_string(const std::string& key,
                                  const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

namespace {

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": expected a number, got `" + text + "`");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ValidationError("config key " + key + ": expected an integer, got `" + text + "`");
  return v;
}

}  // namespace

double KeyValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, raw(key)) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? parse_int(key, raw(key)) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& text = raw(key);
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ValidationError("config key " + key + ": expected an unsigned integer, got `" +
                          text + "`");
  return v;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config key " + key + ": expected a boolean, got `" + v + "`");
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& tok : split(raw(key), ',')) out.push_back(parse_double(key, tok));
  return out;
}

std::vector<std::size_t> KeyValues::get_sizes(
    const std::string& key, const std::vector<std::size_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& tok : split(raw(key), ',')) {
    const auto v = parse_int(key, tok);
    if (v < 0) throw ValidationError("config key " + key + ": values must be nonnegative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace adod
