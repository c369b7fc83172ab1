#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/text.hpp"

namespace wildtraj {

// Ordered `key=value` document. Blank lines and lines starting with `#` are
// ignored; a key may repeat (e.g. `holdout=`). Later single-valued lookups see
// the last occurrence.
class KeyValues {
 public:
  using Entry = std::pair<std::string, std::string>;

  static KeyValues parse(std::istream& in, const std::string& source = "<stream>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      auto eq = t.find('=');
      if (eq == std::string_view::npos || eq == 0) {
        throw SchemaError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + std::string(t) + "'");
      }
      kv.add(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    }
    return kv;
  }

  static KeyValues parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  void add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }

  // Replaces every occurrence of `key` with a single entry.
  void set(const std::string& key, std::string value) {
    erase(key);
    add(key, std::move(value));
  }

  void erase(const std::string& key) {
    std::erase_if(entries_, [&](const Entry& e) { return e.first == key; });
  }

  bool contains(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return true;
    return false;
  }

  std::optional<std::string> get(const std::string& key) const {
    std::optional<std::string> out;
    for (const auto& e : entries_)
      if (e.first == key) out = e.second;
    return out;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto v = get(key);
    return v ? *v : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = parse_double(*v);
    if (!d) throw SchemaError("config key '" + key + "': expected a number, got '" + *v + "'");
    return *d;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = parse_int(*v);
    if (!d) throw SchemaError("config key '" + key + "': expected an integer, got '" + *v + "'");
    return *d;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw SchemaError("config key '" + key + "': expected a boolean, got '" + *v + "'");
  }

  std::vector<std::string> get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.first == key) out.push_back(e.second);
    return out;
  }

  // Entries whose key starts with `prefix`, with the prefix removed.
  std::vector<Entry> with_prefix(const std::string& prefix) const {
    std::vector<Entry> out;
    for (const auto& e : entries_)
      if (e.first.size() > prefix.size() && e.first.compare(0, prefix.size(), prefix) == 0)
        out.emplace_back(e.first.substr(prefix.size()), e.second);
    return out;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  }

  std::string to_string() const {
    std::ostringstream out;
    write(out);
    return out.str();
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace wildtraj
