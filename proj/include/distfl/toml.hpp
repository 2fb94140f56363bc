#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace distfl::toml {

// Minimal TOML reader covering the configuration dialect this project uses:
// [section] headers, `key = value` pairs, strings, booleans, integers,
// floats, (nested) arrays, and # comments.
struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array> v;

  bool is_array() const { return std::holds_alternative<Array>(v); }
  bool as_bool() const;
  std::int64_t as_int() const;
  double as_double() const;  // accepts integers too
  const std::string& as_string() const;
  const Array& as_array() const;
};

class Table {
 public:
  // Keys are "section.key" for sectioned entries, bare "key" otherwise.
  std::map<std::string, Value> entries;

  bool contains(const std::string& key) const { return entries.count(key) > 0; }
  bool has_section(const std::string& section) const;
  const Value& at(const std::string& key) const;

  bool get_bool(const std::string& key, bool fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
};

Table parse(const std::string& text);
Table parse_file(const std::string& path);

}  // namespace distfl::toml
