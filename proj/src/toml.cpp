#include "distfl/toml.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace distfl::toml {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw std::invalid_argument("toml: line " + std::to_string(line) + ": " + msg);
}

void skip_ws(const std::string& s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

Value parse_value(const std::string& s, std::size_t& i, std::size_t line);

Value parse_array(const std::string& s, std::size_t& i, std::size_t line) {
  Array items;
  ++i;  // consume '['
  for (;;) {
    skip_ws(s, i);
    if (i >= s.size()) fail(line, "unterminated array");
    if (s[i] == ']') {
      ++i;
      break;
    }
    items.push_back(parse_value(s, i, line));
    skip_ws(s, i);
    if (i < s.size() && s[i] == ',') {
      ++i;
      continue;
    }
    if (i < s.size() && s[i] == ']') {
      ++i;
      break;
    }
    fail(line, "expected ',' or ']' in array");
  }
  return Value{std::move(items)};
}

Value parse_value(const std::string& s, std::size_t& i, std::size_t line) {
  skip_ws(s, i);
  if (i >= s.size()) fail(line, "missing value");
  const char c = s[i];
  if (c == '[') return parse_array(s, i, line);
  if (c == '"') {
    std::string out;
    ++i;
    while (i < s.size() && s[i] != '"') {
      if (s[i] == '\\' && i + 1 < s.size()) {
        ++i;
        switch (s[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(line, "unsupported escape");
        }
      } else {
        out += s[i];
      }
      ++i;
    }
    if (i >= s.size()) fail(line, "unterminated string");
    ++i;
    return Value{std::move(out)};
  }
  // bare token: bool or number
  std::size_t start = i;
  while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != '#' &&
         s[i] != ' ' && s[i] != '\t') {
    ++i;
  }
  std::string tok = s.substr(start, i - start);
  if (tok == "true") return Value{true};
  if (tok == "false") return Value{false};
  const bool is_float = tok.find_first_of(".eE") != std::string::npos ||
                        tok == "inf" || tok == "-inf" || tok == "nan";
  errno = 0;
  char* end = nullptr;
  if (!is_float) {
    const long long n = std::strtoll(tok.c_str(), &end, 10);
    if (end == tok.c_str() + tok.size() && errno == 0) {
      return Value{static_cast<std::int64_t>(n)};
    }
  }
  const double d = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) fail(line, "cannot parse value '" + tok + "'");
  return Value{d};
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

bool Value::as_bool() const {
  if (const bool* b = std::get_if<bool>(&v)) return *b;
  throw std::invalid_argument("toml: expected boolean");
}

std::int64_t Value::as_int() const {
  if (const auto* n = std::get_if<std::int64_t>(&v)) return *n;
  throw std::invalid_argument("toml: expected integer");
}

double Value::as_double() const {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* n = std::get_if<std::int64_t>(&v)) return static_cast<double>(*n);
  throw std::invalid_argument("toml: expected number");
}

const std::string& Value::as_string() const {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw std::invalid_argument("toml: expected string");
}

const Array& Value::as_array() const {
  if (const auto* a = std::get_if<Array>(&v)) return *a;
  throw std::invalid_argument("toml: expected array");
}

bool Table::has_section(const std::string& section) const {
  const std::string prefix = section + ".";
  auto it = entries.lower_bound(prefix);
  return it != entries.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

const Value& Table::at(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) throw std::invalid_argument("toml: missing key '" + key + "'");
  return it->second;
}

bool Table::get_bool(const std::string& key, bool fallback) const {
  return contains(key) ? at(key).as_bool() : fallback;
}

std::int64_t Table::get_int(const std::string& key, std::int64_t fallback) const {
  return contains(key) ? at(key).as_int() : fallback;
}

double Table::get_double(const std::string& key, double fallback) const {
  return contains(key) ? at(key).as_double() : fallback;
}

std::string Table::get_string(const std::string& key, const std::string& fallback) const {
  return contains(key) ? at(key).as_string() : fallback;
}

Table parse(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    std::size_t i = eq + 1;
    Value value = parse_value(line, i, line_no);
    skip_ws(line, i);
    if (i != line.size()) fail(line_no, "trailing characters after value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!table.entries.emplace(full, std::move(value)).second) {
      fail(line_no, "duplicate key '" + full + "'");
    }
  }
  return table;
}

Table parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace distfl::toml
