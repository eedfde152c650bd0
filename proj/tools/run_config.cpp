#include "run_config.hpp"

#include <cctype>
#include <charconv>

#include "mvt/binary_io.hpp"
#include "mvt/errors.hpp"

namespace mvt::cli {

using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (const char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string unquote(std::string_view s) {
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] == '\\' && i + 2 < s.size()) ++i;
    out += s[i];
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

bool is_quoted(std::string_view s) { return s.size() >= 2 && s.front() == '"' && s.back() == '"'; }

nlohmann::json parse_list(std::string_view s) {
  auto out = nlohmann::json::array();
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  bool in_quotes = false;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i < s.size() && s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_quotes = !in_quotes;
    if (i == s.size() || (s[i] == ',' && !in_quotes)) {
      out.push_back(parse_scalar(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

bool has_unquoted_comma(std::string_view s) {
  bool in_quotes = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_quotes = !in_quotes;
    if (s[i] == ',' && !in_quotes) return true;
  }
  return false;
}

std::string format_value(const nlohmann::json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    return parse_scalar(s) == v ? s : quote(s);
  }
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].is_array() || v[i].is_object()) throw ConfigError("config lists cannot nest");
      out += (i ? ", " : "") + format_value(v[i]);
    }
    return out + "]";
  }
  if (v.is_object()) throw ConfigError("config sections cannot nest");
  return v.dump();
}

}  // namespace

nlohmann::json parse_scalar(std::string_view text) {
  const auto s = trim(text);
  if (is_quoted(s)) return unquote(s);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') return parse_list(s.substr(1, s.size() - 2));
  if (has_unquoted_comma(s)) return parse_list(s);
  if (s == "true") return true;
  if (s == "false") return false;
  const bool numeric = !s.empty() && (std::isdigit(static_cast<unsigned char>(s.front())) || s.front() == '-' ||
                                      s.front() == '+' || s.front() == '.') &&
                       s.find_first_not_of("0123456789+-.eE") == std::string_view::npos;
  if (!numeric) return std::string(s);
  const char* end = s.data() + s.size();
  std::int64_t i = 0;
  if (auto r = std::from_chars(s.data(), end, i); r.ec == std::errc() && r.ptr == end && !s.empty()) return i;
  double d = 0.0;
  if (auto r = std::from_chars(s.data(), end, d); r.ec == std::errc() && r.ptr == end && !s.empty()) return d;
  return std::string(s);
}

nlohmann::json parse_config_text(std::string_view text, const std::string& context) {
  const auto body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(context + ": JSON config must be an object");
    return doc;
  }

  auto doc = nlohmann::json::object();
  nlohmann::json* section = &doc;
  std::string section_name;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    const auto line = trim(text.substr(start, stop - start));
    start = stop + 1;
    ++line_no;
    const std::string where = context + ":" + std::to_string(line_no);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section_name = std::string(trim(line.substr(1, line.size() - 2)));
      if (!valid_name(section_name)) throw ConfigError(where + ": invalid section name '" + section_name + "'");
      if (doc.contains(section_name) && !doc[section_name].is_object())
        throw ConfigError(where + ": section '" + section_name + "' clashes with a top-level key");
      section = &doc[section_name];
      if (section->is_null()) *section = nlohmann::json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (!valid_name(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    if (section->contains(key))
      throw ConfigError(where + ": duplicate key '" + (section_name.empty() ? key : section_name + "." + key) + "'");
    (*section)[key] = parse_scalar(line.substr(eq + 1));
  }
  return doc;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  return parse_config_text(io::read_file(path), path.string());
}

std::string format_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be an object");
  std::string out;
  for (const auto& [key, value] : doc.items())
    if (!value.is_object()) out += key + " = " + format_value(value) + "\n";
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_object()) continue;
    out += "\n[" + key + "]\n";
    for (const auto& [k, v] : value.items()) out += k + " = " + format_value(v) + "\n";
  }
  return out;
}

void overlay(nlohmann::json& base, const nlohmann::json& overrides, const nlohmann::json& allowed,
             const std::string& prefix) {
  for (const auto& [key, value] : overrides.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!allowed.is_object() || !allowed.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (allowed[key].is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + path + "' must be a section");
      if (!base.contains(key)) base[key] = nlohmann::json::object();
      overlay(base[key], value, allowed[key], path);
    } else {
      if (value.is_object()) throw ConfigError("config key '" + path + "' is not a section");
      // Paths and names that happen to look numeric stay strings.
      const bool as_text = allowed[key].is_string() && (value.is_number() || value.is_boolean());
      base[key] = as_text ? json(value.dump()) : value;
    }
  }
}

std::string kv_line(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::string out;
  for (const auto& [key, value] : pairs) {
    if (!out.empty()) out += ' ';
    const bool plain = !value.empty() && value.find_first_of(" \t\"=") == std::string::npos;
    out += key + "=" + (plain ? value : quote(value));
  }
  return out;
}

}  // namespace mvt::cli
