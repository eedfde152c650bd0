#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mvt::cli {

/// Parses a config document. Text whose first non-blank character is '{' is
/// read as JSON; anything else as flat `key = value` lines grouped under
/// `[section]` headers. Keys before the first header are top level. Values are
/// typed by shape: true/false, integers, reals, comma lists (arrays), and
/// strings (optionally double-quoted). '#' and ';' start comment lines.
nlohmann::json parse_config_text(std::string_view text, const std::string& context = "config");

nlohmann::json load_config_file(const std::filesystem::path& path);

/// Types a single scalar the same way the key=value reader does.
nlohmann::json parse_scalar(std::string_view text);

/// Writes a document back in the key=value form; top-level scalars first, then
/// one section per object. parse_config_text(format_config(doc)) == doc.
std::string format_config(const nlohmann::json& doc);

/// Recursively overlays `overrides` onto `base`. Keys absent from `allowed`
/// (same nesting) raise ConfigError naming the dotted path.
void overlay(nlohmann::json& base, const nlohmann::json& overrides, const nlohmann::json& allowed,
             const std::string& prefix = "");

/// `key=value` pairs on one line; values with spaces, quotes or '=' are quoted.
std::string kv_line(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace mvt::cli
