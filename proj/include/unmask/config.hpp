#pragma once

// Flat key=value configuration files. Keys are the long flag names of
// `unmask run` without the leading dashes; '#' starts a comment.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "unmask/error.hpp"
#include "unmask/features.hpp"
#include "unmask/pipeline.hpp"

namespace unmask {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> read_key_values(std::istream& in,
                                                          const std::string& name = "config") {
  std::map<std::string, std::string> values;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::argument,
            name + ":" + std::to_string(line_no) + ": expected key=value");
    values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return values;
}

inline std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::argument, "cannot open config file " + path.string());
  return read_key_values(in, path.string());
}

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size() && v >= 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::argument, key + " expects a non-negative integer, got '" + value + "'");
}

inline double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::argument, key + " expects a number, got '" + value + "'");
}

}  // namespace detail

// Applies one detector setting; returns false for keys that are not detector
// settings so callers can route them elsewhere.
inline bool apply_setting(DetectorConfig& config, const std::string& key, const std::string& value) {
  if (key == "w") config.w = detail::parse_count(key, value);
  else if (key == "stride") config.stride = detail::parse_count(key, value);
  else if (key == "k") config.k = detail::parse_count(key, value);
  else if (key == "m") config.m = detail::parse_count(key, value);
  else if (key == "lambda") config.lambda = detail::parse_real(key, value);
  else if (key == "smooth-sigma") config.smoothingSigma = detail::parse_real(key, value);
  else if (key == "bins") config.bins = parse_bin_layout(value);
  else if (key == "channel") config.channels = parse_channel_selection(value);
  else if (key == "threads") config.workers = std::max<std::size_t>(1, detail::parse_count(key, value));
  else if (key == "single-core") {
    if (value == "true" || value == "1") config.workers = 1;
  } else {
    return false;
  }
  return true;
}

}  // namespace unmask
