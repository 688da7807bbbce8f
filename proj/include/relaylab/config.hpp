#pragma once

// Line-oriented experiment configuration.
//
//   # comment
//   key = value          top-level keys apply to every command
//   [db-build]
//   key = value          keys for one command, overriding top-level ones
//
// Every command declares its keys with defaults; anything else is rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "relaylab/errors.hpp"

namespace relaylab {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  /// Excluded from the config hash (output locations, worker count).
  bool presentation = false;
};

using ConfigSchema = std::vector<ConfigKey>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parsed file: section name ("" for top level) -> key -> value.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse(std::string_view text, const std::string& source = "<config>") {
    ConfigFile cf;
    std::string section;
    cf.sections[section];
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
      ++lineno;
      const auto hash = raw.find('#');
      const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (line.empty()) continue;
      const std::string where = source + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
        section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(where + ": empty section name");
        cf.sections[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = detail::trim(std::string_view(line).substr(0, eq));
      const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (!cf.sections[section].emplace(key, value).second) {
        throw ConfigError(where + ": duplicate key '" + key + "'");
      }
    }
    return cf;
  }
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Fully resolved settings for one command.
class Settings {
 public:
  Settings(std::string command, const ConfigSchema& schema) : command_(std::move(command)) {
    for (const ConfigKey& k : schema) {
      values_[k.name] = k.default_value;
      if (k.presentation) presentation_.insert(k.name);
    }
  }

  /// Applies top-level then command-section values from `file`. Keys in
  /// sections for other commands are checked against `all_schemas`.
  void apply(const ConfigFile& file, const std::map<std::string, ConfigSchema>& all_schemas) {
    std::set<std::string> known_anywhere;
    for (const auto& [cmd, schema] : all_schemas) {
      for (const ConfigKey& k : schema) known_anywhere.insert(k.name);
    }
    for (const auto& [section, kv] : file.sections) {
      if (section.empty()) {
        for (const auto& [k, v] : kv) {
          if (!known_anywhere.contains(k)) throw ConfigError("unknown key '" + k + "'");
          if (values_.contains(k)) values_[k] = v;
        }
        continue;
      }
      const auto it = all_schemas.find(section);
      if (it == all_schemas.end()) throw ConfigError("unknown section [" + section + "]");
      for (const auto& [k, v] : kv) {
        const bool known = std::any_of(it->second.begin(), it->second.end(),
                                       [&](const ConfigKey& ck) { return ck.name == k; });
        if (!known) throw ConfigError("unknown key '" + k + "' in section [" + section + "]");
      }
    }
    if (auto it = file.sections.find(command_); it != file.sections.end()) {
      for (const auto& [k, v] : it->second) values_[k] = v;
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw ConfigError("unknown key '" + key + "' for command " + command_);
    values_[key] = value;
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
  [[nodiscard]] const std::string& command() const noexcept { return command_; }

  [[nodiscard]] const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("key '" + key + "' is not defined for command " + command_);
    return it->second;
  }

  [[nodiscard]] double real(const std::string& key) const {
    const std::string& s = str(key);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  [[nodiscard]] std::uint64_t uint(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
      throw ConfigError(key + ": expected a nonnegative integer, got '" + s + "'");
    }
    return v;
  }

  [[nodiscard]] bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  [[nodiscard]] std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(str(key));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  [[nodiscard]] std::vector<double> real_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& s : list(key)) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError(key + ": bad list entry '" + s + "'");
      out.push_back(v);
    }
    return out;
  }

  [[nodiscard]] std::vector<std::uint64_t> uint_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const std::string& s : list(key)) {
      std::uint64_t v = 0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError(key + ": bad list entry '" + s + "'");
      out.push_back(v);
    }
    return out;
  }

  /// "command = ...", then every key in sorted order.
  [[nodiscard]] std::string echo() const {
    std::ostringstream out;
    out << "command = " << command_ << '\n';
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
    return out.str();
  }

  /// FNV-1a over the echo minus presentation-only keys, as 16 hex digits.
  [[nodiscard]] std::string hash() const {
    std::ostringstream out;
    out << "command = " << command_ << '\n';
    for (const auto& [k, v] : values_) {
      if (!presentation_.contains(k)) out << k << " = " << v << '\n';
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(out.str())));
    return buf;
  }

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
  std::set<std::string> presentation_;
};

}  // namespace relaylab
