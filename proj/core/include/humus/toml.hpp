#pragma once

#include <map>

#include "humus/base.hpp"

namespace humus {

// Minimal TOML subset for experiment configs: [sections], key = value with
// strings, integers, floats, booleans and flat arrays of numbers. Keys are
// flattened to "section.key".
class TomlTable {
  public:
    static TomlTable parse(const std::string& text, const std::string& origin = "<string>");
    static TomlTable parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_array(const std::string& key, std::vector<int64_t> fallback) const;

    const std::map<std::string, std::string>& raw() const { return values_; }

  private:
    std::string origin_;
    std::map<std::string, std::string> values_;  // raw value text, trimmed

    const std::string* find(const std::string& key) const;
};

}  // namespace humus
