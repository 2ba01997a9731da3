#include "humus/toml.hpp"

#include <fstream>

namespace humus {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

// strip a trailing comment that is not inside a string literal
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

}  // namespace

TomlTable TomlTable::parse(const std::string& text, const std::string& origin) {
    TomlTable t;
    t.origin_ = origin;
    std::string section;
    size_t lineno = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(sstr(origin, ":", lineno, ": unterminated section header '", line, "'"));
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(sstr(origin, ":", lineno, ": empty section name"));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(sstr(origin, ":", lineno, ": expected 'key = value', got '", line, "'"));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(sstr(origin, ":", lineno, ": empty key or value in '", line, "'"));
        const std::string full = section.empty() ? key : section + "." + key;
        if (t.values_.count(full))
            throw ConfigError(sstr(origin, ":", lineno, ": duplicate key '", full, "'"));
        t.values_[full] = value;
    }
    return t;
}

TomlTable TomlTable::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(sstr("cannot open config file ", path));
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse(text, path);
}

const std::string* TomlTable::find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string TomlTable::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (v->size() < 2 || v->front() != '"' || v->back() != '"')
        throw ConfigError(sstr(origin_, ": key '", key, "' must be a quoted string, got ", *v));
    return v->substr(1, v->size() - 2);
}

int64_t TomlTable::get_int(const std::string& key, int64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        const int64_t r = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(sstr(origin_, ": key '", key, "' must be an integer, got ", *v));
    }
}

double TomlTable::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        const double r = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(sstr(origin_, ": key '", key, "' must be a number, got ", *v));
    }
}

bool TomlTable::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError(sstr(origin_, ": key '", key, "' must be true or false, got ", *v));
}

std::vector<int64_t> TomlTable::get_int_array(const std::string& key,
                                              std::vector<int64_t> fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (v->size() < 2 || v->front() != '[' || v->back() != ']')
        throw ConfigError(sstr(origin_, ": key '", key, "' must be an array like [1, 2, 3], got ", *v));
    std::vector<int64_t> out;
    std::string inner = v->substr(1, v->size() - 2);
    std::istringstream in(inner);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ConfigError(sstr(origin_, ": array '", key, "' holds a non-integer item '", item, "'"));
        }
    }
    return out;
}

}  // namespace humus
