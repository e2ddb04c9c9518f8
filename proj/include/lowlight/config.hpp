#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lowlight {

// Flat key-value configuration. Files use a TOML subset: `[section]` headers
// and `key = value` lines (quoted strings, numbers, booleans; `#` comments).
// Keys flatten to "section.key". Lookup precedence: command-line override >
// LLE_<KEY> environment variable (dots as underscores, upper case) > file >
// default.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text, const std::string& origin = "<string>");

    void set_override(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& def) const;
    std::string require_string(const std::string& key) const;  // ConfigError naming the key
    double get_double(const std::string& key, double def) const;
    std::int64_t get_int(const std::string& key, std::int64_t def) const;
    bool get_bool(const std::string& key, bool def) const;

    // File + overrides rendered back to the flat TOML subset (sorted keys).
    std::string render() const;

    const std::map<std::string, std::string>& file_values() const { return file_; }

private:
    std::optional<std::string> lookup(const std::string& key) const;

    std::map<std::string, std::string> file_;
    std::map<std::string, std::string> overrides_;
};

}  // namespace lowlight
