#include "lowlight/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lowlight/errors.hpp"

namespace lowlight {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string env_key(const std::string& key) {
    std::string out = "LLE_";
    for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(c)));
    return out;
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_string(ss.str(), path);
}

Config Config::from_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (!section.empty()) key = section + "." + key;
        cfg.file_[key] = value;
    }
    return cfg;
}

void Config::set_override(const std::string& key, const std::string& value) {
    overrides_[key] = value;
}

std::optional<std::string> Config::lookup(const std::string& key) const {
    if (auto it = overrides_.find(key); it != overrides_.end()) return it->second;
    if (const char* env = std::getenv(env_key(key).c_str())) return std::string(env);
    if (auto it = file_.find(key); it != file_.end()) return it->second;
    return std::nullopt;
}

bool Config::has(const std::string& key) const { return lookup(key).has_value(); }

std::string Config::get_string(const std::string& key, const std::string& def) const {
    return lookup(key).value_or(def);
}

std::string Config::require_string(const std::string& key) const {
    auto v = lookup(key);
    if (!v) throw ConfigError("missing required config key: " + key);
    return *v;
}

double Config::get_double(const std::string& key, double def) const {
    auto v = lookup(key);
    if (!v) return def;
    try {
        std::size_t pos = 0;
        const double d = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: " + *v);
    }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t def) const {
    auto v = lookup(key);
    if (!v) return def;
    std::int64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size())
        throw ConfigError("config key '" + key + "' is not an integer: " + *v);
    return out;
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto v = lookup(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + *v);
}

std::string Config::render() const {
    std::map<std::string, std::string> merged = file_;
    for (const auto& [k, v] : overrides_) merged[k] = v;
    std::ostringstream os;
    for (const auto& [k, v] : merged) os << k << " = \"" << v << "\"\n";
    return os.str();
}

}  // namespace lowlight
