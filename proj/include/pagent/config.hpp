#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace pagent {

// Flat `key = value` config file (a TOML-compatible subset): quoted
// strings, integers, floats, booleans, and arrays of quoted strings.
// '#' starts a comment outside strings.
class KvConfig {
public:
    using Value = std::variant<std::string, std::int64_t, double, bool,
                               std::vector<std::string>>;

    static KvConfig parse(const std::filesystem::path& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key,
                                      std::vector<std::string> fallback = {}) const;

private:
    std::map<std::string, Value> values_;
    std::string origin_;
};

} // namespace pagent
