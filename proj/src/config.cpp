#include "pagent/config.hpp"

#include "pagent/errors.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace pagent {

namespace {

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = text.find_last_not_of(" \t\r");
    return text.substr(begin, end - begin + 1);
}

// Parses a double-quoted string starting at `pos` (which must point at the
// opening quote); advances pos past the closing quote.
std::string parse_quoted(const std::string& text, std::size_t& pos, const std::string& where) {
    std::string out;
    ++pos; // opening quote
    while (pos < text.size()) {
        const char c = text[pos];
        if (c == '"') {
            ++pos;
            return out;
        }
        if (c == '\\' && pos + 1 < text.size()) {
            ++pos;
            switch (text[pos]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case '"': out.push_back('"'); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw ConfigError(where + ": unsupported escape '\\" +
                                  std::string(1, text[pos]) + "'");
            }
            ++pos;
            continue;
        }
        out.push_back(c);
        ++pos;
    }
    throw ConfigError(where + ": unterminated string");
}

KvConfig::Value parse_value(const std::string& raw, const std::string& where) {
    const std::string value = trim(raw);
    if (value.empty()) {
        throw ConfigError(where + ": missing value");
    }
    if (value.front() == '"') {
        std::size_t pos = 0;
        std::string parsed = parse_quoted(value, pos, where);
        if (trim(value.substr(pos)).size() > 0) {
            throw ConfigError(where + ": trailing characters after string");
        }
        return parsed;
    }
    if (value.front() == '[') {
        if (value.back() != ']') {
            throw ConfigError(where + ": unterminated array");
        }
        std::vector<std::string> items;
        std::size_t pos = 1;
        while (pos < value.size() - 1) {
            while (pos < value.size() - 1 &&
                   (std::isspace(static_cast<unsigned char>(value[pos])) || value[pos] == ',')) {
                ++pos;
            }
            if (pos >= value.size() - 1) {
                break;
            }
            if (value[pos] != '"') {
                throw ConfigError(where + ": arrays hold quoted strings only");
            }
            items.push_back(parse_quoted(value, pos, where));
        }
        return items;
    }
    if (value == "true") {
        return true;
    }
    if (value == "false") {
        return false;
    }
    try {
        if (value.find('.') != std::string::npos || value.find('e') != std::string::npos ||
            value.find('E') != std::string::npos) {
            std::size_t used = 0;
            const double parsed = std::stod(value, &used);
            if (used == value.size()) {
                return parsed;
            }
        } else {
            std::size_t used = 0;
            const std::int64_t parsed = std::stoll(value, &used);
            if (used == value.size()) {
                return parsed;
            }
        }
    } catch (const std::exception&) {
        // fall through
    }
    throw ConfigError(where + ": cannot parse value '" + value + "'");
}

// Strips a trailing comment, honoring quotes.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) {
            in_string = !in_string;
        } else if (c == '#' && !in_string) {
            return line.substr(0, i);
        }
    }
    return line;
}

} // namespace

KvConfig KvConfig::parse(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config: " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_text(text.str(), path.string());
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
    KvConfig config;
    config.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string stripped = trim(strip_comment(line));
        if (stripped.empty()) {
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected 'key = value'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(where + ": empty key");
        }
        config.values_[key] = parse_value(stripped.substr(eq + 1), where);
    }
    return config;
}

bool KvConfig::has(const std::string& key) const {
    return values_.count(key) > 0;
}

namespace {

template <typename T>
const T* get_as(const std::map<std::string, KvConfig::Value>& values, const std::string& key) {
    auto it = values.find(key);
    if (it == values.end()) {
        return nullptr;
    }
    return std::get_if<T>(&it->second);
}

} // namespace

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) {
        return fallback;
    }
    if (const auto* value = get_as<std::string>(values_, key)) {
        return *value;
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not a string");
}

std::string KvConfig::require_string(const std::string& key) const {
    if (!has(key)) {
        throw ConfigError(origin_ + ": missing required key '" + key + "'");
    }
    return get_string(key, "");
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) {
        return fallback;
    }
    if (const auto* value = get_as<std::int64_t>(values_, key)) {
        return *value;
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer");
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    if (!has(key)) {
        return fallback;
    }
    if (const auto* value = get_as<double>(values_, key)) {
        return *value;
    }
    if (const auto* value = get_as<std::int64_t>(values_, key)) {
        return static_cast<double>(*value);
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not a number");
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) {
        return fallback;
    }
    if (const auto* value = get_as<bool>(values_, key)) {
        return *value;
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not a boolean");
}

std::vector<std::string> KvConfig::get_list(const std::string& key,
                                            std::vector<std::string> fallback) const {
    if (!has(key)) {
        return fallback;
    }
    if (const auto* value = get_as<std::vector<std::string>>(values_, key)) {
        return *value;
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not an array");
}

} // namespace pagent
