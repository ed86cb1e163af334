#include "ehrisk/kv_file.hpp"

#include "ehrisk/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ehrisk {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues KeyValues::read(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw StorageError("cannot open config file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

KeyValues KeyValues::parse(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto eol = text.find('\n');
        const std::string_view line = trim(text.substr(0, eol));
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(line_no, "expected key = value");
        }
        kv.set(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return kv;
}

std::optional<std::string> KeyValues::get(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

double KeyValues::get_double(std::string_view key, double fallback) const {
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used == v->size()) {
            return d;
        }
    } catch (const std::exception &) {
    }
    throw ConfigError("'" + std::string(key) + "' must be a number, got '" + *v + "'");
}

long long KeyValues::get_int(std::string_view key, long long fallback) const {
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) {
        throw ConfigError("'" + std::string(key) + "' must be an integer, got '" + *v + "'");
    }
    return out;
}

std::string KeyValues::get_string(std::string_view key, std::string fallback) const {
    const auto v = get(key);
    return v ? *v : std::move(fallback);
}

}  // namespace ehrisk
