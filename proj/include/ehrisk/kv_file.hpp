#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace ehrisk {

/// Plain-text `key = value` settings. Blank lines and lines starting with '#' are ignored.
class KeyValues {
  public:
    KeyValues() = default;

    /// Throws StorageError if unreadable, ParseError for a line without '='.
    static KeyValues read(const std::filesystem::path &path);
    static KeyValues parse(std::string_view text);

    void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
    [[nodiscard]] std::optional<std::string> get(std::string_view key) const;
    [[nodiscard]] bool contains(std::string_view key) const { return values_.find(key) != values_.end(); }
    [[nodiscard]] const std::map<std::string, std::string, std::less<>> &entries() const noexcept { return values_; }

    /// Typed accessors; throw ConfigError when the value does not parse.
    [[nodiscard]] double get_double(std::string_view key, double fallback) const;
    [[nodiscard]] long long get_int(std::string_view key, long long fallback) const;
    [[nodiscard]] std::string get_string(std::string_view key, std::string fallback) const;

  private:
    std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace ehrisk
