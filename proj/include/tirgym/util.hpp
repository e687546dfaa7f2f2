// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tirgym
{

std::string_view trim(std::string_view s) noexcept;
std::vector<std::string_view> split_whitespace(std::string_view s);

/// 64-bit FNV-1a. Used for content addressing and stable trajectory ids.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::string hex64(std::uint64_t value);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Line-oriented `key = value` configuration, `#` starts a comment.
/// Values keep interior whitespace; the first `=` separates key from value.
class KeyValueConfig
{
  public:
    static KeyValueConfig parse(std::string_view text);
    static KeyValueConfig load(const std::filesystem::path& path);

    [[nodiscard]] bool contains(const std::string& key) const { return _values.contains(key); }
    [[nodiscard]] std::optional<std::string> get(const std::string& key) const;
    [[nodiscard]] std::string get_or(const std::string& key, std::string fallback) const;
    [[nodiscard]] long long get_int(const std::string& key, long long fallback) const;
    [[nodiscard]] double get_double(const std::string& key, double fallback) const;
    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;
    [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return _values; }

    void set(std::string key, std::string value) { _values[std::move(key)] = std::move(value); }
    [[nodiscard]] std::string serialize() const;

  private:
    std::map<std::string, std::string> _values;
};

} // namespace tirgym
