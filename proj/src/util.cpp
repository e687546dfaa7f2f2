// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/util.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace tirgym
{

namespace
{

bool is_space(char c) noexcept
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

} // namespace

std::string_view trim(std::string_view s) noexcept
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_whitespace(std::string_view s)
{
    auto out = std::vector<std::string_view> {};
    std::size_t i = 0;
    while (i < s.size())
    {
        while (i < s.size() && is_space(s[i]))
            ++i;
        auto const start = i;
        while (i < s.size() && !is_space(s[i]))
            ++i;
        if (i > start)
            out.push_back(s.substr(start, i - start));
    }
    return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b: bytes)
    {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept
{
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t value)
{
    static constexpr char digits[] = "0123456789abcdef";
    auto out = std::string(16, '0');
    for (int i = 15; i >= 0; --i)
    {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path)
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw Error(Errc::IoError, "cannot open " + path.string());
    auto ss = std::ostringstream {};
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path)
{
    auto text = read_text_file(path);
    return { text.begin(), text.end() };
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content)
{
    auto tmp = path;
    tmp += ".partial";
    {
        auto out = std::ofstream(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(Errc::IoError, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
        {
            out.close();
            std::filesystem::remove(tmp);
            throw Error(Errc::IoError, "short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

KeyValueConfig KeyValueConfig::parse(std::string_view text)
{
    auto cfg = KeyValueConfig {};
    auto lineno = 0;
    while (!text.empty())
    {
        ++lineno;
        auto const nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view {} : text.substr(nl + 1);

        line = trim(line);
        if (line.empty() || line.front() == '#')
            continue;
        auto const eq = line.find('=');
        if (eq == std::string_view::npos)
            throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty())
            throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": empty key");
        cfg._values[std::string(key)] = std::string(value);
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path)
{
    return parse(read_text_file(path));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const
{
    if (auto it = _values.find(key); it != _values.end())
        return it->second;
    return std::nullopt;
}

std::string KeyValueConfig::get_or(const std::string& key, std::string fallback) const
{
    auto v = get(key);
    return v ? *v : std::move(fallback);
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const
{
    auto v = get(key);
    if (!v)
        return fallback;
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc {} || ptr != v->data() + v->size())
        throw Error(Errc::InvalidConfig, key + ": not an integer: " + *v);
    return out;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const
{
    auto v = get(key);
    if (!v)
        return fallback;
    double out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc {} || ptr != v->data() + v->size())
        throw Error(Errc::InvalidConfig, key + ": not a number: " + *v);
    return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const
{
    auto v = get(key);
    if (!v)
        return fallback;
    if (*v == "true" || *v == "1" || *v == "yes")
        return true;
    if (*v == "false" || *v == "0" || *v == "no")
        return false;
    throw Error(Errc::InvalidConfig, key + ": not a boolean: " + *v);
}

std::string KeyValueConfig::serialize() const
{
    auto out = std::string {};
    for (auto const& [k, v]: _values)
        out += k + " = " + v + "\n";
    return out;
}

} // namespace tirgym
