// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/protocol.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <limits>

namespace tirgym
{

void GrammarConfig::validate() const
{
    auto const tags = std::array<const std::string*, 6> {
        &think_open, &think_close, &tool_open, &tool_close, &answer_open, &answer_close,
    };
    for (std::size_t i = 0; i < tags.size(); ++i)
    {
        if (tags[i]->empty())
            throw Error(Errc::InvalidConfig, "grammar tags must be non-empty");
        for (std::size_t j = i + 1; j < tags.size(); ++j)
            if (*tags[i] == *tags[j])
                throw Error(Errc::InvalidConfig, "grammar tag '" + *tags[i] + "' used twice");
    }
    if (obs_open.empty() || obs_close.empty())
        throw Error(Errc::InvalidConfig, "observation tags must be non-empty");
    if (repetition_window < 4)
        throw Error(Errc::InvalidConfig, "repetition_window must be >= 4");
    if (repetition_count < 2)
        throw Error(Errc::InvalidConfig, "repetition_count must be >= 2");
}

GrammarConfig GrammarConfig::from_config(const KeyValueConfig& kv)
{
    if (kv.get_int("version", 1) != 1)
        throw Error(Errc::VersionMismatch, "grammar config version must be 1");
    auto cfg = GrammarConfig {};
    cfg.think_open = kv.get_or("think_open", cfg.think_open);
    cfg.think_close = kv.get_or("think_close", cfg.think_close);
    cfg.tool_open = kv.get_or("tool_open", cfg.tool_open);
    cfg.tool_close = kv.get_or("tool_close", cfg.tool_close);
    cfg.answer_open = kv.get_or("answer_open", cfg.answer_open);
    cfg.answer_close = kv.get_or("answer_close", cfg.answer_close);
    cfg.obs_open = kv.get_or("obs_open", cfg.obs_open);
    cfg.obs_close = kv.get_or("obs_close", cfg.obs_close);
    cfg.repetition_window = static_cast<int>(kv.get_int("repetition_window", cfg.repetition_window));
    cfg.repetition_count = static_cast<int>(kv.get_int("repetition_count", cfg.repetition_count));
    cfg.validate();
    return cfg;
}

GrammarConfig GrammarConfig::load(const std::filesystem::path& path)
{
    return from_config(KeyValueConfig::load(path));
}

KeyValueConfig GrammarConfig::to_config() const
{
    auto kv = KeyValueConfig {};
    kv.set("version", "1");
    kv.set("think_open", think_open);
    kv.set("think_close", think_close);
    kv.set("tool_open", tool_open);
    kv.set("tool_close", tool_close);
    kv.set("answer_open", answer_open);
    kv.set("answer_close", answer_close);
    kv.set("obs_open", obs_open);
    kv.set("obs_close", obs_close);
    kv.set("repetition_window", std::to_string(repetition_window));
    kv.set("repetition_count", std::to_string(repetition_count));
    return kv;
}

bool is_valid_tool_name(std::string_view name) noexcept
{
    if (name.empty())
        return false;
    for (char c: name)
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'))
            return false;
    return true;
}

namespace
{

std::size_t skip_space(std::string_view s, std::size_t pos) noexcept
{
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' || s[pos] == '\r'))
        ++pos;
    return pos;
}

bool at(std::string_view s, std::size_t pos, std::string_view tag) noexcept
{
    return s.substr(pos, tag.size()) == tag;
}

struct Block
{
    bool is_tool = false;
    std::string_view body;
};

ToolCall parse_tool_payload(std::string_view body)
{
    auto payload = Json::parse(body.begin(), body.end(), nullptr, false);
    if (payload.is_discarded())
        throw Error(Errc::MalformedToolJson, "tool_call payload is not valid JSON");
    if (!payload.is_object())
        throw Error(Errc::MalformedToolJson, "tool_call payload must be an object");
    for (auto const& [key, _]: payload.items())
        if (key != "name" && key != "arguments")
            throw Error(Errc::MalformedToolJson, "unexpected field '" + key + "'");
    auto name_it = payload.find("name");
    if (name_it == payload.end() || !name_it->is_string())
        throw Error(Errc::MalformedToolJson, "missing string field 'name'");
    auto args_it = payload.find("arguments");
    if (args_it == payload.end() || !args_it->is_object())
        throw Error(Errc::MalformedToolJson, "missing object field 'arguments'");
    auto name = name_it->get<std::string>();
    if (!is_valid_tool_name(name))
        throw Error(Errc::MalformedToolJson, "tool name '" + name + "' is not [a-z0-9_]+");
    return ToolCall { std::move(name), std::move(*args_it) };
}

} // namespace

ParsedTurn parse_turn(std::string_view raw, const GrammarConfig& cfg)
{
    auto pos = skip_space(raw, 0);
    if (!at(raw, pos, cfg.think_open))
    {
        bool const action_first = at(raw, pos, cfg.tool_open) || at(raw, pos, cfg.answer_open);
        if (action_first || raw.find(cfg.think_open) == std::string_view::npos)
            throw Error(Errc::MissingThink, "turn must open with " + cfg.think_open);
        throw Error(Errc::TrailingContent, "content before " + cfg.think_open);
    }
    pos += cfg.think_open.size();
    auto const think_end = raw.find(cfg.think_close, pos);
    if (think_end == std::string_view::npos)
        throw Error(Errc::UnclosedTag, cfg.think_open + " is not closed");
    auto const think = raw.substr(pos, think_end - pos);
    if (trim(think).empty())
        throw Error(Errc::MissingThink, "think block is empty");
    pos = think_end + cfg.think_close.size();

    auto blocks = std::vector<Block> {};
    for (pos = skip_space(raw, pos); pos < raw.size(); pos = skip_space(raw, pos))
    {
        auto const is_tool = at(raw, pos, cfg.tool_open);
        if (!is_tool && !at(raw, pos, cfg.answer_open))
            throw Error(Errc::TrailingContent, "unexpected content at offset " + std::to_string(pos));
        auto const& open = is_tool ? cfg.tool_open : cfg.answer_open;
        auto const& close = is_tool ? cfg.tool_close : cfg.answer_close;
        auto const body_start = pos + open.size();
        auto const end = raw.find(close, body_start);
        if (end == std::string_view::npos)
            throw Error(Errc::UnclosedTag, open + " is not closed");
        blocks.push_back(Block { is_tool, raw.substr(body_start, end - body_start) });
        pos = end + close.size();
    }

    if (blocks.empty())
        throw Error(Errc::UnclosedTag, "turn ends without a tool_call or answer block");
    if (blocks.size() > 1)
        throw Error(Errc::MultipleActions, "a turn carries exactly one action, found " + std::to_string(blocks.size()));

    auto const& block = blocks.front();
    if (block.is_tool)
        return ParsedTurn { std::string(think), parse_tool_payload(block.body) };
    if (trim(block.body).empty())
        throw Error(Errc::UnclosedTag, "answer block is empty");
    return ParsedTurn { std::string(think), FinalAnswer { std::string(block.body) } };
}

std::string serialize_think(std::string_view think, const GrammarConfig& cfg)
{
    return cfg.think_open + std::string(think) + cfg.think_close;
}

std::string serialize_action(const Action& action, const GrammarConfig& cfg)
{
    if (auto const* call = std::get_if<ToolCall>(&action))
    {
        auto payload = Json::object();
        payload["name"] = call->name;
        payload["arguments"] = call->arguments;
        return cfg.tool_open + payload.dump() + cfg.tool_close;
    }
    return cfg.answer_open + std::get<FinalAnswer>(action).text + cfg.answer_close;
}

std::string serialize_turn(const ParsedTurn& turn, const GrammarConfig& cfg)
{
    return serialize_think(turn.think, cfg) + serialize_action(turn.action, cfg);
}

std::string render_observation(std::string_view obs_text, const GrammarConfig& cfg)
{
    return cfg.obs_open + std::string(obs_text) + cfg.obs_close;
}

std::string strip_observation(std::string_view rendered, const GrammarConfig& cfg)
{
    if (rendered.size() >= cfg.obs_open.size() + cfg.obs_close.size() && rendered.starts_with(cfg.obs_open)
        && rendered.ends_with(cfg.obs_close))
    {
        rendered.remove_prefix(cfg.obs_open.size());
        rendered.remove_suffix(cfg.obs_close.size());
    }
    return std::string(rendered);
}

namespace
{

constexpr double two_pow_63 = 9223372036854775808.0;

void append_double(std::string& out, double d)
{
    if (!std::isfinite(d))
        throw Error(Errc::NonSerializableArgument, "non-finite number");
    if (d == std::floor(d) && d >= -two_pow_63 && d < two_pow_63)
    {
        out += std::to_string(static_cast<std::int64_t>(d));
        return;
    }
    auto buf = std::array<char, 64> {};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), d);
    out.append(buf.data(), ptr);
}

void append_canonical(std::string& out, const Json& v)
{
    switch (v.type())
    {
        case Json::value_t::null: out += "null"; return;
        case Json::value_t::boolean: out += v.get<bool>() ? "true" : "false"; return;
        case Json::value_t::number_integer: out += std::to_string(v.get<std::int64_t>()); return;
        case Json::value_t::number_unsigned: {
            auto const u = v.get<std::uint64_t>();
            auto const d = static_cast<double>(u);
            if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) && d < 18446744073709551616.0
                && static_cast<std::uint64_t>(d) == u)
                append_double(out, d);
            else
                out += std::to_string(u);
            return;
        }
        case Json::value_t::number_float: append_double(out, v.get<double>()); return;
        case Json::value_t::string:
            try
            {
                out += v.dump();
            }
            catch (const Json::exception& e)
            {
                throw Error(Errc::NonSerializableArgument, e.what());
            }
            return;
        case Json::value_t::array: {
            out += '[';
            bool first = true;
            for (auto const& item: v)
            {
                if (!first)
                    out += ',';
                first = false;
                append_canonical(out, item);
            }
            out += ']';
            return;
        }
        case Json::value_t::object: {
            out += '{';
            bool first = true;
            for (auto const& [key, item]: v.items())
            {
                if (!first)
                    out += ',';
                first = false;
                append_canonical(out, Json(key));
                out += ':';
                append_canonical(out, item);
            }
            out += '}';
            return;
        }
        case Json::value_t::binary:
        case Json::value_t::discarded: break;
    }
    throw Error(Errc::NonSerializableArgument, "value has no JSON form");
}

} // namespace

std::string canonical_json(const Json& value)
{
    auto out = std::string {};
    append_canonical(out, value);
    return out;
}

std::string canonical_call_key(const ToolCall& call)
{
    return call.name + ' ' + canonical_json(call.arguments);
}

bool detect_repetitive_generation(std::string_view text, const GrammarConfig& cfg)
{
    auto const tokens = split_whitespace(text);
    auto const window = static_cast<std::size_t>(cfg.repetition_window);
    auto const needed = static_cast<std::size_t>(cfg.repetition_count - 1) * window;
    if (tokens.size() < window * static_cast<std::size_t>(cfg.repetition_count))
        return false;
    // count consecutive copies of a window == run of (count-1)*window positions
    // where token j equals token j+window
    std::size_t run = 0;
    for (std::size_t j = 0; j + window < tokens.size(); ++j)
    {
        run = tokens[j] == tokens[j + window] ? run + 1 : 0;
        if (run >= needed)
            return true;
    }
    return false;
}

} // namespace tirgym
