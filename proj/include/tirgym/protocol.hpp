// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/util.hpp>

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

namespace tirgym
{

using Json = nlohmann::json;

/// Tag strings and repetition thresholds for the policy/environment grammar.
struct GrammarConfig
{
    std::string think_open = "<think>";
    std::string think_close = "</think>";
    std::string tool_open = "<tool_call>";
    std::string tool_close = "</tool_call>";
    std::string answer_open = "<answer>";
    std::string answer_close = "</answer>";
    std::string obs_open = "<obs>";
    std::string obs_close = "</obs>";
    int repetition_window = 8;
    int repetition_count = 3;

    /// Throws Errc::InvalidConfig when tags collide or thresholds are out of range.
    void validate() const;

    static GrammarConfig from_config(const KeyValueConfig& kv);
    static GrammarConfig load(const std::filesystem::path& path);
    [[nodiscard]] KeyValueConfig to_config() const;
};

struct ToolCall
{
    std::string name;
    Json arguments = Json::object();

    friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct FinalAnswer
{
    std::string text;

    friend bool operator==(const FinalAnswer&, const FinalAnswer&) = default;
};

using Action = std::variant<ToolCall, FinalAnswer>;

struct ParsedTurn
{
    std::string think;
    Action action;

    [[nodiscard]] bool is_tool_call() const noexcept { return std::holds_alternative<ToolCall>(action); }
    [[nodiscard]] const ToolCall& tool_call() const { return std::get<ToolCall>(action); }
    [[nodiscard]] const FinalAnswer& answer() const { return std::get<FinalAnswer>(action); }

    friend bool operator==(const ParsedTurn&, const ParsedTurn&) = default;
};

/// True for names made only of `[a-z0-9_]`, non-empty.
bool is_valid_tool_name(std::string_view name) noexcept;

/// Parses one complete policy emission: a think block followed by exactly one
/// tool_call or answer block, whitespace allowed only between and around blocks.
/// Throws Error with one of MissingThink, MultipleActions, MalformedToolJson,
/// UnclosedTag or TrailingContent.
ParsedTurn parse_turn(std::string_view raw, const GrammarConfig& cfg = {});

/// Inverse of parse_turn: the canonical text for a turn.
std::string serialize_turn(const ParsedTurn& turn, const GrammarConfig& cfg = {});
std::string serialize_think(std::string_view think, const GrammarConfig& cfg = {});
std::string serialize_action(const Action& action, const GrammarConfig& cfg = {});

std::string render_observation(std::string_view obs_text, const GrammarConfig& cfg = {});

/// Removes one surrounding obs tag pair; returns the input unchanged if it has none.
std::string strip_observation(std::string_view rendered, const GrammarConfig& cfg = {});

/// Canonical JSON: sorted keys, no whitespace, numbers in shortest round-trip
/// form with integral values written as integers. Throws NonSerializableArgument
/// for NaN/infinite numbers and non-JSON payloads.
std::string canonical_json(const Json& value);

/// `name` + ' ' + canonical_json(arguments). Byte-equal keys mean a repeated call.
std::string canonical_call_key(const ToolCall& call);

bool detect_repetitive_generation(std::string_view text, const GrammarConfig& cfg = {});

} // namespace tirgym
