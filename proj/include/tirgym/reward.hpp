// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/trajectory.hpp>

#include <array>
#include <optional>

namespace tirgym
{

enum class MatchMode
{
    Label,
    NormalizedText,
};

/// Default is the weighted three-component sum. Reward1 grades format·accuracy only.
/// Reward2 adds a tool bonus that does not depend on the answer being correct.
enum class RewardScheme
{
    Default,
    Reward1,
    Reward2,
};

std::string_view match_mode_name(MatchMode mode) noexcept;
std::string_view scheme_name(RewardScheme scheme) noexcept;
RewardScheme scheme_from_name(std::string_view name);

struct RewardConfig
{
    std::array<double, 3> weights { 1.0, 1.0, 1.0 }; ///< format, accuracy, tool_use
    MatchMode match_mode = MatchMode::Label;
    RewardScheme scheme = RewardScheme::Default;
    /// When false, any attempted tool call earns the tool component.
    bool require_ok_tool = true;
    GrammarConfig grammar;

    void validate() const;
    static RewardConfig from_config(const KeyValueConfig& kv);
    static RewardConfig load(const std::filesystem::path& path);
    [[nodiscard]] KeyValueConfig to_config() const;
};

struct AnswerKey
{
    std::string gold;
    std::vector<AnswerOption> options;
    MatchMode match_mode = MatchMode::Label;

    /// Throws InvalidTask when Label mode has a gold outside the option labels.
    void validate() const;
    static AnswerKey from_task(const TaskInstance& task, MatchMode mode = MatchMode::Label);
};

/// 1 when the span sequence is `(Think ToolCall Obs ForcePrompt?)* Think Answer`, each
/// think/action pair parses, and no policy span is repetitive.
int format_reward(const Trajectory& t, const GrammarConfig& cfg = {});

/// Lowercase, trim, collapse internal whitespace, strip trailing punctuation.
std::string normalize_text(std::string_view raw);

/// Canonical answer, or nullopt when nothing can be extracted (graded as wrong).
/// Label mode accepts `B`, `b.`, `B)`, `(B)`, `B: text`, `B text` (text must be that
/// option's text) or the bare option text.
std::optional<std::string> normalize_answer(std::string_view raw, const AnswerKey& key);

/// The text inside the last answer span, if any.
std::optional<std::string> extract_answer(const Trajectory& t, const GrammarConfig& cfg = {});

int accuracy_reward(const Trajectory& t, const AnswerKey& key, const RewardConfig& cfg = {});
/// Answer-conditioned tool credit: requires acc == 1 and a qualifying tool call.
int tool_use_reward(const Trajectory& t, int acc, const RewardConfig& cfg = {});
/// Whether the trajectory has a qualifying tool call, ignoring correctness.
bool has_tool_use(const Trajectory& t, const RewardConfig& cfg = {});

RewardBreakdown total_reward(const Trajectory& t, const AnswerKey& key, const RewardConfig& cfg = {});

} // namespace tirgym
