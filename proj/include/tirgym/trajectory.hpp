// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/protocol.hpp>
#include <tirgym/tool_runtime.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tirgym
{

struct AnswerOption
{
    std::string label;
    std::string text;

    friend bool operator==(const AnswerOption&, const AnswerOption&) = default;
};

/// One verifiable question with its gold answer and optional scripted tool results,
/// keyed by canonical call key.
struct TaskInstance
{
    std::string id;
    std::string question;
    std::vector<AnswerOption> options;
    std::vector<std::string> image_refs;
    std::string answer_key;
    std::string source;
    std::map<std::string, ToolResult> fixtures;
};

enum class TerminationKind
{
    AnswerProduced,
    RepeatedToolCall,
    ToolCallLimit,
    ProtocolViolation,
};

std::string_view termination_name(TerminationKind kind) noexcept;

struct TerminationReason
{
    TerminationKind kind = TerminationKind::AnswerProduced;
    std::string detail; ///< only meaningful for ProtocolViolation

    friend bool operator==(const TerminationReason&, const TerminationReason&) = default;
};

enum class Role
{
    Policy,
    Environment,
};

enum class SpanKind
{
    Think,
    ToolCall,
    Obs,
    Answer,
    ForcePrompt,
};

std::string_view span_kind_name(SpanKind kind) noexcept;

/// Observation and force-prompt spans are excluded from every loss.
constexpr bool is_loss_masked(SpanKind kind) noexcept
{
    return kind == SpanKind::Obs || kind == SpanKind::ForcePrompt;
}

struct TrajectoryStep
{
    Role role = Role::Policy;
    std::string span; ///< full tagged text as it appears in the context
    SpanKind span_kind = SpanKind::Think;
    bool loss_masked = false;
    std::optional<ToolStatus> tool_status; ///< Obs spans only
    std::vector<std::string> image_refs;   ///< Obs spans only

    friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct RewardBreakdown
{
    double format = 0;
    double accuracy = 0;
    double tool_use = 0;
    double total = 0;

    friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

struct Trajectory
{
    std::string task_id;
    std::string prompt; ///< initial observation text
    std::vector<std::string> image_refs;
    std::vector<TrajectoryStep> steps;
    std::optional<std::string> final_answer;
    TerminationReason termination;
    std::optional<RewardBreakdown> reward;

    [[nodiscard]] int tool_call_count() const;
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline constexpr int trajectory_schema_version = 1;

/// Fixture form of a tool result: status, text, image_refs and message when set.
Json tool_result_to_json(const ToolResult& r);
ToolResult tool_result_from_json(const Json& j);

Json termination_to_json(const TerminationReason& r);
TerminationReason termination_from_json(const Json& j);

TaskInstance task_from_json(const Json& j);
Json task_to_json(const TaskInstance& task);
std::vector<TaskInstance> load_tasks(const std::filesystem::path& path);

Json reward_to_json(const RewardBreakdown& r);
RewardBreakdown reward_from_json(const Json& j);

Json trajectory_to_json(const Trajectory& t);
/// Unknown fields are ignored.
Trajectory trajectory_from_json(const Json& j);
/// Compact single-line form used in files and for hashing.
std::string trajectory_line(const Trajectory& t);
/// Stable identifier: hash of the trajectory without its reward.
std::string trajectory_hash(const Trajectory& t);

/// Line-delimited files whose first line is `{"schema": name, "version": n}`.
std::string jsonl_header(std::string_view schema, int version);
std::vector<Json> read_jsonl(const std::filesystem::path& path, std::string_view schema, int version);
void write_jsonl(const std::filesystem::path& path, std::string_view schema, int version, const std::vector<Json>& records);

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);
void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);

} // namespace tirgym
