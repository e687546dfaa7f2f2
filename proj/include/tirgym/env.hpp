// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/error.hpp>
#include <tirgym/trajectory.hpp>

#include <atomic>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <unordered_map>
#include <variant>

namespace tirgym
{

inline constexpr std::string_view default_force_answer_prompt =
    "Tool call limit reached. Using only the observations gathered so far, reply with a final "
    "<think>...</think><answer>...</answer> turn.";

struct EpisodeConfig
{
    int max_tool_calls = 6;
    bool terminate_on_repeat = true;
    bool force_answer_on_limit = true;
    GrammarConfig grammar;
    std::string force_answer_prompt = std::string(default_force_answer_prompt);

    void validate() const;
};

enum class ObservationKind
{
    Initial,
    ToolOutput,
    ForceAnswer,
};

std::string_view observation_kind_name(ObservationKind kind) noexcept;

struct Observation
{
    ObservationKind kind = ObservationKind::Initial;
    std::string text;
    std::vector<std::string> image_refs;
};

enum class EpisodeStatus
{
    Active,
    ForcedAnswer,
    Done,
};

struct StepResult
{
    std::optional<Observation> observation;
    bool done = false;
    std::optional<TerminationReason> termination;
};

/// Text of the initial observation: question plus labelled options.
std::string initial_observation_text(const TaskInstance& task);

/// Throws InvalidTask when the task violates its invariants.
void validate_task(const TaskInstance& task);

/// Hosts many concurrent episodes. Steps on one episode are serialized; steps on
/// different episodes proceed independently, including their tool dispatch.
class Environment
{
  public:
    explicit Environment(ToolRuntime& runtime, EpisodeConfig defaults = {});

    /// Throws InvalidTask or UnresolvableImage.
    std::pair<std::string, Observation> reset(const TaskInstance& task, std::optional<EpisodeConfig> config = std::nullopt);

    /// Throws UnknownEpisode or EpisodeAlreadyDone.
    StepResult step(const std::string& episode_id, const ParsedTurn& turn);
    /// Parses with the episode's grammar first; parse errors leave the episode untouched.
    StepResult step_text(const std::string& episode_id, std::string_view raw);

    using StepOutcome = std::variant<StepResult, Error>;
    /// Runs independent episodes concurrently; items for the same episode apply in order.
    std::vector<StepOutcome> step_batch(const std::vector<std::pair<std::string, ParsedTurn>>& items);

    /// Throws EpisodeNotDone or UnknownEpisode. Removes the episode.
    Trajectory finalize(const std::string& episode_id);

    [[nodiscard]] EpisodeStatus status(const std::string& episode_id) const;
    [[nodiscard]] int tool_calls_used(const std::string& episode_id) const;
    [[nodiscard]] std::size_t active_episodes() const;
    [[nodiscard]] std::vector<std::string> episode_ids() const;
    [[nodiscard]] ToolRuntime& runtime() noexcept { return _runtime; }
    [[nodiscard]] const EpisodeConfig& defaults() const noexcept { return _defaults; }

  private:
    struct Episode
    {
        std::string id;
        TaskInstance task;
        EpisodeConfig config;
        Trajectory trajectory;
        int tool_calls_used = 0;
        std::set<std::string> seen_call_keys;
        EpisodeStatus status = EpisodeStatus::Active;
        std::mutex mutex;
    };

    std::shared_ptr<Episode> lookup(const std::string& episode_id) const;
    StepResult apply(Episode& ep, const ParsedTurn& turn);
    static void finish(Episode& ep, TerminationReason reason);

    ToolRuntime& _runtime;
    EpisodeConfig _defaults;
    std::atomic<std::uint64_t> _next_id { 1 };
    mutable std::shared_mutex _table_mutex;
    std::unordered_map<std::string, std::shared_ptr<Episode>> _episodes;
};

} // namespace tirgym
