// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/env.hpp>
#include <tirgym/grpo.hpp>
#include <tirgym/reward.hpp>

#include <functional>
#include <random>

namespace tirgym
{

/// Tabular softmax policy over complete turn templates. States are keyed by the
/// turn index (capped) and whether a tool has been used yet.
struct ToyPolicy
{
    static constexpr int turn_cap = 3;
    static constexpr int state_count = turn_cap * 2;

    enum Template : int
    {
        CallZoom,
        CallBrighten,
        AnswerEvidence,
        AnswerA,
        AnswerB,
        TemplateCount,
    };

    /// AnswerEvidence contains `{evidence}`, replaced by the label read from the last observation.
    std::vector<std::string> action_templates;
    std::vector<std::vector<double>> logits;

    /// Turn-0 answer templates start at logit ln 2, so the initial tool-use rate is 0.25.
    static ToyPolicy initial();
    static int state_index(int turn, bool tool_used) noexcept;

    [[nodiscard]] std::vector<double> probabilities(int state) const;
    [[nodiscard]] double log_prob(int state, int action) const;
    /// Probability that the first turn calls a tool.
    [[nodiscard]] double tool_use_probability() const;

    [[nodiscard]] Json to_json() const;
    static ToyPolicy from_json(const Json& j);

    friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;
};

/// The option label named by `option X` in an observation, if any.
std::optional<std::string> evidence_label(std::string_view observation);

/// Turn text for one template given the last observation seen.
std::string render_toy_action(const ToyPolicy& policy, int action, const std::optional<std::string>& last_observation);

/// Tasks whose gold label is revealed only by the image_zoom_in fixture.
std::vector<TaskInstance> make_toy_tasks(int count, std::uint64_t seed);

/// Registers the tools the toy task set calls, one worker each.
void register_toy_tools(ToolRuntime& runtime);

EpisodeConfig toy_episode_config();

struct ToyDecision
{
    int state = 0;
    int action = 0;
    double logp_old = 0;
};

struct ToyEpisode
{
    std::vector<ToyDecision> decisions;
    Trajectory trajectory;
    RewardBreakdown reward;         ///< under the training scheme
    RewardBreakdown default_reward; ///< under the default scheme, for comparison across schemes
    /// One trainable token per policy turn, one masked token per observation or force prompt.
    std::vector<bool> trainable_mask;
};

ToyEpisode run_toy_episode(const ToyPolicy& policy, Environment& env, const TaskInstance& task,
                           const RewardConfig& reward, std::mt19937_64& rng, bool greedy = false);

/// Builds the masked sequence of an episode with logp_new evaluated under `policy`.
MaskedSequence toy_sequence(const ToyPolicy& policy, const ToyEpisode& episode);

/// Clipped surrogate of a sampled group under `policy`, with its gradient with respect to the logits.
double toy_surrogate(const ToyPolicy& policy, const std::vector<ToyEpisode>& group, std::span<const double> advantages,
                     const ClipConfig& cfg, std::vector<std::vector<double>>* grad_logits);

/// Masked NLL of one episode under `policy`, with its gradient with respect to the logits.
double toy_nll(const ToyPolicy& policy, const ToyEpisode& episode, std::vector<std::vector<double>>* grad_logits);

struct ToyStepStats
{
    double mean_reward = 0;
    double mean_default_reward = 0;
    double tool_use_rate = 0;
    double surrogate = 0;
    double grad_norm = 0;
};

struct ToyStepResult
{
    ToyPolicy policy;
    ToyStepStats stats;
};

/// Samples `group_size` episodes of one task, grades them, and takes one ascent step on the surrogate.
ToyStepResult toy_grpo_step(const ToyPolicy& policy, Environment& env, const TaskInstance& task,
                            const RewardConfig& reward, int group_size, double learning_rate, const ClipConfig& cfg,
                            std::mt19937_64& rng);

struct ToyTrainConfig
{
    int groups = 2000;
    int group_size = 8;
    double learning_rate = 0.1;
    std::uint64_t seed = 1;
    int task_count = 16;
    RewardScheme scheme = RewardScheme::Default;
    ClipConfig clip;
};

struct ToyTrainResult
{
    ToyPolicy policy;
    double mean_default_reward = 0; ///< over every training episode
    double final_tool_use_probability = 0;
    std::vector<ToyStepStats> steps;
};

using ToyMetricsSink = std::function<void(int step, const ToyStepStats&)>;

ToyTrainResult train_toy(const ToyTrainConfig& cfg, const ToyMetricsSink& sink = {});

Json toy_stats_to_json(int step, const ToyStepStats& stats);

struct SyntheticItem
{
    TaskInstance task;
    Trajectory trajectory;
};

/// Every trajectory of a small space: two tools whose fixtures succeed or fail,
/// two options, gold A or B, at most three policy turns, with answer-surface and
/// repetitive-think variants. Drives the real environment to build each one.
std::vector<SyntheticItem> enumerate_synthetic_space(ToolRuntime& runtime);

} // namespace tirgym
