// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/mock_tools.hpp>
#include <tirgym/toy.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tirgym
{

namespace
{

constexpr std::string_view evidence_placeholder = "{evidence}";

ToolCall zoom_call()
{
    return ToolCall { "image_zoom_in", Json { { "bbox_2d", { 0.75, 0.0, 0.98, 0.25 } } } };
}

ToolCall brighten_call()
{
    return ToolCall { "brightening", Json::object() };
}

std::vector<AnswerOption> marker_options()
{
    return { { "A", "Left-sided marker" }, { "B", "Right-sided marker" } };
}

ToolResult ok_fixture(std::string text)
{
    auto r = ToolResult {};
    r.text = std::move(text);
    return r;
}

ToolResult error_fixture(std::string message)
{
    auto r = ToolResult {};
    r.status = ToolStatus::ToolError;
    r.message = std::move(message);
    return r;
}

double log_sum_exp(const std::vector<double>& v)
{
    auto m = *std::max_element(v.begin(), v.end());
    double s = 0;
    for (auto x: v)
        s += std::exp(x - m);
    return m + std::log(s);
}

} // namespace

ToyPolicy ToyPolicy::initial()
{
    auto p = ToyPolicy {};
    auto const turn = [](std::string think, Action action) { return serialize_turn(ParsedTurn { std::move(think), std::move(action) }); };
    p.action_templates.resize(TemplateCount);
    p.action_templates[CallZoom] = turn("The corner marker decides the option, so enlarge the upper right region.", zoom_call());
    p.action_templates[CallBrighten] = turn("The image looks dim; raise its brightness before reading it.", brighten_call());
    p.action_templates[AnswerEvidence] =
        turn("Take the option named by the most recent tool output.", FinalAnswer { std::string(evidence_placeholder) });
    p.action_templates[AnswerA] = turn("Commit to the first option without further checks.", FinalAnswer { "A" });
    p.action_templates[AnswerB] = turn("Commit to the second option without further checks.", FinalAnswer { "B" });
    p.logits.assign(state_count, std::vector<double>(TemplateCount, 0.0));
    for (auto a: { AnswerEvidence, AnswerA, AnswerB })
        p.logits[state_index(0, false)][a] = std::log(2.0);
    return p;
}

int ToyPolicy::state_index(int turn, bool tool_used) noexcept
{
    return std::clamp(turn, 0, turn_cap - 1) * 2 + (tool_used ? 1 : 0);
}

std::vector<double> ToyPolicy::probabilities(int state) const
{
    auto const& row = logits.at(static_cast<std::size_t>(state));
    auto const lse = log_sum_exp(row);
    auto out = std::vector<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        out[j] = std::exp(row[j] - lse);
    return out;
}

double ToyPolicy::log_prob(int state, int action) const
{
    auto const& row = logits.at(static_cast<std::size_t>(state));
    return row.at(static_cast<std::size_t>(action)) - log_sum_exp(row);
}

double ToyPolicy::tool_use_probability() const
{
    auto p = probabilities(state_index(0, false));
    return p[CallZoom] + p[CallBrighten];
}

Json ToyPolicy::to_json() const
{
    return Json { { "schema", "tirgym.toy_policy" }, { "version", 1 }, { "action_templates", action_templates }, { "logits", logits } };
}

ToyPolicy ToyPolicy::from_json(const Json& j)
{
    if (!j.is_object() || j.value("schema", "") != "tirgym.toy_policy")
        throw Error(Errc::InvalidRequest, "not a toy policy document");
    if (j.value("version", 0) != 1)
        throw Error(Errc::VersionMismatch, "toy policy version must be 1");
    auto p = ToyPolicy {};
    p.action_templates = j.at("action_templates").get<std::vector<std::string>>();
    p.logits = j.at("logits").get<std::vector<std::vector<double>>>();
    if (p.action_templates.size() != TemplateCount || p.logits.size() != state_count)
        throw Error(Errc::InvalidRequest, "toy policy has the wrong shape");
    for (auto const& row: p.logits)
        if (row.size() != TemplateCount)
            throw Error(Errc::InvalidRequest, "toy policy has the wrong shape");
    return p;
}

std::optional<std::string> evidence_label(std::string_view observation)
{
    constexpr std::string_view marker = "option ";
    auto pos = observation.rfind(marker);
    if (pos == std::string_view::npos)
        return std::nullopt;
    auto rest = observation.substr(pos + marker.size());
    std::size_t n = 0;
    while (n < rest.size() && std::isalnum(static_cast<unsigned char>(rest[n])))
        ++n;
    if (n == 0)
        return std::nullopt;
    return std::string(rest.substr(0, n));
}

std::string render_toy_action(const ToyPolicy& policy, int action, const std::optional<std::string>& last_observation)
{
    auto text = policy.action_templates.at(static_cast<std::size_t>(action));
    auto pos = text.find(evidence_placeholder);
    if (pos == std::string::npos)
        return text;
    auto label = last_observation ? evidence_label(*last_observation) : std::nullopt;
    return text.replace(pos, evidence_placeholder.size(), label.value_or("A"));
}

std::vector<TaskInstance> make_toy_tasks(int count, std::uint64_t seed)
{
    auto rng = std::mt19937_64(seed);
    auto tasks = std::vector<TaskInstance> {};
    for (int i = 0; i < count; ++i)
    {
        auto t = TaskInstance {};
        char id[32];
        std::snprintf(id, sizeof id, "toy-%03d", i);
        t.id = id;
        t.question = "Which option does the corner marker indicate?";
        t.options = marker_options();
        t.answer_key = rng() % 2 == 0 ? "A" : "B";
        t.source = "toy";
        t.fixtures[canonical_call_key(zoom_call())] = ok_fixture("Zoomed corner shows a marker for option " + t.answer_key + ".");
        t.fixtures[canonical_call_key(brighten_call())] = ok_fixture("Brightened image; the marker is still unreadable.");
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void register_toy_tools(ToolRuntime& runtime)
{
    auto options = MockToolOptions {};
    options.workers = 1;
    if (!runtime.has_tool("image_zoom_in"))
        register_zoom_tool(runtime, options);
    if (!runtime.has_tool("brightening"))
        register_table_tools(runtime, options);
}

EpisodeConfig toy_episode_config()
{
    auto cfg = EpisodeConfig {};
    cfg.max_tool_calls = 2;
    return cfg;
}

ToyEpisode run_toy_episode(const ToyPolicy& policy, Environment& env, const TaskInstance& task,
                           const RewardConfig& reward, std::mt19937_64& rng, bool greedy)
{
    auto episode = ToyEpisode {};
    auto [id, initial] = env.reset(task);
    auto last_obs = std::optional<std::string> {};
    bool tool_used = false;
    auto uniform = std::uniform_real_distribution<double>(0.0, 1.0);
    for (int turn = 0;; ++turn)
    {
        auto const state = ToyPolicy::state_index(turn, tool_used);
        auto probs = policy.probabilities(state);
        int action = 0;
        if (greedy)
        {
            action = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        }
        else
        {
            auto u = uniform(rng);
            double acc = 0;
            action = static_cast<int>(probs.size()) - 1;
            for (std::size_t j = 0; j < probs.size(); ++j)
            {
                acc += probs[j];
                if (u < acc)
                {
                    action = static_cast<int>(j);
                    break;
                }
            }
        }
        episode.decisions.push_back(ToyDecision { state, action, policy.log_prob(state, action) });
        auto result = env.step_text(id, render_toy_action(policy, action, last_obs));
        if (action == ToyPolicy::CallZoom || action == ToyPolicy::CallBrighten)
            tool_used = true;
        if (result.observation)
            last_obs = result.observation->text;
        if (result.done)
            break;
    }
    episode.trajectory = env.finalize(id);
    for (auto const& step: episode.trajectory.steps)
    {
        if (step.span_kind == SpanKind::Think)
            episode.trainable_mask.push_back(true);
        else if (is_loss_masked(step.span_kind))
            episode.trainable_mask.push_back(false);
    }
    auto key = AnswerKey::from_task(task, reward.match_mode);
    episode.reward = total_reward(episode.trajectory, key, reward);
    auto yardstick = RewardConfig {};
    yardstick.grammar = reward.grammar;
    yardstick.match_mode = reward.match_mode;
    episode.default_reward = total_reward(episode.trajectory, key, yardstick);
    episode.trajectory.reward = episode.reward;
    return episode;
}

MaskedSequence toy_sequence(const ToyPolicy& policy, const ToyEpisode& episode)
{
    auto seq = MaskedSequence {};
    std::size_t d = 0;
    for (bool trainable: episode.trainable_mask)
    {
        if (trainable)
        {
            auto const& dec = episode.decisions.at(d++);
            seq.token_ids.push_back(dec.action);
            seq.logp_new.push_back(policy.log_prob(dec.state, dec.action));
            seq.logp_old.push_back(dec.logp_old);
        }
        else
        {
            seq.token_ids.push_back(-1);
            seq.logp_new.push_back(0.0);
            seq.logp_old.push_back(0.0);
        }
        seq.trainable_mask.push_back(trainable);
    }
    return seq;
}

namespace
{

// d logp(a|s) / d logits[s][j] = [j == a] - pi(j|s)
void accumulate_logit_grad(const ToyPolicy& policy, const ToyEpisode& episode, const std::vector<double>& dlogp,
                           std::vector<std::vector<double>>& grad)
{
    std::size_t d = 0;
    for (std::size_t k = 0; k < episode.trainable_mask.size(); ++k)
    {
        if (!episode.trainable_mask[k])
            continue;
        auto const& dec = episode.decisions.at(d++);
        if (dlogp[k] == 0.0)
            continue;
        auto probs = policy.probabilities(dec.state);
        auto& row = grad[static_cast<std::size_t>(dec.state)];
        for (std::size_t j = 0; j < probs.size(); ++j)
            row[j] += dlogp[k] * ((static_cast<int>(j) == dec.action ? 1.0 : 0.0) - probs[j]);
    }
}

std::vector<std::vector<double>> zero_grad(const ToyPolicy& policy)
{
    auto g = std::vector<std::vector<double>> {};
    for (auto const& row: policy.logits)
        g.emplace_back(row.size(), 0.0);
    return g;
}

} // namespace

double toy_surrogate(const ToyPolicy& policy, const std::vector<ToyEpisode>& group, std::span<const double> advantages,
                     const ClipConfig& cfg, std::vector<std::vector<double>>* grad_logits)
{
    auto rollout = RolloutGroup {};
    for (auto const& ep: group)
    {
        rollout.sequences.push_back(toy_sequence(policy, ep));
        rollout.rewards.push_back(ep.reward.total);
    }
    auto value = clipped_surrogate(rollout, advantages, cfg);
    if (grad_logits)
    {
        *grad_logits = zero_grad(policy);
        auto dlogp = clipped_surrogate_grad(rollout, advantages, cfg);
        for (std::size_t i = 0; i < group.size(); ++i)
            accumulate_logit_grad(policy, group[i], dlogp[i], *grad_logits);
    }
    return value;
}

double toy_nll(const ToyPolicy& policy, const ToyEpisode& episode, std::vector<std::vector<double>>* grad_logits)
{
    auto seq = toy_sequence(policy, episode);
    auto value = masked_nll(seq);
    if (grad_logits)
    {
        *grad_logits = zero_grad(policy);
        accumulate_logit_grad(policy, episode, masked_nll_grad(seq), *grad_logits);
    }
    return value;
}

ToyStepResult toy_grpo_step(const ToyPolicy& policy, Environment& env, const TaskInstance& task,
                            const RewardConfig& reward, int group_size, double learning_rate, const ClipConfig& cfg,
                            std::mt19937_64& rng)
{
    if (group_size < 2)
        throw Error(Errc::GroupTooSmall, "group_size must be >= 2");
    auto group = std::vector<ToyEpisode> {};
    auto rewards = std::vector<double> {};
    auto out = ToyStepResult { policy, {} };
    int tool_episodes = 0;
    for (int i = 0; i < group_size; ++i)
    {
        group.push_back(run_toy_episode(policy, env, task, reward, rng));
        auto const& ep = group.back();
        rewards.push_back(ep.reward.total);
        out.stats.mean_reward += ep.reward.total;
        out.stats.mean_default_reward += ep.default_reward.total;
        if (ep.trajectory.tool_call_count() > 0)
            ++tool_episodes;
    }
    auto const g = static_cast<double>(group_size);
    out.stats.mean_reward /= g;
    out.stats.mean_default_reward /= g;
    out.stats.tool_use_rate = tool_episodes / g;

    auto advantages = group_advantages(rewards, cfg);
    auto grad = std::vector<std::vector<double>> {};
    out.stats.surrogate = toy_surrogate(policy, group, advantages, cfg, &grad);
    double norm = 0;
    for (std::size_t s = 0; s < grad.size(); ++s)
        for (std::size_t j = 0; j < grad[s].size(); ++j)
        {
            norm += grad[s][j] * grad[s][j];
            out.policy.logits[s][j] += learning_rate * grad[s][j];
        }
    out.stats.grad_norm = std::sqrt(norm);
    return out;
}

ToyTrainResult train_toy(const ToyTrainConfig& cfg, const ToyMetricsSink& sink)
{
    cfg.clip.validate();
    if (cfg.groups < 1 || cfg.task_count < 1)
        throw Error(Errc::InvalidConfig, "groups and task_count must be positive");
    auto runtime_cfg = RuntimeConfig {};
    runtime_cfg.workers_per_tool = 1;
    auto runtime = ToolRuntime(runtime_cfg);
    register_toy_tools(runtime);
    auto env = Environment(runtime, toy_episode_config());
    auto tasks = make_toy_tasks(cfg.task_count, cfg.seed);
    auto reward = RewardConfig {};
    reward.scheme = cfg.scheme;

    auto rng = std::mt19937_64(cfg.seed);
    auto pick = std::uniform_int_distribution<std::size_t>(0, tasks.size() - 1);
    auto result = ToyTrainResult { ToyPolicy::initial(), 0, 0, {} };
    double total_default = 0;
    for (int step = 0; step < cfg.groups; ++step)
    {
        auto const& task = tasks[pick(rng)];
        auto next = toy_grpo_step(result.policy, env, task, reward, cfg.group_size, cfg.learning_rate, cfg.clip, rng);
        result.policy = std::move(next.policy);
        total_default += next.stats.mean_default_reward;
        if (sink)
            sink(step, next.stats);
        result.steps.push_back(next.stats);
    }
    result.mean_default_reward = total_default / cfg.groups;
    result.final_tool_use_probability = result.policy.tool_use_probability();
    return result;
}

Json toy_stats_to_json(int step, const ToyStepStats& stats)
{
    return Json { { "step", step },
                  { "mean_reward", stats.mean_reward },
                  { "mean_default_reward", stats.mean_default_reward },
                  { "tool_use_rate", stats.tool_use_rate },
                  { "surrogate", stats.surrogate },
                  { "grad_norm", stats.grad_norm } };
}

std::vector<SyntheticItem> enumerate_synthetic_space(ToolRuntime& runtime)
{
    register_toy_tools(runtime);
    auto cfg = toy_episode_config();
    auto env = Environment(runtime, cfg);

    auto actions = std::vector<ParsedTurn> {
        { "Enlarge the corner marker region.", zoom_call() },
        { "Raise the brightness first.", brighten_call() },
        { "The first option fits.", FinalAnswer { "A" } },
        { "The second option fits.", FinalAnswer { "B" } },
        { "The second option fits.", FinalAnswer { "B. Right-sided marker" } },
        { "scan the corner marker once more to confirm scan the corner marker once more to confirm scan the corner "
          "marker once more to confirm",
          FinalAnswer { "A" } },
    };
    auto const n = static_cast<int>(actions.size());

    auto out = std::vector<SyntheticItem> {};
    for (auto gold: { "A", "B" })
        for (bool zoom_ok: { true, false })
            for (bool brighten_ok: { true, false })
            {
                auto task = TaskInstance {};
                task.id = std::string("synth-") + gold + (zoom_ok ? "-zok" : "-zerr") + (brighten_ok ? "-bok" : "-berr");
                task.question = "Which option does the corner marker indicate?";
                task.options = marker_options();
                task.answer_key = gold;
                task.source = "synthetic";
                task.fixtures[canonical_call_key(zoom_call())] =
                    zoom_ok ? ok_fixture(std::string("Zoomed corner shows a marker for option ") + gold + ".")
                            : error_fixture("region could not be decoded");
                task.fixtures[canonical_call_key(brighten_call())] =
                    brighten_ok ? ok_fixture("Brightened image; the marker is still unreadable.")
                                : error_fixture("enhancement failed");

                // every episode ends within three turns, so enumerate length-3 action words and keep
                // one representative per consumed prefix (unused suffix all zero)
                for (int code = 0; code < n * n * n; ++code)
                {
                    int word[3] = { code / (n * n), (code / n) % n, code % n };
                    auto [id, obs] = env.reset(task);
                    int used = 0;
                    for (int t = 0; t < 3; ++t)
                    {
                        ++used;
                        if (env.step(id, actions[static_cast<std::size_t>(word[t])]).done)
                            break;
                    }
                    auto trajectory = env.finalize(id);
                    bool canonical = true;
                    for (int t = used; t < 3; ++t)
                        canonical = canonical && word[t] == 0;
                    if (canonical)
                        out.push_back(SyntheticItem { task, std::move(trajectory) });
                }
            }
    return out;
}

} // namespace tirgym
