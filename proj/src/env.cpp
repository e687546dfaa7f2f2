// SPDX-License-Identifier: Apache-2.0
#include <tirgym/env.hpp>
#include <tirgym/error.hpp>

#include <cstdio>
#include <future>

namespace tirgym
{

std::string_view observation_kind_name(ObservationKind kind) noexcept
{
    switch (kind)
    {
        case ObservationKind::Initial: return "initial";
        case ObservationKind::ToolOutput: return "tool_output";
        case ObservationKind::ForceAnswer: return "force_answer";
    }
    return "unknown";
}

void EpisodeConfig::validate() const
{
    if (max_tool_calls < 1)
        throw Error(Errc::InvalidConfig, "max_tool_calls must be >= 1");
    grammar.validate();
}

std::string initial_observation_text(const TaskInstance& task)
{
    auto text = "Question: " + task.question;
    if (!task.options.empty())
    {
        text += "\nOptions:";
        for (auto const& o: task.options)
            text += "\n" + o.label + ") " + o.text;
    }
    return text;
}

void validate_task(const TaskInstance& task)
{
    if (trim(task.id).empty())
        throw Error(Errc::InvalidTask, "task id is empty");
    if (trim(task.question).empty())
        throw Error(Errc::InvalidTask, "task '" + task.id + "' has an empty question");
    if (trim(task.answer_key).empty())
        throw Error(Errc::InvalidTask, "task '" + task.id + "' has an empty answer key");
    if (task.options.empty())
        return;
    auto labels = std::set<std::string> {};
    for (auto const& o: task.options)
    {
        if (trim(o.label).empty())
            throw Error(Errc::InvalidTask, "task '" + task.id + "' has an option without a label");
        if (!labels.insert(o.label).second)
            throw Error(Errc::InvalidTask, "task '" + task.id + "' repeats option label '" + o.label + "'");
    }
    if (!labels.contains(task.answer_key))
        throw Error(Errc::InvalidTask, "answer key '" + task.answer_key + "' is not an option label");
}

Environment::Environment(ToolRuntime& runtime, EpisodeConfig defaults): _runtime(runtime), _defaults(std::move(defaults))
{
    _defaults.validate();
}

std::pair<std::string, Observation> Environment::reset(const TaskInstance& task, std::optional<EpisodeConfig> config)
{
    validate_task(task);
    for (auto const& ref: task.image_refs)
        if (!_runtime.images().contains(ref))
            throw Error(Errc::UnresolvableImage, "image '" + ref + "' not found in the image store");
    auto cfg = config.value_or(_defaults);
    cfg.validate();

    char id[32];
    std::snprintf(id, sizeof id, "ep-%08llu", static_cast<unsigned long long>(_next_id.fetch_add(1)));

    auto ep = std::make_shared<Episode>();
    ep->id = id;
    ep->task = task;
    ep->config = std::move(cfg);
    ep->trajectory.task_id = task.id;
    ep->trajectory.prompt = initial_observation_text(task);
    ep->trajectory.image_refs = task.image_refs;

    auto obs = Observation { ObservationKind::Initial, ep->trajectory.prompt, task.image_refs };
    {
        auto lock = std::unique_lock(_table_mutex);
        _episodes.emplace(ep->id, ep);
    }
    return { ep->id, std::move(obs) };
}

std::shared_ptr<Environment::Episode> Environment::lookup(const std::string& episode_id) const
{
    auto lock = std::shared_lock(_table_mutex);
    auto it = _episodes.find(episode_id);
    if (it == _episodes.end())
        throw Error(Errc::UnknownEpisode, "episode '" + episode_id + "' does not exist");
    return it->second;
}

StepResult Environment::step(const std::string& episode_id, const ParsedTurn& turn)
{
    auto ep = lookup(episode_id);
    auto lock = std::lock_guard(ep->mutex);
    if (ep->status == EpisodeStatus::Done)
        throw Error(Errc::EpisodeAlreadyDone, "episode '" + episode_id + "' has terminated");
    return apply(*ep, turn);
}

StepResult Environment::step_text(const std::string& episode_id, std::string_view raw)
{
    auto ep = lookup(episode_id);
    auto lock = std::lock_guard(ep->mutex);
    if (ep->status == EpisodeStatus::Done)
        throw Error(Errc::EpisodeAlreadyDone, "episode '" + episode_id + "' has terminated");
    return apply(*ep, parse_turn(raw, ep->config.grammar));
}

void Environment::finish(Episode& ep, TerminationReason reason)
{
    ep.status = EpisodeStatus::Done;
    ep.trajectory.termination = std::move(reason);
}

StepResult Environment::apply(Episode& ep, const ParsedTurn& turn)
{
    auto const& grammar = ep.config.grammar;
    auto& steps = ep.trajectory.steps;
    auto const push_policy = [&](SpanKind kind, std::string span) {
        steps.push_back(TrajectoryStep { Role::Policy, std::move(span), kind, false, std::nullopt, {} });
    };

    push_policy(SpanKind::Think, serialize_think(turn.think, grammar));

    if (!turn.is_tool_call())
    {
        push_policy(SpanKind::Answer, serialize_action(turn.action, grammar));
        ep.trajectory.final_answer = turn.answer().text;
        finish(ep, TerminationReason { TerminationKind::AnswerProduced, {} });
        return StepResult { std::nullopt, true, ep.trajectory.termination };
    }

    auto const& call = turn.tool_call();
    push_policy(SpanKind::ToolCall, serialize_action(turn.action, grammar));

    if (ep.status == EpisodeStatus::ForcedAnswer)
    {
        finish(ep, TerminationReason { TerminationKind::ProtocolViolation, "tool call after the tool-call limit" });
        return StepResult { std::nullopt, true, ep.trajectory.termination };
    }

    auto key = std::string {};
    try
    {
        key = canonical_call_key(call);
    }
    catch (const Error& e)
    {
        finish(ep, TerminationReason { TerminationKind::ProtocolViolation, e.detail() });
        return StepResult { std::nullopt, true, ep.trajectory.termination };
    }

    if (ep.config.terminate_on_repeat && ep.seen_call_keys.contains(key))
    {
        finish(ep, TerminationReason { TerminationKind::RepeatedToolCall, {} });
        return StepResult { std::nullopt, true, ep.trajectory.termination };
    }

    auto request = ToolRequest {};
    request.request_id = ep.id + "/" + std::to_string(ep.tool_calls_used + 1);
    request.episode_id = ep.id;
    request.tool = call.name;
    request.arguments = call.arguments;
    request.image_refs = ep.task.image_refs;
    if (auto it = ep.task.fixtures.find(key); it != ep.task.fixtures.end())
        request.fixture = it->second;

    auto result = _runtime.invoke(std::move(request));
    ep.tool_calls_used += 1;
    ep.seen_call_keys.insert(std::move(key));

    auto obs_text = result.status == ToolStatus::Ok
                        ? result.text
                        : "TOOL_ERROR: " + std::string(status_name(result.status)) + ": " + result.message;
    auto obs_span = render_observation(obs_text, grammar);
    steps.push_back(TrajectoryStep { Role::Environment, obs_span, SpanKind::Obs, true, result.status, result.image_refs });

    auto out = StepResult {};
    out.observation = Observation { ObservationKind::ToolOutput, obs_span, result.image_refs };

    if (ep.tool_calls_used >= ep.config.max_tool_calls)
    {
        if (ep.config.force_answer_on_limit)
        {
            ep.status = EpisodeStatus::ForcedAnswer;
            auto prompt = "\n" + ep.config.force_answer_prompt;
            steps.push_back(TrajectoryStep { Role::Environment, prompt, SpanKind::ForcePrompt, true, std::nullopt, {} });
            out.observation->kind = ObservationKind::ForceAnswer;
            out.observation->text += prompt;
        }
        else
        {
            finish(ep, TerminationReason { TerminationKind::ToolCallLimit, {} });
            out.done = true;
            out.termination = ep.trajectory.termination;
        }
    }
    return out;
}

std::vector<Environment::StepOutcome> Environment::step_batch(const std::vector<std::pair<std::string, ParsedTurn>>& items)
{
    // group by episode so same-episode items keep their relative order
    auto groups = std::vector<std::vector<std::size_t>> {};
    auto index = std::unordered_map<std::string, std::size_t> {};
    for (std::size_t i = 0; i < items.size(); ++i)
    {
        auto [it, inserted] = index.try_emplace(items[i].first, groups.size());
        if (inserted)
            groups.emplace_back();
        groups[it->second].push_back(i);
    }

    auto outcomes = std::vector<std::optional<StepOutcome>>(items.size());
    auto const run_group = [&](const std::vector<std::size_t>& group) {
        for (auto i: group)
        {
            try
            {
                outcomes[i] = step(items[i].first, items[i].second);
            }
            catch (const Error& e)
            {
                outcomes[i] = e;
            }
        }
    };
    auto tasks = std::vector<std::future<void>> {};
    for (std::size_t g = 1; g < groups.size(); ++g)
        tasks.push_back(std::async(std::launch::async, run_group, std::cref(groups[g])));
    if (!groups.empty())
        run_group(groups.front());
    for (auto& t: tasks)
        t.get();

    auto out = std::vector<StepOutcome> {};
    out.reserve(items.size());
    for (auto& o: outcomes)
        out.push_back(std::move(*o));
    return out;
}

Trajectory Environment::finalize(const std::string& episode_id)
{
    auto lock = std::unique_lock(_table_mutex);
    auto it = _episodes.find(episode_id);
    if (it == _episodes.end())
        throw Error(Errc::UnknownEpisode, "episode '" + episode_id + "' does not exist");
    auto ep = it->second;
    auto ep_lock = std::lock_guard(ep->mutex);
    if (ep->status != EpisodeStatus::Done)
        throw Error(Errc::EpisodeNotDone, "episode '" + episode_id + "' is still running");
    _episodes.erase(it);
    return std::move(ep->trajectory);
}

EpisodeStatus Environment::status(const std::string& episode_id) const
{
    auto ep = lookup(episode_id);
    auto lock = std::lock_guard(ep->mutex);
    return ep->status;
}

int Environment::tool_calls_used(const std::string& episode_id) const
{
    auto ep = lookup(episode_id);
    auto lock = std::lock_guard(ep->mutex);
    return ep->tool_calls_used;
}

std::size_t Environment::active_episodes() const
{
    auto lock = std::shared_lock(_table_mutex);
    return _episodes.size();
}

std::vector<std::string> Environment::episode_ids() const
{
    auto lock = std::shared_lock(_table_mutex);
    auto out = std::vector<std::string> {};
    for (auto const& [id, _]: _episodes)
        out.push_back(id);
    return out;
}

} // namespace tirgym
