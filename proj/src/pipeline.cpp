// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/pipeline.hpp>

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace tirgym
{

inline constexpr std::string_view records_schema = "tirgym.records";
inline constexpr std::string_view sft_schema = "tirgym.sft";

Json record_to_json(const TrajectoryRecord& r)
{
    auto j = Json { { "trajectory", trajectory_to_json(r.trajectory) }, { "reward", reward_to_json(r.reward) }, { "weight", r.weight } };
    if (r.judge_score)
        j["judge_score"] = *r.judge_score;
    if (r.judge_unavailable)
        j["judge_unavailable"] = true;
    if (!r.judge_issues.empty())
        j["judge_issues"] = r.judge_issues;
    return j;
}

TrajectoryRecord record_from_json(const Json& j)
{
    if (!j.is_object() || !j.contains("trajectory") || !j.contains("reward"))
        throw Error(Errc::InvalidRequest, "record needs 'trajectory' and 'reward'");
    auto r = TrajectoryRecord {};
    r.trajectory = trajectory_from_json(j["trajectory"]);
    r.reward = reward_from_json(j["reward"]);
    r.weight = j.value("weight", 1.0);
    if (j.contains("judge_score") && j["judge_score"].is_number())
        r.judge_score = j["judge_score"].get<double>();
    r.judge_unavailable = j.value("judge_unavailable", false);
    if (j.contains("judge_issues"))
        r.judge_issues = j["judge_issues"].get<std::vector<std::string>>();
    if (!(r.weight >= 0))
        throw Error(Errc::InvalidRequest, "record weight must be non-negative");
    return r;
}

std::vector<TrajectoryRecord> load_records(const std::filesystem::path& path)
{
    auto out = std::vector<TrajectoryRecord> {};
    for (auto const& j: read_jsonl(path, records_schema, 1))
        out.push_back(record_from_json(j));
    return out;
}

void save_records(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records)
{
    auto lines = std::vector<Json> {};
    for (auto const& r: records)
        lines.push_back(record_to_json(r));
    write_jsonl(path, records_schema, 1, lines);
}

std::vector<TrajectoryRecord> records_from_trajectories(const std::vector<Trajectory>& trajectories)
{
    auto out = std::vector<TrajectoryRecord> {};
    for (auto const& t: trajectories)
    {
        if (!t.reward)
            throw Error(Errc::InvalidRequest, "trajectory for task '" + t.task_id + "' has no reward attached");
        auto r = TrajectoryRecord {};
        r.trajectory = t;
        r.reward = *t.reward;
        out.push_back(std::move(r));
    }
    return out;
}

FilterReport outcome_filter(const std::vector<TrajectoryRecord>& records)
{
    auto report = FilterReport {};
    for (auto const& r: records)
    {
        if (r.reward.format != 1)
            ++report.dropped_malformed;
        else if (r.reward.accuracy != 1)
            ++report.dropped_wrong_answer;
        else
            report.kept.push_back(r);
    }
    return report;
}

Json verdict_to_json(const JudgeVerdict& v)
{
    return Json { { "overall_score", v.overall_score }, { "dimension_scores", v.dimension_scores }, { "issues", v.issues } };
}

JudgeVerdict verdict_from_json(const Json& j)
{
    if (!j.is_object() || !j.contains("overall_score") || !j["overall_score"].is_number())
        throw Error(Errc::InvalidRequest, "verdict needs a numeric 'overall_score'");
    auto v = JudgeVerdict {};
    v.overall_score = j["overall_score"].get<double>();
    if (j.contains("dimension_scores"))
        v.dimension_scores = j["dimension_scores"].get<std::map<std::string, double>>();
    if (j.contains("issues"))
        v.issues = j["issues"].get<std::vector<std::string>>();
    return v;
}

void JudgeConfig::validate() const
{
    if (!(scale_min < scale_max))
        throw Error(Errc::InvalidConfig, "judge scale_min must be below scale_max");
    if (min_score < scale_min || min_score > scale_max)
        throw Error(Errc::InvalidConfig, "judge min_score must lie within the scale");
    for (auto const& [score, weight]: weight_map)
        if (!(weight >= 0))
            throw Error(Errc::InvalidConfig, "judge weights must be non-negative");
    if (think_min_chars > think_max_chars)
        throw Error(Errc::InvalidConfig, "think_min_chars exceeds think_max_chars");
}

JudgeConfig JudgeConfig::from_config(const KeyValueConfig& kv)
{
    auto cfg = JudgeConfig {};
    cfg.scale_min = kv.get_double("judge.scale_min", cfg.scale_min);
    cfg.scale_max = kv.get_double("judge.scale_max", cfg.scale_max);
    cfg.min_score = kv.get_double("judge.min_score", cfg.min_score);
    cfg.think_min_chars = static_cast<std::size_t>(kv.get_int("judge.think_min_chars", static_cast<long long>(cfg.think_min_chars)));
    cfg.think_max_chars = static_cast<std::size_t>(kv.get_int("judge.think_max_chars", static_cast<long long>(cfg.think_max_chars)));
    if (auto map = kv.get("judge.weight_map"))
    {
        // `score:weight` pairs separated by commas
        cfg.weight_map.clear();
        auto text = *map;
        std::size_t pos = 0;
        while (pos <= text.size())
        {
            auto end = text.find(',', pos);
            auto item = trim(std::string_view(text).substr(pos, end == std::string::npos ? std::string::npos : end - pos));
            auto colon = item.find(':');
            if (colon == std::string_view::npos)
                throw Error(Errc::InvalidConfig, "judge.weight_map entries look like score:weight");
            try
            {
                cfg.weight_map[std::stoi(std::string(item.substr(0, colon)))] = std::stod(std::string(item.substr(colon + 1)));
            }
            catch (const std::logic_error&)
            {
                throw Error(Errc::InvalidConfig, "bad judge.weight_map entry '" + std::string(item) + "'");
            }
            if (end == std::string::npos)
                break;
            pos = end + 1;
        }
    }
    cfg.validate();
    return cfg;
}

double JudgeConfig::weight_for(double score) const
{
    if (score < min_score)
        return 0.0;
    auto it = weight_map.find(static_cast<int>(std::lround(score)));
    return it == weight_map.end() ? 1.0 : it->second;
}

RuleJudge::RuleJudge(JudgeConfig cfg): _cfg(std::move(cfg))
{
    _cfg.validate();
}

JudgeVerdict RuleJudge::judge(const Trajectory& t)
{
    auto v = JudgeVerdict {};
    int calls = 0;
    int failed = 0;
    int bad_think = 0;
    auto const g = GrammarConfig {};
    for (auto const& step: t.steps)
    {
        if (step.span_kind == SpanKind::ToolCall)
            ++calls;
        if (step.span_kind == SpanKind::Obs && step.tool_status && *step.tool_status != ToolStatus::Ok)
            ++failed;
        if (step.span_kind == SpanKind::Think)
        {
            auto body = trim(step.span);
            if (body.starts_with(g.think_open))
                body.remove_prefix(g.think_open.size());
            if (body.ends_with(g.think_close))
                body.remove_suffix(g.think_close.size());
            auto n = trim(body).size();
            if (n < _cfg.think_min_chars || n > _cfg.think_max_chars)
                ++bad_think;
        }
    }
    v.dimension_scores["tool_use"] = calls > 0 ? 1.0 : 0.0;
    v.dimension_scores["tool_reliability"] = failed == 0 ? 1.0 : 0.0;
    v.dimension_scores["reasoning_length"] = bad_think == 0 ? 1.0 : 0.0;
    if (calls == 0)
    {
        v.overall_score = _cfg.scale_min;
        v.issues.push_back("no tool call");
        return v;
    }
    auto score = _cfg.scale_max;
    if (failed > 0)
    {
        score -= 1;
        v.issues.push_back(std::to_string(failed) + " tool call(s) did not return ok");
    }
    if (bad_think > 0)
    {
        score -= 1;
        v.issues.push_back(std::to_string(bad_think) + " think span(s) outside length bounds");
    }
    v.overall_score = std::max(score, _cfg.scale_min);
    return v;
}

HttpJudge::HttpJudge(std::string host, int port, std::string path, std::chrono::milliseconds timeout):
    _host(std::move(host)), _port(port), _path(std::move(path)), _timeout(timeout)
{
}

JudgeVerdict HttpJudge::judge(const Trajectory& t)
{
    auto client = httplib::Client(_host, _port);
    auto const secs = static_cast<time_t>(_timeout.count() / 1000);
    auto const usecs = static_cast<time_t>((_timeout.count() % 1000) * 1000);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    auto body = Json { { "version", "1" }, { "request_id", "judge-" + trajectory_hash(t) }, { "payload", { { "trajectory", trajectory_to_json(t) } } } };
    auto res = client.Post(_path, body.dump(), "application/json");
    if (!res)
        throw Error(Errc::JudgeUnavailable, "judge at " + _host + ":" + std::to_string(_port) + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(Errc::JudgeUnavailable, "judge answered HTTP " + std::to_string(res->status));
    auto reply = Json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("payload"))
        throw Error(Errc::JudgeUnavailable, "judge reply is not an envelope");
    try
    {
        return verdict_from_json(reply["payload"]);
    }
    catch (const Error& e)
    {
        throw Error(Errc::JudgeUnavailable, e.detail());
    }
}

TrajectoryRecord judge_and_weight(TrajectoryRecord record, Judge& judge, const JudgeConfig& cfg)
{
    cfg.validate();
    try
    {
        auto v = judge.judge(record.trajectory);
        if (!(v.overall_score >= cfg.scale_min && v.overall_score <= cfg.scale_max))
            throw Error(Errc::JudgeUnavailable, "verdict score outside the configured scale");
        record.judge_score = v.overall_score;
        record.judge_issues = v.issues;
        record.judge_unavailable = false;
        record.weight = cfg.weight_for(v.overall_score);
    }
    catch (const Error& e)
    {
        if (e.code() != Errc::JudgeUnavailable)
            throw;
        record.judge_score.reset();
        record.judge_issues = { e.detail() };
        record.judge_unavailable = true;
        record.weight = 1.0;
    }
    return record;
}

std::string action_sequence_key(const Trajectory& t, const GrammarConfig& cfg)
{
    auto key = t.task_id;
    for (std::size_t i = 0; i < t.steps.size(); ++i)
    {
        auto const& step = t.steps[i];
        if (step.span_kind != SpanKind::ToolCall && step.span_kind != SpanKind::Answer)
            continue;
        key += '\x1f';
        try
        {
            auto think = i > 0 && t.steps[i - 1].span_kind == SpanKind::Think ? t.steps[i - 1].span : serialize_think("x", cfg);
            auto turn = parse_turn(think + step.span, cfg);
            key += turn.is_tool_call() ? "call " + canonical_call_key(turn.tool_call()) : "answer " + turn.answer().text;
        }
        catch (const Error&)
        {
            key += "raw " + step.span;
        }
    }
    return key;
}

std::vector<TrajectoryRecord> dedup(const std::vector<TrajectoryRecord>& records, const GrammarConfig& cfg)
{
    auto hashes = std::vector<std::string> {};
    auto best = std::unordered_map<std::string, std::size_t> {};
    for (std::size_t i = 0; i < records.size(); ++i)
    {
        hashes.push_back(trajectory_hash(records[i].trajectory));
        auto key = action_sequence_key(records[i].trajectory, cfg);
        auto [it, inserted] = best.try_emplace(key, i);
        if (inserted)
            continue;
        auto const& cur = records[it->second];
        auto const score = records[i].judge_score.value_or(-INFINITY);
        auto const cur_score = cur.judge_score.value_or(-INFINITY);
        if (score > cur_score || (score == cur_score && hashes[i] < hashes[it->second]))
            it->second = i;
    }
    auto keep = std::vector<bool>(records.size(), false);
    for (auto const& [_, i]: best)
        keep[i] = true;
    auto out = std::vector<TrajectoryRecord> {};
    for (std::size_t i = 0; i < records.size(); ++i)
        if (keep[i])
            out.push_back(records[i]);
    return out;
}

std::string_view message_role_name(MessageRole role) noexcept
{
    switch (role)
    {
        case MessageRole::System: return "system";
        case MessageRole::User: return "user";
        case MessageRole::Assistant: return "assistant";
        case MessageRole::Environment: return "environment";
    }
    return "unknown";
}

Json sft_to_json(const SftExample& e)
{
    auto messages = Json::array();
    for (auto const& m: e.messages)
        messages.push_back(Json { { "role", message_role_name(m.role) }, { "text", m.text }, { "loss_mask", m.loss_mask } });
    return Json { { "task_id", e.task_id }, { "trajectory_hash", e.trajectory_hash }, { "messages", messages }, { "weight", e.weight } };
}

std::vector<SftExample> export_sft(const std::vector<TrajectoryRecord>& records, const std::string& system_prompt)
{
    auto out = std::vector<SftExample> {};
    for (auto const& r: records)
    {
        if (!(r.weight > 0))
            continue;
        auto e = SftExample {};
        e.task_id = r.trajectory.task_id;
        e.trajectory_hash = trajectory_hash(r.trajectory);
        e.weight = r.weight;
        e.messages.push_back({ MessageRole::System, system_prompt, false });
        e.messages.push_back({ MessageRole::User, r.trajectory.prompt, false });
        for (auto const& step: r.trajectory.steps)
        {
            auto const role = step.role == Role::Policy ? MessageRole::Assistant : MessageRole::Environment;
            // a think span opens a new assistant message; other spans extend the current one of their role
            bool const open_new = e.messages.back().role != role || step.span_kind == SpanKind::Think;
            if (open_new)
                e.messages.push_back({ role, step.span, role == MessageRole::Assistant });
            else
                e.messages.back().text += step.span;
        }
        out.push_back(std::move(e));
    }
    std::stable_sort(out.begin(), out.end(), [](auto const& a, auto const& b) {
        return std::tie(a.task_id, a.trajectory_hash) < std::tie(b.task_id, b.trajectory_hash);
    });
    return out;
}

void write_sft(const std::filesystem::path& path, const std::vector<SftExample>& examples)
{
    auto lines = std::vector<Json> {};
    for (auto const& e: examples)
        lines.push_back(sft_to_json(e));
    write_jsonl(path, sft_schema, 1, lines);
}

} // namespace tirgym
