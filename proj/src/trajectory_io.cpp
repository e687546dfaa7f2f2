// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/trajectory.hpp>

#include <sstream>

namespace tirgym
{

std::string_view termination_name(TerminationKind kind) noexcept
{
    switch (kind)
    {
        case TerminationKind::AnswerProduced: return "answer_produced";
        case TerminationKind::RepeatedToolCall: return "repeated_tool_call";
        case TerminationKind::ToolCallLimit: return "tool_call_limit";
        case TerminationKind::ProtocolViolation: return "protocol_violation";
    }
    return "unknown";
}

std::string_view span_kind_name(SpanKind kind) noexcept
{
    switch (kind)
    {
        case SpanKind::Think: return "think";
        case SpanKind::ToolCall: return "tool_call";
        case SpanKind::Obs: return "obs";
        case SpanKind::Answer: return "answer";
        case SpanKind::ForcePrompt: return "force_prompt";
    }
    return "unknown";
}

namespace
{

TerminationKind termination_from_name(std::string_view name)
{
    for (auto k: { TerminationKind::AnswerProduced, TerminationKind::RepeatedToolCall, TerminationKind::ToolCallLimit,
                   TerminationKind::ProtocolViolation })
        if (termination_name(k) == name)
            return k;
    throw Error(Errc::InvalidRequest, "unknown termination '" + std::string(name) + "'");
}

SpanKind span_kind_from_name(std::string_view name)
{
    for (auto k: { SpanKind::Think, SpanKind::ToolCall, SpanKind::Obs, SpanKind::Answer, SpanKind::ForcePrompt })
        if (span_kind_name(k) == name)
            return k;
    throw Error(Errc::InvalidRequest, "unknown span kind '" + std::string(name) + "'");
}

template <typename T>
T field(const Json& j, const char* name)
{
    auto it = j.find(name);
    if (it == j.end())
        throw Error(Errc::InvalidRequest, std::string("missing field '") + name + "'");
    try
    {
        return it->get<T>();
    }
    catch (const Json::exception&)
    {
        throw Error(Errc::InvalidRequest, std::string("field '") + name + "' has the wrong type");
    }
}

template <typename T>
T field_or(const Json& j, const char* name, T fallback)
{
    auto it = j.find(name);
    if (it == j.end() || it->is_null())
        return fallback;
    return field<T>(j, name);
}

} // namespace

Json tool_result_to_json(const ToolResult& r)
{
    auto j = Json { { "status", status_name(r.status) }, { "text", r.text }, { "image_refs", r.image_refs } };
    if (!r.message.empty())
        j["message"] = r.message;
    return j;
}

ToolResult tool_result_from_json(const Json& j)
{
    auto r = ToolResult {};
    r.status = status_from_name(field_or<std::string>(j, "status", "ok"));
    r.text = field_or<std::string>(j, "text", "");
    r.message = field_or<std::string>(j, "message", "");
    r.image_refs = field_or<std::vector<std::string>>(j, "image_refs", {});
    return r;
}

int Trajectory::tool_call_count() const
{
    int n = 0;
    for (auto const& s: steps)
        n += s.span_kind == SpanKind::ToolCall ? 1 : 0;
    return n;
}

TaskInstance task_from_json(const Json& j)
{
    if (!j.is_object())
        throw Error(Errc::InvalidTask, "task must be an object");
    try
    {
        auto t = TaskInstance {};
        t.id = field<std::string>(j, "id");
        t.question = field<std::string>(j, "question");
        for (auto const& o: field_or<Json>(j, "options", Json::array()))
            t.options.push_back(AnswerOption { field<std::string>(o, "label"), field<std::string>(o, "text") });
        t.image_refs = field_or<std::vector<std::string>>(j, "image_refs", {});
        t.answer_key = field<std::string>(j, "answer_key");
        t.source = field_or<std::string>(j, "source", "");
        auto const fixtures = field_or<Json>(j, "fixtures", Json::object());
        for (auto const& [key, value]: fixtures.items())
            t.fixtures.emplace(key, tool_result_from_json(value));
        return t;
    }
    catch (const Error& e)
    {
        throw Error(Errc::InvalidTask, e.detail());
    }
}

Json task_to_json(const TaskInstance& t)
{
    auto options = Json::array();
    for (auto const& o: t.options)
        options.push_back(Json { { "label", o.label }, { "text", o.text } });
    auto fixtures = Json::object();
    for (auto const& [key, r]: t.fixtures)
        fixtures[key] = tool_result_to_json(r);
    return Json {
        { "id", t.id },          { "question", t.question }, { "options", options },   { "image_refs", t.image_refs },
        { "answer_key", t.answer_key }, { "source", t.source },     { "fixtures", fixtures },
    };
}

std::vector<TaskInstance> load_tasks(const std::filesystem::path& path)
{
    auto tasks = std::vector<TaskInstance> {};
    for (auto const& rec: read_jsonl(path, "tirgym.tasks", 1))
        tasks.push_back(task_from_json(rec));
    return tasks;
}

Json reward_to_json(const RewardBreakdown& r)
{
    return Json { { "format", r.format }, { "accuracy", r.accuracy }, { "tool_use", r.tool_use }, { "total", r.total } };
}

RewardBreakdown reward_from_json(const Json& j)
{
    return RewardBreakdown { field<double>(j, "format"), field<double>(j, "accuracy"), field<double>(j, "tool_use"),
                             field<double>(j, "total") };
}

Json trajectory_to_json(const Trajectory& t)
{
    auto steps = Json::array();
    for (auto const& s: t.steps)
    {
        auto step = Json {
            { "role", s.role == Role::Policy ? "policy" : "environment" },
            { "span", s.span },
            { "span_kind", span_kind_name(s.span_kind) },
            { "loss_masked", s.loss_masked },
        };
        if (s.tool_status)
            step["tool_status"] = status_name(*s.tool_status);
        if (!s.image_refs.empty())
            step["image_refs"] = s.image_refs;
        steps.push_back(std::move(step));
    }
    auto termination = Json { { "kind", termination_name(t.termination.kind) } };
    if (!t.termination.detail.empty())
        termination["detail"] = t.termination.detail;
    auto j = Json {
        { "task_id", t.task_id },
        { "prompt", t.prompt },
        { "image_refs", t.image_refs },
        { "steps", std::move(steps) },
        { "final_answer", t.final_answer ? Json(*t.final_answer) : Json(nullptr) },
        { "termination", std::move(termination) },
    };
    if (t.reward)
        j["reward"] = reward_to_json(*t.reward);
    return j;
}

Trajectory trajectory_from_json(const Json& j)
{
    auto t = Trajectory {};
    t.task_id = field<std::string>(j, "task_id");
    t.prompt = field_or<std::string>(j, "prompt", "");
    t.image_refs = field_or<std::vector<std::string>>(j, "image_refs", {});
    for (auto const& s: field<Json>(j, "steps"))
    {
        auto step = TrajectoryStep {};
        step.role = field<std::string>(s, "role") == "policy" ? Role::Policy : Role::Environment;
        step.span = field<std::string>(s, "span");
        step.span_kind = span_kind_from_name(field<std::string>(s, "span_kind"));
        step.loss_masked = field<bool>(s, "loss_masked");
        if (s.contains("tool_status"))
            step.tool_status = status_from_name(field<std::string>(s, "tool_status"));
        step.image_refs = field_or<std::vector<std::string>>(s, "image_refs", {});
        t.steps.push_back(std::move(step));
    }
    if (auto it = j.find("final_answer"); it != j.end() && !it->is_null())
        t.final_answer = it->get<std::string>();
    auto const& term = field<Json>(j, "termination");
    t.termination.kind = termination_from_name(field<std::string>(term, "kind"));
    t.termination.detail = field_or<std::string>(term, "detail", "");
    if (auto it = j.find("reward"); it != j.end() && !it->is_null())
        t.reward = reward_from_json(*it);
    return t;
}

std::string trajectory_line(const Trajectory& t)
{
    return trajectory_to_json(t).dump();
}

std::string trajectory_hash(const Trajectory& t)
{
    auto copy = t;
    copy.reward.reset();
    return hex64(fnv1a64(trajectory_line(copy)));
}

std::string jsonl_header(std::string_view schema, int version)
{
    return Json { { "schema", schema }, { "version", version } }.dump();
}

std::vector<Json> read_jsonl(const std::filesystem::path& path, std::string_view schema, int version)
{
    auto text = read_text_file(path);
    auto in = std::istringstream(text);
    auto line = std::string {};
    auto records = std::vector<Json> {};
    auto header_seen = false;
    auto lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        if (trim(line).empty())
            continue;
        auto j = Json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(Errc::IoError, path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
        if (!header_seen)
        {
            header_seen = true;
            if (!j.is_object() || j.value("schema", "") != schema)
                throw Error(Errc::VersionMismatch, path.string() + ": expected schema header '" + std::string(schema) + "'");
            if (j.value("version", 0) != version)
                throw Error(Errc::VersionMismatch,
                            path.string() + ": unsupported version " + std::to_string(j.value("version", 0)));
            continue;
        }
        records.push_back(std::move(j));
    }
    if (!header_seen)
        throw Error(Errc::VersionMismatch, path.string() + ": missing schema header");
    return records;
}

void write_jsonl(const std::filesystem::path& path, std::string_view schema, int version, const std::vector<Json>& records)
{
    auto out = jsonl_header(schema, version) + "\n";
    for (auto const& r: records)
        out += r.dump() + "\n";
    write_file_atomic(path, out);
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path)
{
    auto out = std::vector<Trajectory> {};
    for (auto const& rec: read_jsonl(path, "tirgym.trajectory", trajectory_schema_version))
        out.push_back(trajectory_from_json(rec));
    return out;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories)
{
    auto records = std::vector<Json> {};
    for (auto const& t: trajectories)
        records.push_back(trajectory_to_json(t));
    write_jsonl(path, "tirgym.trajectory", trajectory_schema_version, records);
}

Json termination_to_json(const TerminationReason& r)
{
    auto j = Json { { "kind", termination_name(r.kind) } };
    if (!r.detail.empty())
        j["detail"] = r.detail;
    return j;
}

TerminationReason termination_from_json(const Json& j)
{
    return TerminationReason { termination_from_name(field<std::string>(j, "kind")), field_or<std::string>(j, "detail", "") };
}

} // namespace tirgym
