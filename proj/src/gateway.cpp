// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/gateway.hpp>

#include <httplib.h>

#include <sstream>

namespace tirgym
{

namespace
{

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& value)
{
    if (value.empty())
        return {};
    auto p = std::filesystem::path(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

const Json& require(const Json& payload, const char* name)
{
    auto it = payload.find(name);
    if (it == payload.end())
        throw Error(Errc::InvalidRequest, std::string("payload is missing '") + name + "'");
    return *it;
}

std::string require_string(const Json& payload, const char* name)
{
    auto const& v = require(payload, name);
    if (!v.is_string())
        throw Error(Errc::InvalidRequest, std::string("'") + name + "' must be a string");
    return v.get<std::string>();
}

Json envelope(std::string_view request_id, Json payload)
{
    return Json { { "version", wire_version }, { "request_id", request_id }, { "payload", std::move(payload) } };
}

Json error_body(std::string_view request_id, std::string_view code, std::string_view message)
{
    return Json { { "version", wire_version }, { "request_id", request_id }, { "error", { { "code", code }, { "message", message } } } };
}

ToolRequest tool_request_from_json(const Json& j)
{
    if (!j.is_object())
        throw Error(Errc::InvalidRequest, "tool request must be an object");
    auto r = ToolRequest {};
    r.tool = require_string(j, "tool");
    r.request_id = j.value("request_id", "");
    r.episode_id = j.value("episode_id", "");
    r.arguments = j.value("arguments", Json::object());
    if (j.contains("image_refs"))
        r.image_refs = j["image_refs"].get<std::vector<std::string>>();
    return r;
}

EpisodeConfig episode_overrides(EpisodeConfig cfg, const Json& j)
{
    if (!j.is_object())
        throw Error(Errc::InvalidRequest, "'config' must be an object");
    cfg.max_tool_calls = j.value("max_tool_calls", cfg.max_tool_calls);
    cfg.terminate_on_repeat = j.value("terminate_on_repeat", cfg.terminate_on_repeat);
    cfg.force_answer_on_limit = j.value("force_answer_on_limit", cfg.force_answer_on_limit);
    cfg.force_answer_prompt = j.value("force_answer_prompt", cfg.force_answer_prompt);
    return cfg;
}

} // namespace

ServerConfig ServerConfig::from_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir)
{
    if (kv.get_int("server.version", 1) != 1)
        throw Error(Errc::VersionMismatch, "server config version must be 1");
    auto cfg = ServerConfig {};
    cfg.host = kv.get_or("server.host", cfg.host);
    cfg.port = static_cast<int>(kv.get_int("server.port", cfg.port));
    cfg.threads = static_cast<int>(kv.get_int("server.threads", cfg.threads));
    cfg.tasks_path = resolve_path(base_dir, kv.get_or("server.tasks", ""));
    cfg.corpus_dir = resolve_path(base_dir, kv.get_or("server.corpus_dir", ""));
    cfg.image_root = resolve_path(base_dir, kv.get_or("server.image_root", ""));
    cfg.system_prompt_path = resolve_path(base_dir, kv.get_or("server.system_prompt", ""));
    cfg.simulated_latency = std::chrono::milliseconds(kv.get_int("server.simulated_latency_ms", 0));
    cfg.idempotency_cache = static_cast<std::size_t>(kv.get_int("server.idempotency_cache", 4096));

    cfg.runtime.workers_per_tool = static_cast<int>(kv.get_int("runtime.workers_per_tool", cfg.runtime.workers_per_tool));
    cfg.runtime.max_batch = static_cast<int>(kv.get_int("runtime.max_batch", cfg.runtime.max_batch));
    cfg.runtime.queue_capacity = static_cast<int>(kv.get_int("runtime.queue_capacity", cfg.runtime.queue_capacity));
    cfg.runtime.per_call_timeout = std::chrono::milliseconds(kv.get_int("runtime.timeout_ms", cfg.runtime.per_call_timeout.count()));
    cfg.runtime.max_retries = static_cast<int>(kv.get_int("runtime.max_retries", cfg.runtime.max_retries));
    cfg.runtime.block_when_full = kv.get_bool("runtime.block_when_full", cfg.runtime.block_when_full);
    cfg.runtime.validate();

    if (auto grammar = kv.get("grammar_config"))
        cfg.episode.grammar = GrammarConfig::load(resolve_path(base_dir, *grammar));
    cfg.episode.max_tool_calls = static_cast<int>(kv.get_int("episode.max_tool_calls", cfg.episode.max_tool_calls));
    cfg.episode.terminate_on_repeat = kv.get_bool("episode.terminate_on_repeat", cfg.episode.terminate_on_repeat);
    cfg.episode.force_answer_on_limit = kv.get_bool("episode.force_answer_on_limit", cfg.episode.force_answer_on_limit);
    if (auto prompt = kv.get("episode.force_answer_prompt_file"))
        cfg.episode.force_answer_prompt = std::string(trim(read_text_file(resolve_path(base_dir, *prompt))));
    cfg.episode.validate();

    if (auto reward = kv.get("reward_config"))
        cfg.reward = RewardConfig::load(resolve_path(base_dir, *reward));
    cfg.reward.grammar = cfg.episode.grammar;
    cfg.judge = JudgeConfig::from_config(kv);
    if (cfg.port < 0 || cfg.port > 65535 || cfg.threads < 1)
        throw Error(Errc::InvalidConfig, "server.port must be in [0, 65535] and server.threads >= 1");
    return cfg;
}

ServerConfig ServerConfig::load(const std::filesystem::path& path)
{
    return from_config(KeyValueConfig::load(path), path.parent_path());
}

Json observation_to_json(const Observation& o)
{
    return Json { { "kind", observation_kind_name(o.kind) }, { "text", o.text }, { "image_refs", o.image_refs } };
}

Observation observation_from_json(const Json& j)
{
    auto o = Observation {};
    auto kind = require_string(j, "kind");
    if (kind == "initial")
        o.kind = ObservationKind::Initial;
    else if (kind == "tool_output")
        o.kind = ObservationKind::ToolOutput;
    else if (kind == "force_answer")
        o.kind = ObservationKind::ForceAnswer;
    else
        throw Error(Errc::InvalidRequest, "unknown observation kind '" + kind + "'");
    o.text = require_string(j, "text");
    o.image_refs = j.value("image_refs", std::vector<std::string> {});
    return o;
}

Json step_result_to_json(const StepResult& r)
{
    auto j = Json { { "done", r.done } };
    if (r.observation)
        j["observation"] = observation_to_json(*r.observation);
    if (r.termination)
        j["termination"] = termination_to_json(*r.termination);
    return j;
}

StepResult step_result_from_json(const Json& j)
{
    auto r = StepResult {};
    r.done = require(j, "done").get<bool>();
    if (j.contains("observation"))
        r.observation = observation_from_json(j["observation"]);
    if (j.contains("termination"))
        r.termination = termination_from_json(j["termination"]);
    return r;
}

Json tool_result_wire_json(const ToolResult& r)
{
    auto j = tool_result_to_json(r);
    j["request_id"] = r.request_id;
    j["latency_us"] = r.latency.count();
    return j;
}

ToolResult tool_result_from_wire(const Json& j)
{
    auto r = tool_result_from_json(j);
    r.request_id = j.value("request_id", "");
    r.latency = std::chrono::microseconds(j.value("latency_us", std::int64_t { 0 }));
    return r;
}

Json health_to_json(const HealthStatus& h)
{
    return Json { { "state", health_name(h.state) }, { "workers_alive", h.workers_alive }, { "workers_configured", h.workers_configured } };
}

int http_status_for(Errc code) noexcept
{
    switch (code)
    {
        case Errc::UnknownEpisode:
        case Errc::UnknownTool: return 404;
        case Errc::EpisodeAlreadyDone:
        case Errc::EpisodeNotDone: return 409;
        case Errc::JudgeUnavailable: return 503;
        case Errc::IoError: return 500;
        default: return 400;
    }
}

Gateway::Gateway(Environment& env, std::map<std::string, TaskInstance> tasks, RewardConfig reward, JudgeConfig judge,
                 std::size_t idempotency_cache):
    _env(env), _tasks(std::move(tasks)), _reward(std::move(reward)), _judge(std::move(judge)),
    _cache_capacity(std::max<std::size_t>(idempotency_cache, 1))
{
    _reward.validate();
    _judge.validate();
}

Gateway::~Gateway()
{
    stop();
}

Gateway::Response Gateway::handle(std::string_view method, std::string_view path, const std::string& body)
{
    _requests.fetch_add(1);
    auto response = method == "GET" ? dispatch_get(path) : method == "POST" ? dispatch_post(path, body)
                                                                             : Response { 405, error_body("", "InvalidRequest", "method not allowed").dump() };
    if (response.status >= 400)
        _request_errors.fetch_add(1);
    return response;
}

Gateway::Response Gateway::idempotent(const std::string& key, const std::function<Response()>& compute)
{
    auto existing = std::shared_future<Response> {};
    auto promise = std::promise<Response> {};
    {
        auto lock = std::lock_guard(_cache_mutex);
        if (auto it = _cache.find(key); it != _cache.end())
        {
            existing = it->second;
        }
        else
        {
            _cache.emplace(key, promise.get_future().share());
            _cache_order.push_back(key);
            while (_cache_order.size() > _cache_capacity)
            {
                _cache.erase(_cache_order.front());
                _cache_order.pop_front();
            }
        }
    }
    // a retry of an applied request gets the first answer, even while that one is still running
    if (existing.valid())
        return existing.get();
    auto response = Response {};
    try
    {
        response = compute();
    }
    catch (const std::exception& e)
    {
        response = Response { 500, error_body("", "IoError", e.what()).dump() };
    }
    promise.set_value(response);
    return response;
}

Gateway::Response Gateway::dispatch_post(std::string_view path, const std::string& body)
{
    auto request = Json::parse(body, nullptr, false);
    auto request_id = std::string {};
    if (request.is_object() && request.contains("request_id") && request["request_id"].is_string())
        request_id = request["request_id"].get<std::string>();
    auto const fail = [&](const Error& e) {
        return Response { http_status_for(e.code()), error_body(request_id, errc_name(e.code()), e.detail()).dump() };
    };
    try
    {
        if (request.is_discarded() || !request.is_object())
            throw Error(Errc::InvalidRequest, "body is not a JSON object");
        if (!request.contains("version") || !request["version"].is_string())
            throw Error(Errc::InvalidRequest, "envelope is missing a string 'version'");
        if (request["version"].get<std::string>() != wire_version)
            throw Error(Errc::VersionMismatch,
                        "protocol version '" + request["version"].get<std::string>() + "' is not '" + std::string(wire_version) + "'");
        if (request_id.empty())
            throw Error(Errc::InvalidRequest, "envelope is missing a non-empty 'request_id'");
        if (!request.contains("payload") || !request["payload"].is_object())
            throw Error(Errc::InvalidRequest, "envelope is missing an object 'payload'");
        auto const& payload = request["payload"];

        Json (Gateway::*handler)(const Json&) = nullptr;
        bool once = false;
        if (path == "/v1/episodes")
            handler = &Gateway::reset, once = true;
        else if (path == "/v1/episodes/step")
            handler = &Gateway::step, once = true;
        else if (path == "/v1/episodes/batch_step")
            handler = &Gateway::batch_step, once = true;
        else if (path == "/v1/episodes/finalize")
            handler = &Gateway::finalize, once = true;
        else if (path == "/v1/tools/invoke")
            handler = &Gateway::invoke;
        else if (path == "/v1/tools/batch_invoke")
            handler = &Gateway::batch_invoke;
        else if (path == "/v1/judge")
            handler = &Gateway::judge;
        else if (path == "/v1/reward")
            handler = &Gateway::reward;
        else
            return Response { 404, error_body(request_id, "InvalidRequest", "no endpoint " + std::string(path)).dump() };

        auto const run = [&, handler]() -> Response {
            try
            {
                return Response { 200, envelope(request_id, (this->*handler)(payload)).dump() };
            }
            catch (const Error& e)
            {
                return fail(e);
            }
            catch (const Json::exception& e)
            {
                return fail(Error(Errc::InvalidRequest, e.what()));
            }
        };
        if (!once)
            return run();
        return idempotent(std::string(path) + '\x1f' + request_id, run);
    }
    catch (const Error& e)
    {
        return fail(e);
    }
}

Gateway::Response Gateway::dispatch_get(std::string_view path)
{
    try
    {
        if (path == "/metrics")
            return Response { 200, metrics_text(), "text/plain" };
        auto& runtime = _env.runtime();
        if (path == "/v1/tools")
            return Response { 200, envelope("", runtime.manifest()).dump() };
        if (path == "/v1/tasks")
        {
            auto ids = Json::array();
            for (auto const& [id, _]: _tasks)
                ids.push_back(id);
            return Response { 200, envelope("", Json { { "tasks", ids } }).dump() };
        }
        if (path == "/v1/health")
        {
            auto tools = Json::object();
            bool all_up = true;
            for (auto const& spec: runtime.list())
            {
                auto h = runtime.health(spec.name);
                all_up = all_up && h.state == HealthState::Up;
                tools[spec.name] = health_to_json(h);
            }
            return Response { 200, envelope("", Json { { "state", all_up ? "up" : "degraded" }, { "tools", tools } }).dump() };
        }
        constexpr std::string_view health_prefix = "/v1/health/";
        if (path.starts_with(health_prefix))
        {
            auto tool = std::string(path.substr(health_prefix.size()));
            if (!runtime.has_tool(tool))
                throw Error(Errc::UnknownTool, "no tool named '" + tool + "'");
            return Response { 200, envelope("", health_to_json(runtime.health(tool))).dump() };
        }
        return Response { 404, error_body("", "InvalidRequest", "no endpoint " + std::string(path)).dump() };
    }
    catch (const Error& e)
    {
        return Response { http_status_for(e.code()), error_body("", errc_name(e.code()), e.detail()).dump() };
    }
}

const TaskInstance& Gateway::task(const std::string& id) const
{
    auto it = _tasks.find(id);
    if (it == _tasks.end())
        throw Error(Errc::InvalidTask, "no task with id '" + id + "'");
    return it->second;
}

Json Gateway::reset(const Json& payload)
{
    auto t = payload.contains("task") ? task_from_json(payload["task"]) : task(require_string(payload, "task_id"));
    auto cfg = std::optional<EpisodeConfig> {};
    if (payload.contains("config"))
        cfg = episode_overrides(_env.defaults(), payload["config"]);
    auto [id, obs] = _env.reset(t, cfg);
    _episodes_started.fetch_add(1);
    return Json { { "episode_id", id }, { "observation", observation_to_json(obs) } };
}

Json Gateway::step(const Json& payload)
{
    auto result = _env.step_text(require_string(payload, "episode_id"), require_string(payload, "turn"));
    return step_result_to_json(result);
}

Json Gateway::batch_step(const Json& payload)
{
    auto const& items = require(payload, "items");
    if (!items.is_array())
        throw Error(Errc::InvalidRequest, "'items' must be an array");
    auto out = std::vector<Json>(items.size());
    auto parsed = std::vector<std::pair<std::string, ParsedTurn>> {};
    auto slots = std::vector<std::size_t> {};
    for (std::size_t i = 0; i < items.size(); ++i)
    {
        try
        {
            auto id = require_string(items[i], "episode_id");
            auto raw = require_string(items[i], "turn");
            (void)_env.status(id); // unknown episodes fail before their turn is parsed
            // episodes created through the gateway share the default grammar
            parsed.emplace_back(std::move(id), parse_turn(raw, _env.defaults().grammar));
            slots.push_back(i);
        }
        catch (const Error& e)
        {
            out[i] = Json { { "error", { { "code", errc_name(e.code()) }, { "message", e.detail() } } } };
        }
    }
    auto outcomes = _env.step_batch(parsed);
    for (std::size_t k = 0; k < outcomes.size(); ++k)
    {
        if (auto* r = std::get_if<StepResult>(&outcomes[k]))
            out[slots[k]] = step_result_to_json(*r);
        else
        {
            auto const& e = std::get<Error>(outcomes[k]);
            out[slots[k]] = Json { { "error", { { "code", errc_name(e.code()) }, { "message", e.detail() } } } };
        }
    }
    return Json { { "results", out } };
}

Json Gateway::finalize(const Json& payload)
{
    auto t = _env.finalize(require_string(payload, "episode_id"));
    _episodes_finalized.fetch_add(1);
    return Json { { "trajectory", trajectory_to_json(t) } };
}

Json Gateway::invoke(const Json& payload)
{
    auto request = tool_request_from_json(payload);
    return Json { { "result", tool_result_wire_json(_env.runtime().invoke(std::move(request))) } };
}

Json Gateway::batch_invoke(const Json& payload)
{
    auto const& items = require(payload, "requests");
    if (!items.is_array())
        throw Error(Errc::InvalidRequest, "'requests' must be an array");
    auto requests = std::vector<ToolRequest> {};
    for (auto const& item: items)
        requests.push_back(tool_request_from_json(item));
    auto results = Json::array();
    for (auto const& r: _env.runtime().invoke_batch(std::move(requests)))
        results.push_back(tool_result_wire_json(r));
    return Json { { "results", results } };
}

Json Gateway::judge(const Json& payload)
{
    auto t = trajectory_from_json(require(payload, "trajectory"));
    auto judge = RuleJudge(_judge);
    return verdict_to_json(judge.judge(t));
}

Json Gateway::reward(const Json& payload)
{
    auto t = trajectory_from_json(require(payload, "trajectory"));
    auto const& task_instance = payload.contains("task") ? task_from_json(payload["task"]) : task(t.task_id);
    return reward_to_json(total_reward(t, AnswerKey::from_task(task_instance, _reward.match_mode), _reward));
}

std::string Gateway::metrics_text() const
{
    auto out = std::ostringstream {};
    out << "gateway_requests_total " << _requests.load() << '\n';
    out << "gateway_request_errors_total " << _request_errors.load() << '\n';
    out << "episodes_active " << _env.active_episodes() << '\n';
    out << "episodes_started_total " << _episodes_started.load() << '\n';
    out << "episodes_finalized_total " << _episodes_finalized.load() << '\n';
    auto& runtime = _env.runtime();
    for (auto const& [tool, m]: runtime.metrics())
    {
        auto h = runtime.health(tool);
        out << "tool_calls_total." << tool << ' ' << m.calls << '\n';
        out << "tool_errors_total." << tool << ' ' << m.errors << '\n';
        out << "tool_latency_p50_ms." << tool << ' ' << m.p50_latency_ms << '\n';
        out << "tool_latency_p99_ms." << tool << ' ' << m.p99_latency_ms << '\n';
        out << "tool_queue_depth." << tool << ' ' << m.queue_depth << '\n';
        out << "tool_workers_alive." << tool << ' ' << h.workers_alive << '\n';
    }
    return out.str();
}

int Gateway::start(const std::string& host, int port, int threads)
{
    if (_server)
        throw Error(Errc::InvalidRequest, "gateway already started");
    _server = std::make_unique<httplib::Server>();
    _server->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(std::max(threads, 1))); };
    auto const serve = [this](const httplib::Request& req, httplib::Response& res) {
        auto r = handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    _server->Get(R"(/.*)", serve);
    _server->Post(R"(/.*)", serve);
    int bound = port;
    if (port == 0)
        bound = _server->bind_to_any_port(host);
    else if (!_server->bind_to_port(host, port))
        bound = -1;
    if (bound < 0)
    {
        _server.reset();
        throw Error(Errc::IoError, "cannot bind " + host + ":" + std::to_string(port));
    }
    _listener = std::thread([this] { _server->listen_after_bind(); });
    // a stop() issued before the accept loop runs would otherwise be lost
    _server->wait_until_ready();
    return bound;
}

void Gateway::stop()
{
    if (!_server)
        return;
    _server->stop();
    if (_listener.joinable())
        _listener.join();
    _server.reset();
}

} // namespace tirgym
