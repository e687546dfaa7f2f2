// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/tool_runtime.hpp>

#include <algorithm>
#include <cmath>

namespace tirgym
{

std::string_view family_name(ToolFamily family) noexcept
{
    switch (family)
    {
        case ToolFamily::RegionRefinement: return "region_refinement";
        case ToolFamily::LocalizationSegmentation: return "localization_segmentation";
        case ToolFamily::VisualUnderstanding: return "visual_understanding";
        case ToolFamily::KnowledgeRetrieval: return "knowledge_retrieval";
    }
    return "unknown";
}

std::string_view status_name(ToolStatus status) noexcept
{
    switch (status)
    {
        case ToolStatus::Ok: return "ok";
        case ToolStatus::ToolError: return "tool_error";
        case ToolStatus::Timeout: return "timeout";
        case ToolStatus::Rejected: return "rejected";
    }
    return "unknown";
}

ToolStatus status_from_name(std::string_view name)
{
    if (name == "ok")
        return ToolStatus::Ok;
    if (name == "tool_error")
        return ToolStatus::ToolError;
    if (name == "timeout")
        return ToolStatus::Timeout;
    if (name == "rejected")
        return ToolStatus::Rejected;
    throw Error(Errc::InvalidRequest, "unknown tool status '" + std::string(name) + "'");
}

std::string_view health_name(HealthState state) noexcept
{
    switch (state)
    {
        case HealthState::Up: return "up";
        case HealthState::Degraded: return "degraded";
        case HealthState::Down: return "down";
    }
    return "unknown";
}

namespace
{

std::string_view arg_type_name(ArgType type) noexcept
{
    switch (type)
    {
        case ArgType::String: return "string";
        case ArgType::Number: return "number";
        case ArgType::Integer: return "integer";
        case ArgType::Boolean: return "boolean";
        case ArgType::NumberArray: return "number_array";
        case ArgType::StringArray: return "string_array";
        case ArgType::Object: return "object";
    }
    return "unknown";
}

bool is_integral(const Json& v)
{
    if (v.is_number_integer())
        return true;
    if (!v.is_number_float())
        return false;
    auto const d = v.get<double>();
    return std::isfinite(d) && d == std::floor(d);
}

std::optional<std::string> check_bounds(const std::string& name, const ArgField& field, double value)
{
    if (!std::isfinite(value))
        return "argument '" + name + "' must be finite";
    if (field.min && value < *field.min)
        return "argument '" + name + "' below minimum " + std::to_string(*field.min);
    if (field.max && value > *field.max)
        return "argument '" + name + "' above maximum " + std::to_string(*field.max);
    return std::nullopt;
}

std::optional<std::string> check_field(const std::string& name, const ArgField& field, const Json& v)
{
    auto const wrong_type = [&] {
        return std::optional<std::string>("argument '" + name + "' must be " + std::string(arg_type_name(field.type)));
    };
    switch (field.type)
    {
        case ArgType::String:
            if (!v.is_string())
                return wrong_type();
            break;
        case ArgType::Boolean:
            if (!v.is_boolean())
                return wrong_type();
            break;
        case ArgType::Object:
            if (!v.is_object())
                return wrong_type();
            break;
        case ArgType::Number:
        case ArgType::Integer:
            if (!v.is_number() || (field.type == ArgType::Integer && !is_integral(v)))
                return wrong_type();
            if (auto bad = check_bounds(name, field, v.get<double>()))
                return bad;
            break;
        case ArgType::NumberArray:
        case ArgType::StringArray:
            if (!v.is_array())
                return wrong_type();
            if (field.length && v.size() != *field.length)
                return "argument '" + name + "' must have " + std::to_string(*field.length) + " elements";
            for (auto const& item: v)
            {
                if (field.type == ArgType::StringArray ? !item.is_string() : !item.is_number())
                    return wrong_type();
                if (field.type == ArgType::NumberArray)
                    if (auto bad = check_bounds(name, field, item.get<double>()))
                        return bad;
            }
            break;
    }
    if (!field.one_of.empty() && std::find(field.one_of.begin(), field.one_of.end(), v) == field.one_of.end())
        return "argument '" + name + "' has a value outside its allowed set";
    return std::nullopt;
}

double quantile(std::vector<double> values, double q)
{
    if (values.empty())
        return 0.0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

constexpr std::size_t latency_window_size = 1024;

} // namespace

std::optional<std::string> validate_arguments(const ToolSpec& spec, const Json& arguments)
{
    if (!arguments.is_object())
        return std::string("arguments must be an object");
    for (auto const& [name, _]: arguments.items())
        if (!spec.argument_schema.contains(name))
            return "unknown argument '" + name + "'";
    for (auto const& [name, field]: spec.argument_schema)
    {
        auto it = arguments.find(name);
        if (it == arguments.end())
        {
            if (field.required)
                return "missing required argument '" + name + "'";
            continue;
        }
        if (auto bad = check_field(name, field, *it))
            return bad;
    }
    return std::nullopt;
}

void RuntimeConfig::validate() const
{
    if (workers_per_tool < 1)
        throw Error(Errc::InvalidConfig, "workers_per_tool must be >= 1");
    if (max_batch < 1)
        throw Error(Errc::InvalidConfig, "max_batch must be >= 1");
    if (queue_capacity < max_batch)
        throw Error(Errc::InvalidConfig, "queue_capacity must be >= max_batch");
    if (max_retries < 0)
        throw Error(Errc::InvalidConfig, "max_retries must be >= 0");
    if (per_call_timeout.count() <= 0)
        throw Error(Errc::InvalidConfig, "per_call_timeout must be positive");
}

ToolRuntime::ToolRuntime(RuntimeConfig config, std::shared_ptr<ImageStore> images):
    _config(config), _images(std::move(images))
{
    _config.validate();
    if (!_images)
        _images = std::make_shared<ImageStore>();
    _supervisor = std::thread([this] { supervisor_loop(); });
}

ToolRuntime::~ToolRuntime()
{
    _stopping = true;
    {
        auto lock = std::lock_guard(_supervisor_mutex);
        _supervisor_cv.notify_all();
    }
    if (_supervisor.joinable())
        _supervisor.join();

    auto lock = std::unique_lock(_registry_mutex);
    for (auto& [_, entry]: _tools)
    {
        {
            auto qlock = std::lock_guard(entry->queue_mutex);
            entry->not_empty.notify_all();
            entry->not_full.notify_all();
        }
        for (auto& worker: entry->workers)
            if (worker->thread.joinable())
                worker->thread.join();
        for (auto& job: entry->queue)
            if (!job.poison)
                job.promise->set_value(ToolResult { job.request.request_id, ToolStatus::ToolError, "runtime shutting down", {}, {}, {} });
        entry->queue.clear();
    }
}

void ToolRuntime::register_tool(ToolSpec spec, ToolFactory factory, std::optional<int> workers)
{
    if (!is_valid_tool_name(spec.name))
        throw Error(Errc::InvalidSchema, "tool name '" + spec.name + "' is not [a-z0-9_]+");
    if (!factory)
        throw Error(Errc::InvalidSchema, "tool '" + spec.name + "' has no implementation");
    for (auto const& [field_name, field]: spec.argument_schema)
    {
        if (field_name.empty())
            throw Error(Errc::InvalidSchema, "empty argument name in '" + spec.name + "'");
        if (field.min && field.max && *field.min > *field.max)
            throw Error(Errc::InvalidSchema, "argument '" + field_name + "' has min > max");
        if (field.length && field.type != ArgType::NumberArray && field.type != ArgType::StringArray)
            throw Error(Errc::InvalidSchema, "argument '" + field_name + "' has a length but is not an array");
    }
    auto const count = workers.value_or(_config.workers_per_tool);
    if (count < 1)
        throw Error(Errc::InvalidSchema, "tool '" + spec.name + "' needs at least one worker");

    ToolEntry* entry = nullptr;
    {
        auto lock = std::unique_lock(_registry_mutex);
        if (_tools.contains(spec.name))
            throw Error(Errc::DuplicateName, "tool '" + spec.name + "' is already registered");
        auto owned = std::make_unique<ToolEntry>();
        owned->spec = std::move(spec);
        owned->factory = std::move(factory);
        owned->configured_workers = count;
        owned->latency_window.reserve(latency_window_size);
        for (int i = 0; i < count; ++i)
            owned->workers.push_back(std::make_unique<Worker>());
        entry = owned.get();
        for (auto& worker: entry->workers)
            start_worker(*entry, *worker);
        _tools.emplace(entry->spec.name, std::move(owned));
    }

    // Wait for warm-up so a freshly registered tool reports Up.
    auto const deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (std::chrono::steady_clock::now() < deadline)
    {
        auto const ready = std::all_of(entry->workers.begin(), entry->workers.end(),
                                       [](auto const& w) { return w->alive.load() || w->exited.load(); });
        if (ready)
            break;
        std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
}

void ToolRuntime::start_worker(ToolEntry& entry, Worker& worker)
{
    if (worker.thread.joinable())
        worker.thread.join();
    worker.alive = false;
    worker.exited = false;
    worker.thread = std::thread([this, &entry, &worker] { worker_loop(entry, worker); });
}

ToolRuntime::ToolEntry* ToolRuntime::find(const std::string& tool) const
{
    auto lock = std::shared_lock(_registry_mutex);
    auto it = _tools.find(tool);
    return it == _tools.end() ? nullptr : it->second.get();
}

void ToolRuntime::worker_loop(ToolEntry& entry, Worker& worker)
{
    auto const die = [&] {
        worker.alive = false;
        worker.exited_at = std::chrono::steady_clock::now().time_since_epoch().count();
        worker.exited = true;
    };

    std::unique_ptr<Tool> tool;
    try
    {
        tool = entry.factory();
    }
    catch (...)
    {
        tool.reset();
    }
    if (!tool)
        return die();
    worker.alive = true;

    for (;;)
    {
        auto batch = std::vector<Job> {};
        {
            auto lock = std::unique_lock(entry.queue_mutex);
            entry.not_empty.wait(lock, [&] { return _stopping.load() || !entry.queue.empty(); });
            if (_stopping)
            {
                worker.alive = false;
                worker.exited = true;
                return;
            }
            if (entry.queue.front().poison)
            {
                entry.queue.pop_front();
                lock.unlock();
                return die();
            }
            auto const alive = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::count_if(entry.workers.begin(), entry.workers.end(),
                                                          [](auto const& w) { return w->alive.load(); })));
            auto const fair_share = (entry.queue.size() + alive - 1) / alive;
            auto const take = std::min<std::size_t>(static_cast<std::size_t>(_config.max_batch), fair_share);
            while (batch.size() < take && !entry.queue.empty() && !entry.queue.front().poison)
            {
                batch.push_back(std::move(entry.queue.front()));
                entry.queue.pop_front();
            }
            entry.not_full.notify_all();
        }

        for (std::size_t i = 0; i < batch.size(); ++i)
        {
            auto& job = batch[i];
            auto crashed = false;
            auto reason = std::string("injected crash");

            int pending = entry.pending_crashes.load();
            while (pending > 0 && !entry.pending_crashes.compare_exchange_weak(pending, pending - 1))
            {
            }
            if (pending > 0)
                crashed = true;
            else
            {
                try
                {
                    job.promise->set_value(execute(entry, *tool, job));
                }
                catch (const std::exception& e)
                {
                    crashed = true;
                    reason = e.what();
                }
                catch (...)
                {
                    crashed = true;
                    reason = "unknown fault";
                }
            }

            if (!crashed)
                continue;

            // The crashed job is retried; jobs not yet started go back untouched.
            {
                auto lock = std::lock_guard(entry.queue_mutex);
                for (std::size_t j = batch.size(); j-- > i + 1;)
                    entry.queue.push_front(std::move(batch[j]));
                job.attempts += 1;
                if (job.attempts > _config.max_retries)
                    job.promise->set_value(ToolResult { job.request.request_id, ToolStatus::ToolError,
                                                        "worker fault after " + std::to_string(job.attempts)
                                                            + " attempts: " + reason,
                                                        {}, {}, {} });
                else
                    entry.queue.push_front(std::move(job));
                entry.not_empty.notify_all();
            }
            return die();
        }
    }
}

ToolResult ToolRuntime::execute(ToolEntry& entry, Tool& tool, const Job& job)
{
    auto result = ToolResult {};
    result.request_id = job.request.request_id;
    if (job.request.fixture)
    {
        result.status = job.request.fixture->status;
        result.message = job.request.fixture->message;
        result.text = job.request.fixture->text;
        result.image_refs = job.request.fixture->image_refs;
        return result;
    }
    try
    {
        auto ctx = ToolContext { job.request, *_images };
        auto out = tool.run(job.request.arguments, ctx);
        if (out.text.empty() && out.image_refs.empty())
        {
            result.status = ToolStatus::ToolError;
            result.message = "tool '" + entry.spec.name + "' produced no output";
            return result;
        }
        result.text = std::move(out.text);
        result.image_refs = std::move(out.image_refs);
    }
    catch (const ToolRejected& e)
    {
        result.status = ToolStatus::Rejected;
        result.message = e.what();
    }
    catch (const ToolFailure& e)
    {
        result.status = ToolStatus::ToolError;
        result.message = e.what();
    }
    return result;
}

std::optional<std::future<ToolResult>> ToolRuntime::submit(ToolEntry& entry, ToolRequest request, ToolResult& immediate)
{
    if (auto violation = validate_arguments(entry.spec, request.arguments))
    {
        immediate = ToolResult { request.request_id, ToolStatus::Rejected, *violation, {}, {}, {} };
        return std::nullopt;
    }
    auto promise = std::make_shared<std::promise<ToolResult>>();
    auto future = promise->get_future();
    auto lock = std::unique_lock(entry.queue_mutex);
    auto const capacity = static_cast<std::size_t>(_config.queue_capacity);
    if (entry.queue.size() >= capacity)
    {
        if (!_config.block_when_full)
        {
            immediate = ToolResult { request.request_id, ToolStatus::ToolError, "QueueFull", {}, {}, {} };
            return std::nullopt;
        }
        entry.not_full.wait(lock, [&] { return _stopping.load() || entry.queue.size() < capacity; });
    }
    entry.queue.push_back(Job { std::move(request), std::move(promise), 0, false });
    entry.not_empty.notify_one();
    return future;
}

void ToolRuntime::record(ToolEntry& entry, const ToolResult& result)
{
    auto lock = std::lock_guard(entry.metrics_mutex);
    entry.calls += 1;
    if (result.status != ToolStatus::Ok)
        entry.errors += 1;
    auto const ms = static_cast<double>(result.latency.count()) / 1000.0;
    if (entry.latency_window.size() < latency_window_size)
        entry.latency_window.push_back(ms);
    else
        entry.latency_window[entry.latency_next] = ms;
    entry.latency_next = (entry.latency_next + 1) % latency_window_size;
}

ToolResult ToolRuntime::invoke(ToolRequest request)
{
    auto results = invoke_batch({ std::move(request) });
    return std::move(results.front());
}

std::vector<ToolResult> ToolRuntime::invoke_batch(std::vector<ToolRequest> requests)
{
    using clock = std::chrono::steady_clock;
    auto const start = clock::now();
    auto const deadline = start + _config.per_call_timeout;

    struct Slot
    {
        std::string request_id;
        ToolEntry* entry = nullptr;
        std::optional<std::future<ToolResult>> future;
        ToolResult result;
    };
    auto slots = std::vector<Slot>(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i)
    {
        auto& slot = slots[i];
        slot.request_id = requests[i].request_id;
        slot.entry = find(requests[i].tool);
        if (!slot.entry)
        {
            slot.result = ToolResult { requests[i].request_id, ToolStatus::Rejected,
                                       "UnknownTool: '" + requests[i].tool + "' is not registered", {}, {}, {} };
            continue;
        }
        slot.future = submit(*slot.entry, std::move(requests[i]), slot.result);
    }

    auto results = std::vector<ToolResult> {};
    results.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i)
    {
        auto& slot = slots[i];
        if (slot.future)
        {
            if (slot.future->wait_until(deadline) == std::future_status::ready)
                slot.result = slot.future->get();
            else
                slot.result = ToolResult { slot.request_id, ToolStatus::Timeout,
                                           "no result within " + std::to_string(_config.per_call_timeout.count()) + " ms",
                                           {}, {}, {} };
        }
        slot.result.latency = std::chrono::duration_cast<std::chrono::microseconds>(clock::now() - start);
        if (slot.entry)
            record(*slot.entry, slot.result);
        results.push_back(std::move(slot.result));
    }
    return results;
}

HealthStatus ToolRuntime::health(const std::string& tool) const
{
    auto* entry = find(tool);
    if (!entry)
        throw Error(Errc::UnknownTool, "tool '" + tool + "' is not registered");
    auto status = HealthStatus {};
    status.workers_configured = entry->configured_workers;
    status.workers_alive = static_cast<int>(std::count_if(entry->workers.begin(), entry->workers.end(),
                                                          [](auto const& w) { return w->alive.load(); }));
    if (status.workers_alive == status.workers_configured)
        status.state = HealthState::Up;
    else if (status.workers_alive == 0)
        status.state = HealthState::Down;
    else
        status.state = HealthState::Degraded;
    return status;
}

std::map<std::string, ToolMetrics> ToolRuntime::metrics() const
{
    auto out = std::map<std::string, ToolMetrics> {};
    auto lock = std::shared_lock(_registry_mutex);
    for (auto const& [name, entry]: _tools)
    {
        auto m = ToolMetrics {};
        {
            auto mlock = std::lock_guard(entry->metrics_mutex);
            m.calls = entry->calls;
            m.errors = entry->errors;
            m.p50_latency_ms = quantile(entry->latency_window, 0.50);
            m.p99_latency_ms = quantile(entry->latency_window, 0.99);
        }
        {
            auto qlock = std::lock_guard(entry->queue_mutex);
            m.queue_depth = entry->queue.size();
        }
        out.emplace(name, m);
    }
    return out;
}

std::vector<ToolSpec> ToolRuntime::list() const
{
    auto out = std::vector<ToolSpec> {};
    auto lock = std::shared_lock(_registry_mutex);
    for (auto const& [_, entry]: _tools)
        out.push_back(entry->spec);
    return out;
}

bool ToolRuntime::has_tool(const std::string& tool) const
{
    return find(tool) != nullptr;
}

std::optional<ToolSpec> ToolRuntime::spec(const std::string& tool) const
{
    auto* entry = find(tool);
    if (!entry)
        return std::nullopt;
    return entry->spec;
}

Json ToolRuntime::manifest() const
{
    auto tools = Json::array();
    for (auto const& spec: list())
    {
        auto schema = Json::object();
        for (auto const& [name, field]: spec.argument_schema)
        {
            auto f = Json { { "type", arg_type_name(field.type) }, { "required", field.required } };
            if (field.min)
                f["min"] = *field.min;
            if (field.max)
                f["max"] = *field.max;
            if (field.length)
                f["length"] = *field.length;
            if (!field.one_of.empty())
                f["one_of"] = field.one_of;
            if (!field.description.empty())
                f["description"] = field.description;
            schema[name] = std::move(f);
        }
        tools.push_back(Json {
            { "name", spec.name },
            { "family", family_name(spec.family) },
            { "returns_image", spec.returns_image },
            { "description", spec.description },
            { "arguments", std::move(schema) },
        });
    }
    return Json { { "schema", "tirgym.tool_manifest" }, { "version", 1 }, { "tools", std::move(tools) } };
}

void ToolRuntime::kill_worker(const std::string& tool)
{
    auto* entry = find(tool);
    if (!entry)
        throw Error(Errc::UnknownTool, "tool '" + tool + "' is not registered");
    auto lock = std::lock_guard(entry->queue_mutex);
    auto job = Job {};
    job.poison = true;
    entry->queue.push_front(std::move(job));
    entry->not_empty.notify_one();
}

void ToolRuntime::inject_crashes(const std::string& tool, int count)
{
    auto* entry = find(tool);
    if (!entry)
        throw Error(Errc::UnknownTool, "tool '" + tool + "' is not registered");
    entry->pending_crashes += count;
}

void ToolRuntime::supervisor_loop()
{
    while (!_stopping)
    {
        {
            auto lock = std::unique_lock(_supervisor_mutex);
            _supervisor_cv.wait_for(lock, _config.supervisor_interval);
        }
        if (_stopping)
            break;
        auto lock = std::shared_lock(_registry_mutex);
        // a dead worker stays down for one full interval so crash loops cannot spin
        auto const now = std::chrono::steady_clock::now().time_since_epoch();
        auto const backoff = std::chrono::duration_cast<std::chrono::steady_clock::duration>(_config.supervisor_interval);
        for (auto& [_, entry]: _tools)
            for (auto& worker: entry->workers)
                if (worker->exited.load() && !_stopping && now.count() - worker->exited_at.load() >= backoff.count())
                    start_worker(*entry, *worker);
    }
}

} // namespace tirgym
