// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/image.hpp>
#include <tirgym/protocol.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tirgym
{

enum class ToolFamily
{
    RegionRefinement,
    LocalizationSegmentation,
    VisualUnderstanding,
    KnowledgeRetrieval,
};

std::string_view family_name(ToolFamily family) noexcept;

enum class ArgType
{
    String,
    Number,
    Integer,
    Boolean,
    NumberArray,
    StringArray,
    Object,
};

struct ArgField
{
    ArgType type = ArgType::String;
    bool required = false;
    std::optional<double> min;        ///< numeric bound, applies element-wise to arrays
    std::optional<double> max;
    std::optional<std::size_t> length; ///< exact array length
    std::vector<Json> one_of;          ///< allowed values when non-empty
    std::string description;
};

struct ToolSpec
{
    std::string name;
    ToolFamily family = ToolFamily::RegionRefinement;
    std::map<std::string, ArgField> argument_schema;
    bool returns_image = false;
    std::string description;
};

/// Returns a description of the first schema violation, naming the field.
std::optional<std::string> validate_arguments(const ToolSpec& spec, const Json& arguments);

enum class ToolStatus
{
    Ok,
    ToolError,
    Timeout,
    Rejected,
};

std::string_view status_name(ToolStatus status) noexcept;
ToolStatus status_from_name(std::string_view name);

struct ToolResult
{
    std::string request_id;
    ToolStatus status = ToolStatus::Ok;
    std::string message; ///< error text or schema violation; empty when Ok
    std::string text;
    std::vector<std::string> image_refs;
    std::chrono::microseconds latency { 0 };
};

struct ToolRequest
{
    std::string request_id;
    std::string episode_id;
    std::string tool;
    Json arguments = Json::object();
    std::vector<std::string> image_refs;
    /// Scripted result supplied by the task; replaces the tool's own output.
    std::optional<ToolResult> fixture;
};

/// What a tool implementation produces on success.
struct ToolOutput
{
    std::string text;
    std::vector<std::string> image_refs;
};

/// Thrown by tool implementations for errors the caller caused (bad image, no
/// result). Maps to ToolStatus::ToolError and is never retried. Any other
/// exception is treated as a worker fault: the worker dies and the request is retried.
class ToolFailure: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Thrown when arguments pass the schema but cannot be applied to the input
/// (for example a box that rounds to zero pixels). Maps to ToolStatus::Rejected.
class ToolRejected: public ToolFailure
{
  public:
    using ToolFailure::ToolFailure;
};

struct ToolContext
{
    const ToolRequest& request;
    ImageStore& images;
};

class Tool
{
  public:
    virtual ~Tool() = default;
    virtual ToolOutput run(const Json& arguments, ToolContext& ctx) = 0;
};

/// Called once per worker; the instance stays resident for the worker's lifetime.
using ToolFactory = std::function<std::unique_ptr<Tool>()>;

struct RuntimeConfig
{
    int workers_per_tool = 4;
    int max_batch = 8;
    int queue_capacity = 1024;
    std::chrono::milliseconds per_call_timeout { 30'000 };
    int max_retries = 2;
    bool block_when_full = true;
    std::chrono::milliseconds supervisor_interval { 5 };

    void validate() const;
};

enum class HealthState
{
    Up,
    Degraded,
    Down,
};

std::string_view health_name(HealthState state) noexcept;

struct HealthStatus
{
    HealthState state = HealthState::Down;
    int workers_alive = 0;
    int workers_configured = 0;
};

struct ToolMetrics
{
    std::uint64_t calls = 0;
    std::uint64_t errors = 0;
    double p50_latency_ms = 0;
    double p99_latency_ms = 0;
    std::size_t queue_depth = 0;
};

/// Tool registry plus per-tool worker pools fed by bounded queues. A supervisor
/// thread restarts workers that died from a fault.
class ToolRuntime
{
  public:
    explicit ToolRuntime(RuntimeConfig config = {}, std::shared_ptr<ImageStore> images = std::make_shared<ImageStore>());
    ~ToolRuntime();

    ToolRuntime(const ToolRuntime&) = delete;
    ToolRuntime& operator=(const ToolRuntime&) = delete;

    /// Throws DuplicateName or InvalidSchema. `workers` overrides workers_per_tool.
    void register_tool(ToolSpec spec, ToolFactory factory, std::optional<int> workers = std::nullopt);

    ToolResult invoke(ToolRequest request);
    /// Results come back in request order; items fail independently.
    std::vector<ToolResult> invoke_batch(std::vector<ToolRequest> requests);

    /// Throws UnknownTool.
    [[nodiscard]] HealthStatus health(const std::string& tool) const;
    [[nodiscard]] std::map<std::string, ToolMetrics> metrics() const;
    [[nodiscard]] std::vector<ToolSpec> list() const;
    [[nodiscard]] bool has_tool(const std::string& tool) const;
    [[nodiscard]] std::optional<ToolSpec> spec(const std::string& tool) const;
    /// Registry manifest: every tool's spec and argument schema.
    [[nodiscard]] Json manifest() const;

    [[nodiscard]] const RuntimeConfig& config() const noexcept { return _config; }
    [[nodiscard]] ImageStore& images() noexcept { return *_images; }
    [[nodiscard]] std::shared_ptr<ImageStore> image_store() const noexcept { return _images; }

    /// Fault injection: the next idle worker of `tool` exits as if it crashed.
    void kill_worker(const std::string& tool);
    /// Fault injection: the next `count` executions on `tool` crash their worker mid-request.
    void inject_crashes(const std::string& tool, int count);

  private:
    struct Job
    {
        ToolRequest request;
        std::shared_ptr<std::promise<ToolResult>> promise;
        int attempts = 0;
        bool poison = false;
    };

    struct Worker
    {
        std::thread thread;
        std::atomic<bool> alive { false };
        std::atomic<bool> exited { true };
        /// steady_clock time of the last exit, in nanoseconds since its epoch
        std::atomic<std::int64_t> exited_at { 0 };
    };

    struct ToolEntry
    {
        ToolSpec spec;
        ToolFactory factory;
        int configured_workers = 0;

        mutable std::mutex queue_mutex;
        std::condition_variable not_empty;
        std::condition_variable not_full;
        std::deque<Job> queue;
        std::vector<std::unique_ptr<Worker>> workers;
        std::atomic<int> pending_crashes { 0 };

        mutable std::mutex metrics_mutex;
        std::uint64_t calls = 0;
        std::uint64_t errors = 0;
        std::vector<double> latency_window;
        std::size_t latency_next = 0;
    };

    void start_worker(ToolEntry& entry, Worker& worker);
    void worker_loop(ToolEntry& entry, Worker& worker);
    void supervisor_loop();
    std::optional<std::future<ToolResult>> submit(ToolEntry& entry, ToolRequest request, ToolResult& immediate);
    ToolResult execute(ToolEntry& entry, Tool& tool, const Job& job);
    void record(ToolEntry& entry, const ToolResult& result);
    ToolEntry* find(const std::string& tool) const;

    RuntimeConfig _config;
    std::shared_ptr<ImageStore> _images;
    mutable std::shared_mutex _registry_mutex;
    std::map<std::string, std::unique_ptr<ToolEntry>> _tools;

    std::atomic<bool> _stopping { false };
    std::mutex _supervisor_mutex;
    std::condition_variable _supervisor_cv;
    std::thread _supervisor;
};

} // namespace tirgym
