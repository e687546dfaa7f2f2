// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tirgym/env.hpp>
#include <tirgym/pipeline.hpp>
#include <tirgym/reward.hpp>

#include <deque>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace httplib
{
class Server;
}

namespace tirgym
{

inline constexpr std::string_view wire_version = "1";

/// Server settings, read from a key/value file. Relative paths resolve against the file's directory.
struct ServerConfig
{
    std::string host = "127.0.0.1";
    int port = 8080;
    int threads = 8;
    std::filesystem::path tasks_path;
    std::filesystem::path corpus_dir;
    std::filesystem::path image_root;
    std::filesystem::path system_prompt_path;
    std::chrono::milliseconds simulated_latency { 0 };
    std::size_t idempotency_cache = 4096;
    RuntimeConfig runtime;
    EpisodeConfig episode;
    RewardConfig reward;
    JudgeConfig judge;

    static ServerConfig from_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir = {});
    static ServerConfig load(const std::filesystem::path& path);
};

Json observation_to_json(const Observation& o);
Observation observation_from_json(const Json& j);
Json step_result_to_json(const StepResult& r);
StepResult step_result_from_json(const Json& j);
/// Wire form of a tool result, adding request_id and latency to the fixture form.
Json tool_result_wire_json(const ToolResult& r);
ToolResult tool_result_from_wire(const Json& j);
Json health_to_json(const HealthStatus& h);

/// HTTP status used for an error code.
int http_status_for(Errc code) noexcept;

/// Request routing and envelope handling over an Environment. `handle` is the whole
/// protocol; `start` only adds an HTTP listener in front of it.
class Gateway
{
  public:
    struct Response
    {
        int status = 200;
        std::string body;
        std::string content_type = "application/json";
    };

    Gateway(Environment& env, std::map<std::string, TaskInstance> tasks, RewardConfig reward = {}, JudgeConfig judge = {},
            std::size_t idempotency_cache = 4096);
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    Response handle(std::string_view method, std::string_view path, const std::string& body);

    /// Binds and serves in a background thread; returns the bound port (useful with port 0).
    int start(const std::string& host, int port, int threads = 8);
    /// Stops accepting connections and waits for in-flight requests to finish.
    void stop();

    [[nodiscard]] std::string metrics_text() const;
    [[nodiscard]] Environment& environment() noexcept { return _env; }

  private:
    Response dispatch_post(std::string_view path, const std::string& body);
    Response dispatch_get(std::string_view path);
    Response idempotent(const std::string& key, const std::function<Response()>& compute);

    Json reset(const Json& payload);
    Json step(const Json& payload);
    Json batch_step(const Json& payload);
    Json finalize(const Json& payload);
    Json invoke(const Json& payload);
    Json batch_invoke(const Json& payload);
    Json judge(const Json& payload);
    Json reward(const Json& payload);

    const TaskInstance& task(const std::string& id) const;

    Environment& _env;
    std::map<std::string, TaskInstance> _tasks;
    RewardConfig _reward;
    JudgeConfig _judge;
    std::size_t _cache_capacity;

    std::mutex _cache_mutex;
    std::map<std::string, std::shared_future<Response>> _cache;
    std::deque<std::string> _cache_order;

    std::atomic<std::uint64_t> _requests { 0 };
    std::atomic<std::uint64_t> _request_errors { 0 };
    std::atomic<std::uint64_t> _episodes_started { 0 };
    std::atomic<std::uint64_t> _episodes_finalized { 0 };

    std::unique_ptr<httplib::Server> _server;
    std::thread _listener;
};

/// Thin wire client mirroring the gateway endpoints. Server error bodies surface as
/// Error with the server's code; transport failures as IoError after the retries.
class WireClient
{
  public:
    WireClient(std::string host, int port, std::chrono::milliseconds timeout = std::chrono::seconds(30), int retries = 0);

    /// Posts `payload` in an envelope and returns the reply payload.
    Json post(const std::string& path, const Json& payload, std::string request_id = {});
    Json get_json(const std::string& path);
    std::string get_text(const std::string& path);

    std::pair<std::string, Observation> reset(const std::string& task_id);
    StepResult step(const std::string& episode_id, const std::string& raw_turn, std::string request_id = {});
    Trajectory finalize(const std::string& episode_id);
    ToolResult invoke(const ToolRequest& request);
    std::vector<std::string> list_tools();

  private:
    std::string next_request_id();

    std::string _host;
    int _port;
    std::chrono::milliseconds _timeout;
    int _retries;
    std::atomic<std::uint64_t> _counter { 0 };
};

} // namespace tirgym
