// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/gateway.hpp>

#include <httplib.h>

#include <thread>

namespace tirgym
{

namespace
{

httplib::Client make_client(const std::string& host, int port, std::chrono::milliseconds timeout)
{
    auto client = httplib::Client(host, port);
    auto const secs = static_cast<time_t>(timeout.count() / 1000);
    auto const usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    return client;
}

Json unwrap(const httplib::Result& res)
{
    auto body = Json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object())
        throw Error(Errc::IoError, "server reply is not JSON (HTTP " + std::to_string(res->status) + ")");
    if (body.contains("error"))
    {
        auto code = body["error"].value("code", "IoError");
        auto message = body["error"].value("message", "");
        throw Error(errc_from_name(code).value_or(Errc::IoError), message);
    }
    if (body.value("version", "") != wire_version)
        throw Error(Errc::VersionMismatch, "server speaks protocol '" + body.value("version", "") + "'");
    return body.value("payload", Json::object());
}

} // namespace

WireClient::WireClient(std::string host, int port, std::chrono::milliseconds timeout, int retries):
    _host(std::move(host)), _port(port), _timeout(timeout), _retries(retries)
{
    if (retries < 0)
        throw Error(Errc::InvalidConfig, "retries must be >= 0");
}

std::string WireClient::next_request_id()
{
    return "req-" + std::to_string(_counter.fetch_add(1) + 1);
}

Json WireClient::post(const std::string& path, const Json& payload, std::string request_id)
{
    if (request_id.empty())
        request_id = next_request_id();
    auto body = Json { { "version", wire_version }, { "request_id", request_id }, { "payload", payload } }.dump();
    auto client = make_client(_host, _port, _timeout);
    for (int attempt = 0;; ++attempt)
    {
        // retries reuse the request id, so the server applies the request at most once
        auto res = client.Post(path, body, "application/json");
        if (res)
            return unwrap(res);
        if (attempt >= _retries)
            throw Error(Errc::IoError, "POST " + path + " failed: " + httplib::to_string(res.error()));
        std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 5)));
    }
}

std::string WireClient::get_text(const std::string& path)
{
    auto client = make_client(_host, _port, _timeout);
    for (int attempt = 0;; ++attempt)
    {
        auto res = client.Get(path);
        if (res)
        {
            if (res->status != 200)
                unwrap(res);
            return res->body;
        }
        if (attempt >= _retries)
            throw Error(Errc::IoError, "GET " + path + " failed: " + httplib::to_string(res.error()));
        std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 5)));
    }
}

Json WireClient::get_json(const std::string& path)
{
    auto text = get_text(path);
    auto body = Json::parse(text, nullptr, false);
    if (body.is_discarded() || !body.is_object())
        throw Error(Errc::IoError, "server reply to " + path + " is not JSON");
    if (body.value("version", "") != wire_version)
        throw Error(Errc::VersionMismatch, "server speaks protocol '" + body.value("version", "") + "'");
    return body.value("payload", Json::object());
}

std::pair<std::string, Observation> WireClient::reset(const std::string& task_id)
{
    auto reply = post("/v1/episodes", Json { { "task_id", task_id } });
    return { reply.at("episode_id").get<std::string>(), observation_from_json(reply.at("observation")) };
}

StepResult WireClient::step(const std::string& episode_id, const std::string& raw_turn, std::string request_id)
{
    return step_result_from_json(post("/v1/episodes/step", Json { { "episode_id", episode_id }, { "turn", raw_turn } }, std::move(request_id)));
}

Trajectory WireClient::finalize(const std::string& episode_id)
{
    return trajectory_from_json(post("/v1/episodes/finalize", Json { { "episode_id", episode_id } }).at("trajectory"));
}

ToolResult WireClient::invoke(const ToolRequest& request)
{
    auto payload = Json { { "tool", request.tool }, { "arguments", request.arguments }, { "image_refs", request.image_refs } };
    if (!request.request_id.empty())
        payload["request_id"] = request.request_id;
    return tool_result_from_wire(post("/v1/tools/invoke", payload).at("result"));
}

std::vector<std::string> WireClient::list_tools()
{
    auto manifest = get_json("/v1/tools");
    auto out = std::vector<std::string> {};
    for (auto const& t: manifest.at("tools"))
        out.push_back(t.at("name").get<std::string>());
    return out;
}

} // namespace tirgym
