// SPDX-License-Identifier: Apache-2.0

#include <tirgym/error.hpp>
#include <tirgym/gateway.hpp>
#include <tirgym/mock_tools.hpp>

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

using namespace tirgym;

namespace
{

std::string const fixtures = TIRGYM_FIXTURES_DIR;
std::string const zoom_turn = "<think>The marker sits in the upper right corner.</think>"
                              "<tool_call>{\"name\":\"image_zoom_in\",\"arguments\":{\"bbox_2d\":[0.75,0,0.98,0.25]}}</tool_call>";
std::string const answer_turn = "<think>The side marker belongs on a projection film.</think><answer>B</answer>";

std::map<std::string, TaskInstance> fixture_tasks()
{
    auto out = std::map<std::string, TaskInstance> {};
    for (auto& t: load_tasks(fixtures + "/tasks.jsonl"))
        out.emplace(t.id, t);
    return out;
}

struct Stack
{
    ToolRuntime runtime;
    Environment env;
    Gateway gateway;

    explicit Stack(bool table_only = false):
        runtime(RuntimeConfig {}, std::make_shared<ImageStore>(fixtures)), env(runtime), gateway(env, fixture_tasks())
    {
        auto options = MockToolOptions {};
        options.corpus_dir = fixtures + "/corpus";
        if (table_only)
            register_table_tools(runtime, options);
        else
            register_mock_tools(runtime, options);
    }
};

struct Reply
{
    int status = 0;
    Json body;
};

Reply post(Gateway& gw, const std::string& path, Json payload, const std::string& request_id, const std::string& version = "1")
{
    auto request = Json { { "version", version }, { "request_id", request_id }, { "payload", std::move(payload) } };
    auto r = gw.handle("POST", path, request.dump());
    return Reply { r.status, Json::parse(r.body) };
}

} // namespace

TEST_CASE("reset and step through the envelope", "[gateway]")
{
    auto s = Stack {};
    auto reset = post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "r1");
    REQUIRE(reset.status == 200);
    CHECK(reset.body["version"] == "1");
    CHECK(reset.body["request_id"] == "r1");
    auto id = reset.body["payload"]["episode_id"].get<std::string>();
    CHECK(reset.body["payload"]["observation"]["kind"] == "initial");

    auto step = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", zoom_turn } }, "r2");
    REQUIRE(step.status == 200);
    CHECK(step.body["payload"]["done"] == false);
    CHECK(step.body["payload"]["observation"]["text"].get<std::string>().find("block letter L") != std::string::npos);

    auto bad = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", "<think>x</think><tool_call>{nope</tool_call>" } }, "r3");
    CHECK(bad.status == 400);
    CHECK(bad.body["error"]["code"] == "MalformedToolJson");
    CHECK(s.env.tool_calls_used(id) == 1);

    auto done = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", answer_turn } }, "r4");
    CHECK(done.body["payload"]["termination"]["kind"] == "answer_produced");
    auto again = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", answer_turn } }, "r5");
    CHECK(again.status == 409);
    CHECK(again.body["error"]["code"] == "EpisodeAlreadyDone");

    auto fin = post(s.gateway, "/v1/episodes/finalize", { { "episode_id", id } }, "r6");
    REQUIRE(fin.status == 200);
    auto t = trajectory_from_json(fin.body["payload"]["trajectory"]);
    CHECK(t.final_answer == std::optional<std::string>("B"));

    auto graded = post(s.gateway, "/v1/reward", { { "trajectory", trajectory_to_json(t) } }, "r7");
    CHECK(graded.body["payload"]["total"] == 3);
    auto verdict = post(s.gateway, "/v1/judge", { { "trajectory", trajectory_to_json(t) } }, "r8");
    CHECK(verdict.body["payload"]["overall_score"] == 4);

    auto missing = post(s.gateway, "/v1/episodes/finalize", { { "episode_id", id } }, "r9");
    CHECK(missing.status == 404);
    CHECK(missing.body["error"]["code"] == "UnknownEpisode");
}

TEST_CASE("envelope validation", "[gateway]")
{
    auto s = Stack {};
    auto old = post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "v1", "0");
    CHECK(old.status == 400);
    CHECK(old.body["error"]["code"] == "VersionMismatch");
    CHECK(old.body["request_id"] == "v1");

    auto no_id = post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "");
    CHECK(no_id.body["error"]["code"] == "InvalidRequest");

    auto junk = s.gateway.handle("POST", "/v1/episodes", "{not json");
    CHECK(junk.status == 400);
    CHECK(Json::parse(junk.body)["error"]["code"] == "InvalidRequest");

    CHECK(s.gateway.handle("POST", "/v1/nowhere", Json { { "version", "1" }, { "request_id", "x" }, { "payload", Json::object() } }.dump()).status == 404);
    CHECK(s.gateway.handle("DELETE", "/v1/episodes", "").status == 405);

    auto unknown_task = post(s.gateway, "/v1/episodes", { { "task_id", "nope" } }, "v2");
    CHECK(unknown_task.body["error"]["code"] == "InvalidTask");
    CHECK(s.env.active_episodes() == 0);
}

TEST_CASE("a replayed request id returns the first answer", "[gateway]")
{
    auto s = Stack {};
    auto id = post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "a").body["payload"]["episode_id"].get<std::string>();
    auto first = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", zoom_turn } }, "same");
    auto replay = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", zoom_turn } }, "same");
    CHECK(replay.status == first.status);
    CHECK(replay.body == first.body);
    CHECK(s.env.tool_calls_used(id) == 1);
    CHECK(s.env.status(id) == EpisodeStatus::Active);
    // a fresh id applies the turn, which now repeats the call
    auto fresh = post(s.gateway, "/v1/episodes/step", { { "episode_id", id }, { "turn", zoom_turn } }, "other");
    CHECK(fresh.body["payload"]["termination"]["kind"] == "repeated_tool_call");
}

TEST_CASE("batch steps report per-item results", "[gateway]")
{
    auto s = Stack {};
    auto a = post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "1").body["payload"]["episode_id"];
    auto b = post(s.gateway, "/v1/episodes", { { "task_id", "case3" } }, "2").body["payload"]["episode_id"];
    auto items = Json::array({
        { { "episode_id", a }, { "turn", zoom_turn } },
        { { "episode_id", b }, { "turn", answer_turn } },
        { { "episode_id", "ep-missing" }, { "turn", answer_turn } },
        { { "episode_id", a }, { "turn", "<answer>B</answer>" } },
        { { "episode_id", a }, { "turn", answer_turn } },
    });
    auto r = post(s.gateway, "/v1/episodes/batch_step", { { "items", items } }, "3");
    REQUIRE(r.status == 200);
    auto const& results = r.body["payload"]["results"];
    REQUIRE(results.size() == 5);
    CHECK(results[0]["done"] == false);
    CHECK(results[1]["termination"]["kind"] == "answer_produced");
    CHECK(results[2]["error"]["code"] == "UnknownEpisode");
    CHECK(results[3]["error"]["code"] == "MissingThink");
    CHECK(results[4]["termination"]["kind"] == "answer_produced");
}

TEST_CASE("tool endpoints", "[gateway]")
{
    auto s = Stack(true);
    auto health = Json::parse(s.gateway.handle("GET", "/v1/health", "").body);
    CHECK(health["payload"]["state"] == "up");
    CHECK(health["payload"]["tools"].size() == 15);
    auto manifest = Json::parse(s.gateway.handle("GET", "/v1/tools", "").body);
    CHECK(manifest["payload"]["tools"].size() == 15);
    CHECK(s.gateway.handle("GET", "/v1/health/ghost", "").status == 404);

    auto one = post(s.gateway, "/v1/tools/invoke",
                    { { "tool", "drugbank" }, { "request_id", "t1" }, { "arguments", { { "query", "metformin" } } } }, "i1");
    REQUIRE(one.status == 200);
    CHECK(one.body["payload"]["result"]["status"] == "ok");
    CHECK(one.body["payload"]["result"]["request_id"] == "t1");

    auto many = post(s.gateway, "/v1/tools/batch_invoke",
                     { { "requests", Json::array({ { { "tool", "ghost" }, { "request_id", "g" } },
                                                   { { "tool", "drugbank" }, { "request_id", "d" }, { "arguments", { { "query", "metformin" } } } } }) } },
                     "i2");
    auto const& results = many.body["payload"]["results"];
    REQUIRE(results.size() == 2);
    CHECK(results[0]["status"] == "rejected");
    CHECK(results[1]["status"] == "ok");
}

TEST_CASE("metrics text lists gateway and tool counters", "[gateway]")
{
    auto s = Stack {};
    (void)post(s.gateway, "/v1/episodes", { { "task_id", "case1" } }, "m1");
    (void)post(s.gateway, "/v1/episodes", { { "task_id", "nope" } }, "m2");
    auto r = s.gateway.handle("GET", "/metrics", "");
    CHECK(r.content_type == "text/plain");
    auto values = std::map<std::string, double> {};
    auto in = std::istringstream(r.body);
    auto name = std::string {};
    double value = 0;
    while (in >> name >> value)
        values[name] = value;
    // the metrics request counts itself
    CHECK(values.at("gateway_requests_total") == 3);
    CHECK(values.at("gateway_request_errors_total") == 1);
    CHECK(values.at("episodes_active") == 1);
    CHECK(values.at("episodes_started_total") == 1);
    CHECK(values.count("tool_calls_total.image_zoom_in") == 1);
    CHECK(values.count("tool_workers_alive.drugbank") == 1);
}

TEST_CASE("the wire client produces the same trajectory as the in-process environment", "[gateway]")
{
    auto s = Stack {};
    int port = s.gateway.start("127.0.0.1", 0, 4);
    REQUIRE(port > 0);
    auto client = WireClient("127.0.0.1", port, std::chrono::seconds(10), 2);

    auto [wire_id, wire_obs] = client.reset("case1");
    (void)client.step(wire_id, zoom_turn);
    auto last = client.step(wire_id, answer_turn);
    CHECK(last.done);
    CHECK_THROWS_AS(client.step(wire_id, answer_turn), Error);
    try
    {
        (void)client.step(wire_id, answer_turn);
    }
    catch (const Error& e)
    {
        CHECK(e.code() == Errc::EpisodeAlreadyDone);
    }
    auto wire = client.finalize(wire_id);

    auto native_env = Environment(s.runtime);
    auto [native_id, native_obs] = native_env.reset(fixture_tasks().at("case1"));
    CHECK(native_obs.text == wire_obs.text);
    (void)native_env.step_text(native_id, zoom_turn);
    (void)native_env.step_text(native_id, answer_turn);
    auto native = native_env.finalize(native_id);
    CHECK(trajectory_line(wire) == trajectory_line(native));

    auto tools = client.list_tools();
    auto server_tools = std::vector<std::string> {};
    for (auto const& spec: s.runtime.list())
        server_tools.push_back(spec.name);
    CHECK(tools == server_tools);
    CHECK(tools.size() == 16);

    auto request = ToolRequest {};
    request.request_id = "w1";
    request.tool = "drugbank";
    request.arguments = Json { { "query", "metformin" } };
    CHECK(client.invoke(request).status == ToolStatus::Ok);
    CHECK(client.get_text("/metrics").find("episodes_finalized_total 1") != std::string::npos);
    s.gateway.stop();
}

TEST_CASE("many episodes interleave over the wire", "[gateway]")
{
    auto s = Stack {};
    int port = s.gateway.start("127.0.0.1", 0, 8);
    auto client = WireClient("127.0.0.1", port);
    auto ids = std::vector<std::string> {};
    for (int i = 0; i < 8; ++i)
        ids.push_back(client.reset("case1").first);
    for (auto const& id: ids)
        CHECK_FALSE(client.step(id, zoom_turn).done);
    for (auto const& id: ids)
        CHECK(client.step(id, answer_turn).termination->kind == TerminationKind::AnswerProduced);
    for (auto const& id: ids)
        CHECK(client.finalize(id).tool_call_count() == 1);
    CHECK(s.env.active_episodes() == 0);
    s.gateway.stop();
}

TEST_CASE("an unreachable server surfaces an io error after retries", "[gateway]")
{
    int port = 0;
    {
        auto s = Stack {};
        port = s.gateway.start("127.0.0.1", 0, 1);
        s.gateway.stop();
    }
    auto client = WireClient("127.0.0.1", port, std::chrono::milliseconds(200), 2);
    try
    {
        (void)client.reset("case1");
        FAIL("expected an error");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == Errc::IoError);
    }
}

TEST_CASE("server config loads with paths relative to the file", "[gateway]")
{
    auto cfg = ServerConfig::load(fixtures + "/config/server.conf");
    CHECK(std::filesystem::equivalent(cfg.tasks_path, fixtures + "/tasks.jsonl"));
    CHECK(std::filesystem::equivalent(cfg.image_root, fixtures));
    CHECK(cfg.port == 8080);
    CHECK(cfg.runtime.per_call_timeout == std::chrono::milliseconds(30000));
    CHECK(cfg.runtime.max_retries == 2);
    CHECK(cfg.episode.max_tool_calls == 6);
    CHECK(cfg.episode.force_answer_prompt == std::string(trim(read_text_file(fixtures + "/config/force_answer.txt"))));
    CHECK(cfg.judge.weight_map.at(2) == 0.5);
    CHECK(cfg.reward.scheme == RewardScheme::Default);

    CHECK_THROWS_AS(ServerConfig::from_config(KeyValueConfig::parse("server.version = 2\n")), Error);
    CHECK_THROWS_AS(ServerConfig::from_config(KeyValueConfig::parse("server.port = 70000\n")), Error);
}
