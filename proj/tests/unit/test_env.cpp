// SPDX-License-Identifier: Apache-2.0

#include <tirgym/env.hpp>
#include <tirgym/error.hpp>
#include <tirgym/mock_tools.hpp>
#include <tirgym/trajectory.hpp>

#include <catch_amalgamated.hpp>

#include <chrono>
#include <filesystem>

using namespace tirgym;
using namespace std::chrono_literals;

namespace
{

TaskInstance two_option_task()
{
    auto t = TaskInstance {};
    t.id = "t1";
    t.question = "Is the marker on the left?";
    t.options = { { "A", "Yes" }, { "B", "No" } };
    t.answer_key = "B";
    return t;
}

ParsedTurn call(const std::string& payload, std::string think = "check")
{
    return { std::move(think), ToolCall { "echo", Json { { "payload", payload } } } };
}

ParsedTurn answer(std::string text)
{
    return { "decide", FinalAnswer { std::move(text) } };
}

Errc error_of(const std::function<void()>& fn)
{
    try
    {
        fn();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    FAIL("no error thrown");
    return Errc::InvalidRequest;
}

struct Fixture
{
    ToolRuntime runtime;
    Environment env;

    explicit Fixture(EpisodeConfig cfg = {}, std::chrono::milliseconds latency = 0ms, int workers = 2):
        env(runtime, std::move(cfg))
    {
        register_latency_tool(runtime, "echo", latency, workers);
    }
};

std::vector<SpanKind> kinds(const Trajectory& t)
{
    auto out = std::vector<SpanKind> {};
    for (auto const& s: t.steps)
        out.push_back(s.span_kind);
    return out;
}

} // namespace

TEST_CASE("reset returns the initial observation", "[env]")
{
    auto f = Fixture {};
    auto task = two_option_task();
    task.image_refs = { f.runtime.images().put_image(Image(4, 4, 1)) };
    auto [id, obs] = f.env.reset(task);
    CHECK(id.starts_with("ep-"));
    CHECK(obs.kind == ObservationKind::Initial);
    CHECK(obs.text == "Question: Is the marker on the left?\nOptions:\nA) Yes\nB) No");
    CHECK(obs.image_refs == task.image_refs);
    CHECK(f.env.status(id) == EpisodeStatus::Active);
}

TEST_CASE("reset validates the task", "[env]")
{
    auto f = Fixture {};
    auto task = two_option_task();
    task.question = "  ";
    CHECK(error_of([&] { (void)f.env.reset(task); }) == Errc::InvalidTask);
    task = two_option_task();
    task.answer_key = "C";
    CHECK(error_of([&] { (void)f.env.reset(task); }) == Errc::InvalidTask);
    task = two_option_task();
    task.options.push_back({ "A", "again" });
    CHECK(error_of([&] { (void)f.env.reset(task); }) == Errc::InvalidTask);
    task = two_option_task();
    task.image_refs = { "missing.pgm" };
    CHECK(error_of([&] { (void)f.env.reset(task); }) == Errc::UnresolvableImage);
    auto cfg = EpisodeConfig {};
    cfg.max_tool_calls = 0;
    CHECK(error_of([&] { (void)f.env.reset(two_option_task(), cfg); }) == Errc::InvalidConfig);
}

TEST_CASE("two resets of one task are independent episodes", "[env]")
{
    auto f = Fixture {};
    auto [a, oa] = f.env.reset(two_option_task());
    auto [b, ob] = f.env.reset(two_option_task());
    CHECK(a != b);
    (void)f.env.step(a, call("x"));
    CHECK(f.env.tool_calls_used(a) == 1);
    CHECK(f.env.tool_calls_used(b) == 0);
    CHECK(f.env.active_episodes() == 2);
}

TEST_CASE("an answer ends the episode", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    auto r = f.env.step(id, answer("B"));
    CHECK(r.done);
    REQUIRE(r.termination);
    CHECK(r.termination->kind == TerminationKind::AnswerProduced);
    CHECK_FALSE(r.observation);
    auto t = f.env.finalize(id);
    CHECK(t.final_answer == std::optional<std::string>("B"));
    CHECK(t.termination.kind == TerminationKind::AnswerProduced);
}

TEST_CASE("the sixth call brings the force prompt and a seventh is a violation", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    for (int i = 1; i <= 5; ++i)
    {
        auto r = f.env.step(id, call(std::to_string(i)));
        REQUIRE(r.observation);
        CHECK(r.observation->kind == ObservationKind::ToolOutput);
        CHECK_FALSE(r.done);
    }
    auto sixth = f.env.step(id, call("6"));
    REQUIRE(sixth.observation);
    CHECK(sixth.observation->kind == ObservationKind::ForceAnswer);
    CHECK(sixth.observation->text.ends_with(std::string(default_force_answer_prompt)));
    CHECK(f.env.status(id) == EpisodeStatus::ForcedAnswer);
    auto seventh = f.env.step(id, call("7"));
    CHECK(seventh.done);
    CHECK(seventh.termination->kind == TerminationKind::ProtocolViolation);
    auto t = f.env.finalize(id);
    CHECK(t.tool_call_count() == 7);
    auto obs_spans = std::count_if(t.steps.begin(), t.steps.end(), [](auto const& s) { return s.span_kind == SpanKind::Obs; });
    CHECK(obs_spans == 6);
}

TEST_CASE("answering after the force prompt finishes normally", "[env]")
{
    auto cfg = EpisodeConfig {};
    cfg.max_tool_calls = 1;
    auto f = Fixture(cfg);
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("a"));
    auto r = f.env.step(id, answer("B"));
    CHECK(r.termination->kind == TerminationKind::AnswerProduced);
    auto t = f.env.finalize(id);
    CHECK(kinds(t) == std::vector<SpanKind> { SpanKind::Think, SpanKind::ToolCall, SpanKind::Obs, SpanKind::ForcePrompt,
                                              SpanKind::Think, SpanKind::Answer });
}

TEST_CASE("without forcing, the limit ends the episode", "[env]")
{
    auto cfg = EpisodeConfig {};
    cfg.max_tool_calls = 2;
    cfg.force_answer_on_limit = false;
    auto f = Fixture(cfg);
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("a"));
    auto r = f.env.step(id, call("b"));
    CHECK(r.done);
    CHECK(r.termination->kind == TerminationKind::ToolCallLimit);
    REQUIRE(r.observation);
    CHECK(r.observation->kind == ObservationKind::ToolOutput);
}

TEST_CASE("a repeated call terminates without dispatch", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("same"));
    auto before = f.runtime.metrics().at("echo").calls;
    auto r = f.env.step(id, call("same", "try again"));
    CHECK(r.done);
    CHECK(r.termination->kind == TerminationKind::RepeatedToolCall);
    CHECK(f.runtime.metrics().at("echo").calls == before);
    auto t = f.env.finalize(id);
    CHECK_FALSE(t.final_answer);
    CHECK(t.termination.kind == TerminationKind::RepeatedToolCall);
}

TEST_CASE("repeats are allowed when configured", "[env]")
{
    auto cfg = EpisodeConfig {};
    cfg.terminate_on_repeat = false;
    auto f = Fixture(cfg);
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("same"));
    auto r = f.env.step(id, call("same"));
    CHECK_FALSE(r.done);
    CHECK(f.env.tool_calls_used(id) == 2);
}

TEST_CASE("a two-call episode records spans and masks in grammar order", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("a"));
    (void)f.env.step(id, call("b"));
    (void)f.env.step(id, answer("B"));
    auto t = f.env.finalize(id);
    CHECK(kinds(t) == std::vector<SpanKind> { SpanKind::Think, SpanKind::ToolCall, SpanKind::Obs, SpanKind::Think,
                                              SpanKind::ToolCall, SpanKind::Obs, SpanKind::Think, SpanKind::Answer });
    auto masks = std::vector<bool> {};
    for (auto const& s: t.steps)
        masks.push_back(s.loss_masked);
    CHECK(masks == std::vector<bool> { false, false, true, false, false, true, false, false });
    CHECK(t.steps[0].span == "<think>check</think>");
    CHECK(t.steps[2].span == "<obs>echo:" + id + "/1:a</obs>");
    CHECK(t.steps[5].span == "<obs>echo:" + id + "/2:b</obs>");
    CHECK(t.steps[2].tool_status == ToolStatus::Ok);
    CHECK(t.prompt == initial_observation_text(two_option_task()));
}

TEST_CASE("failed tools report an error observation and use budget", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    auto r = f.env.step(id, ParsedTurn { "try", ToolCall { "ghost", Json::object() } });
    REQUIRE(r.observation);
    CHECK(r.observation->text.starts_with("<obs>TOOL_ERROR: rejected: UnknownTool"));
    CHECK(f.env.tool_calls_used(id) == 1);
    auto bad = f.env.step(id, ParsedTurn { "try", ToolCall { "echo", Json { { "payload", 1 } } } });
    CHECK(bad.observation->text.starts_with("<obs>TOOL_ERROR: rejected:"));
    CHECK(f.env.tool_calls_used(id) == 2);
}

TEST_CASE("non-finite arguments are a protocol violation", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    auto r = f.env.step(id, ParsedTurn { "x", ToolCall { "echo", Json { { "payload", std::nan("") } } } });
    CHECK(r.done);
    CHECK(r.termination->kind == TerminationKind::ProtocolViolation);
    CHECK(f.env.tool_calls_used(id) == 0);
}

TEST_CASE("task fixtures answer matching calls", "[env]")
{
    auto f = Fixture {};
    auto task = two_option_task();
    auto fixture = ToolResult {};
    fixture.text = "scripted observation";
    task.fixtures[canonical_call_key(ToolCall { "echo", Json { { "payload", "z" } } })] = fixture;
    auto [id, obs] = f.env.reset(task);
    auto r = f.env.step(id, call("z"));
    CHECK(r.observation->text == "<obs>scripted observation</obs>");
}

TEST_CASE("lifecycle errors", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    CHECK(error_of([&] { (void)f.env.finalize(id); }) == Errc::EpisodeNotDone);
    CHECK(error_of([&] { (void)f.env.step("ep-missing", answer("A")); }) == Errc::UnknownEpisode);
    (void)f.env.step(id, answer("A"));
    CHECK(error_of([&] { (void)f.env.step(id, answer("A")); }) == Errc::EpisodeAlreadyDone);
    (void)f.env.finalize(id);
    CHECK(error_of([&] { (void)f.env.finalize(id); }) == Errc::UnknownEpisode);
    CHECK(f.env.active_episodes() == 0);
}

TEST_CASE("text steps that fail to parse leave the episode untouched", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    CHECK(error_of([&] { (void)f.env.step_text(id, "<think>x</think><tool_call>{oops}</tool_call>"); }) == Errc::MalformedToolJson);
    CHECK(f.env.status(id) == EpisodeStatus::Active);
    auto r = f.env.step_text(id, "<think>ok</think><answer>B</answer>");
    CHECK(r.done);
    auto t = f.env.finalize(id);
    CHECK(t.steps.size() == 2);
}

TEST_CASE("batch steps run episodes concurrently and keep per-episode order", "[env]")
{
    auto f = Fixture({}, 40ms, 8);
    auto ids = std::vector<std::string> {};
    for (int i = 0; i < 8; ++i)
        ids.push_back(f.env.reset(two_option_task()).first);

    auto items = std::vector<std::pair<std::string, ParsedTurn>> {};
    for (auto const& id: ids)
        items.emplace_back(id, call("first"));
    items.emplace_back(ids[0], call("second"));
    items.emplace_back("ep-missing", call("x"));

    auto const start = std::chrono::steady_clock::now();
    auto out = f.env.step_batch(items);
    auto const wall = std::chrono::steady_clock::now() - start;
    REQUIRE(out.size() == items.size());
    CHECK(wall < 8 * 40ms);
    for (std::size_t i = 0; i + 1 < out.size(); ++i)
        CHECK(std::holds_alternative<StepResult>(out[i]));
    REQUIRE(std::holds_alternative<Error>(out.back()));
    CHECK(std::get<Error>(out.back()).code() == Errc::UnknownEpisode);
    CHECK(f.env.tool_calls_used(ids[0]) == 2);
    CHECK(std::get<StepResult>(out[8]).observation->text == "<obs>echo:" + ids[0] + "/2:second</obs>");
}

TEST_CASE("trajectories persist and reload unchanged", "[env]")
{
    auto f = Fixture {};
    auto [id, obs] = f.env.reset(two_option_task());
    (void)f.env.step(id, call("a"));
    (void)f.env.step(id, answer("B"));
    auto t = f.env.finalize(id);
    t.reward = RewardBreakdown { 1, 1, 1, 3 };

    CHECK(trajectory_from_json(trajectory_to_json(t)) == t);
    auto path = std::filesystem::path(TIRGYM_SCRATCH_DIR) / "env_trajectories.jsonl";
    save_trajectories(path, { t, t });
    auto back = load_trajectories(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == t);
    CHECK(trajectory_hash(back[1]) == trajectory_hash(t));
    CHECK(trajectory_line(back[0]) == trajectory_line(t));

    write_jsonl(path, "tirgym.other", 1, {});
    CHECK_THROWS_AS(load_trajectories(path), Error);
}

TEST_CASE("fixture tasks load with their tool fixtures", "[env]")
{
    auto tasks = load_tasks(std::string(TIRGYM_FIXTURES_DIR) + "/tasks.jsonl");
    REQUIRE(tasks.size() == 4);
    CHECK(tasks[0].id == "case1");
    CHECK(tasks[0].answer_key == "B");
    CHECK(tasks[0].fixtures.count("image_zoom_in {\"bbox_2d\":[0.75,0,0.98,0.25]}") == 1);
    for (auto const& t: tasks)
    {
        CHECK_NOTHROW(validate_task(t));
        CHECK(task_from_json(task_to_json(t)).fixtures.size() == t.fixtures.size());
    }
}
