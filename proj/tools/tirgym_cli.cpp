// SPDX-License-Identifier: Apache-2.0
// Operator CLI: serve, rollout, reward, curate, train-toy, bench, replay, manifest, enumerate.
#include <tirgym/error.hpp>
#include <tirgym/gateway.hpp>
#include <tirgym/mock_tools.hpp>
#include <tirgym/pipeline.hpp>
#include <tirgym/toy.hpp>

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>

using namespace tirgym;

namespace
{

std::atomic<bool> g_stop { false };

extern "C" void on_signal(int)
{
    g_stop.store(true);
}

ServerConfig load_server_config(const std::string& flag)
{
    auto path = flag;
    if (path.empty())
        if (auto const* env = std::getenv("TIRGYM_CONFIG"))
            path = env;
    return path.empty() ? ServerConfig {} : ServerConfig::load(path);
}

/// Runtime, environment and tasks assembled from the server config plus CLI overrides.
struct Context
{
    ServerConfig cfg;
    std::unique_ptr<ToolRuntime> runtime;
    std::unique_ptr<Environment> env;
    std::map<std::string, TaskInstance> tasks;

    Context(ServerConfig config, const std::string& tasks_flag, const std::string& images_flag, const std::string& corpus_flag):
        cfg(std::move(config))
    {
        if (!tasks_flag.empty())
            cfg.tasks_path = tasks_flag;
        if (!images_flag.empty())
            cfg.image_root = images_flag;
        else if (cfg.image_root.empty() && !cfg.tasks_path.empty())
            cfg.image_root = cfg.tasks_path.parent_path();
        if (!corpus_flag.empty())
            cfg.corpus_dir = corpus_flag;
        else if (cfg.corpus_dir.empty() && !cfg.tasks_path.empty())
            cfg.corpus_dir = cfg.tasks_path.parent_path() / "corpus";
        runtime = std::make_unique<ToolRuntime>(cfg.runtime, std::make_shared<ImageStore>(cfg.image_root));
        auto options = MockToolOptions {};
        options.corpus_dir = cfg.corpus_dir;
        options.simulated_latency = cfg.simulated_latency;
        register_mock_tools(*runtime, options);
        env = std::make_unique<Environment>(*runtime, cfg.episode);
        if (!cfg.tasks_path.empty())
            for (auto& t: load_tasks(cfg.tasks_path))
                tasks.emplace(t.id, std::move(t));
    }

    const TaskInstance& task(const std::string& id) const
    {
        auto it = tasks.find(id);
        if (it == tasks.end())
            throw Error(Errc::InvalidTask, "no task with id '" + id + "'");
        return it->second;
    }

    RewardBreakdown grade(const Trajectory& t) const
    {
        auto const& task_instance = task(t.task_id);
        return total_reward(t, AnswerKey::from_task(task_instance, cfg.reward.match_mode), cfg.reward);
    }
};

struct Script
{
    std::string task_id;
    std::vector<std::string> turns;
};

std::map<std::string, Script> load_scripts(const std::filesystem::path& path)
{
    auto out = std::map<std::string, Script> {};
    for (auto const& j: read_jsonl(path, "tirgym.scripts", 1))
        out[j.at("name").get<std::string>()] = Script { j.at("task_id").get<std::string>(), j.at("turns").get<std::vector<std::string>>() };
    return out;
}

using TurnPolicy = std::function<std::string(const TaskInstance&, int turn, const std::optional<std::string>& last_obs)>;

Trajectory run_episode(Context& ctx, const TaskInstance& task, const TurnPolicy& policy, int max_turns)
{
    auto [id, obs] = ctx.env->reset(task);
    auto last = std::optional<std::string> {};
    for (int turn = 0; turn < max_turns; ++turn)
    {
        auto result = ctx.env->step_text(id, policy(task, turn, last));
        if (result.observation)
            last = result.observation->text;
        if (result.done)
            return ctx.env->finalize(id);
    }
    throw Error(Errc::InvalidRequest, "policy did not finish task '" + task.id + "' within " + std::to_string(max_turns) + " turns");
}

std::string reward_table(const std::vector<Trajectory>& trajectories)
{
    std::size_t by_total[4] = {};
    std::size_t other = 0;
    double format = 0, accuracy = 0, tool_use = 0;
    for (auto const& t: trajectories)
    {
        auto const& r = *t.reward;
        format += r.format;
        accuracy += r.accuracy;
        tool_use += r.tool_use;
        auto k = static_cast<int>(r.total);
        if (k >= 0 && k <= 3 && static_cast<double>(k) == r.total)
            ++by_total[k];
        else
            ++other;
    }
    auto out = std::ostringstream {};
    out << "trajectories " << trajectories.size() << '\n';
    for (int k = 0; k <= 3; ++k)
        out << "total=" << k << ' ' << by_total[k] << '\n';
    if (other)
        out << "total=other " << other << '\n';
    out << "format " << format << '\n' << "accuracy " << accuracy << '\n' << "tool_use " << tool_use << '\n';
    return out.str();
}

int cmd_serve(const std::string& config, int port_override)
{
    auto ctx = Context(load_server_config(config), "", "", "");
    auto gateway = Gateway(*ctx.env, ctx.tasks, ctx.cfg.reward, ctx.cfg.judge, ctx.cfg.idempotency_cache);
    auto port = gateway.start(ctx.cfg.host, port_override >= 0 ? port_override : ctx.cfg.port, ctx.cfg.threads);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << ctx.cfg.host << ':' << port << std::endl;
    while (!g_stop.load())
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    gateway.stop();
    std::cout << "stopped; " << ctx.env->active_episodes() << " episodes were still active" << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    auto app = CLI::App { "tirgym: episodic tool-integrated reasoning environment" };
    app.require_subcommand(1);
    auto config = std::string {};
    app.add_option("--config", config, "server config file (default: $TIRGYM_CONFIG)");

    auto tasks_path = std::string {};
    auto images = std::string {};
    auto corpus = std::string {};
    auto out_path = std::string {};
    auto in_path = std::string {};
    std::uint64_t seed = 1;

    auto* serve = app.add_subcommand("serve", "run the HTTP gateway until SIGINT/SIGTERM");
    int port = -1;
    serve->add_option("--port", port, "override server.port (0 picks a free port)");

    auto* rollout = app.add_subcommand("rollout", "run a policy over a task file and write trajectories");
    auto policy = std::string {};
    auto scripts = std::string {};
    auto task_filter = std::vector<std::string> {};
    int episodes = 1;
    rollout->add_option("--tasks", tasks_path, "task file")->required();
    rollout->add_option("--policy", policy, "scripted:<name> | random | greedy:<toy policy file>")->required();
    rollout->add_option("--scripts", scripts, "script file (default: scripts.jsonl next to the tasks)");
    rollout->add_option("--task", task_filter, "restrict to these task ids");
    rollout->add_option("--episodes", episodes, "episodes per task")->check(CLI::PositiveNumber);
    rollout->add_option("--seed", seed, "random seed");
    rollout->add_option("--out", out_path, "trajectory file")->required();
    rollout->add_option("--images", images, "image store root (default: the tasks directory)");
    rollout->add_option("--corpus", corpus, "retrieval corpus directory");

    auto* reward = app.add_subcommand("reward", "grade a trajectory file");
    auto scheme = std::string {};
    reward->add_option("--in", in_path, "trajectory file")->required();
    reward->add_option("--tasks", tasks_path, "task file")->required();
    reward->add_option("--out", out_path, "write the graded trajectories here");
    reward->add_option("--scheme", scheme, "default | reward1 | reward2");

    auto* curate = app.add_subcommand("curate", "filter, judge, dedup and export SFT data");
    auto sft_path = std::string {};
    auto judge_spec = std::string { "rule" };
    auto system_prompt = std::string {};
    curate->add_option("--in", in_path, "graded trajectory file")->required();
    curate->add_option("--out", out_path, "curated record file")->required();
    curate->add_option("--sft", sft_path, "SFT export file")->required();
    curate->add_option("--judge", judge_spec, "rule | <host>:<port>");
    curate->add_option("--system-prompt", system_prompt, "system prompt file");

    auto* train = app.add_subcommand("train-toy", "train the toy policy with GRPO");
    auto toy = ToyTrainConfig {};
    auto toy_scheme = std::string { "default" };
    auto policy_out = std::string {};
    train->add_option("--groups", toy.groups, "number of groups")->check(CLI::PositiveNumber);
    train->add_option("--group-size", toy.group_size, "episodes per group")->check(CLI::Range(2, 4096));
    train->add_option("--lr", toy.learning_rate, "learning rate");
    train->add_option("--seed", toy.seed, "random seed");
    train->add_option("--scheme", toy_scheme, "default | reward1 | reward2");
    train->add_option("--metrics", out_path, "metrics file")->required();
    train->add_option("--policy-out", policy_out, "write the trained policy here");

    auto* bench = app.add_subcommand("bench", "batched tool dispatch throughput");
    int calls = 1000;
    int workers = 16;
    int latency_ms = 10;
    int max_batch = 8;
    bool enforce = false;
    bench->add_option("--calls", calls)->check(CLI::PositiveNumber);
    bench->add_option("--workers", workers)->check(CLI::PositiveNumber);
    bench->add_option("--latency-ms", latency_ms)->check(CLI::NonNegativeNumber);
    bench->add_option("--max-batch", max_batch)->check(CLI::PositiveNumber);
    bench->add_option("--out", out_path, "write the report as JSON here");
    bench->add_flag("--enforce", enforce, "exit 1 when wall time exceeds twice the ideal");

    auto* replay = app.add_subcommand("replay", "re-execute recorded trajectories and diff them byte for byte");
    replay->add_option("--in", in_path, "trajectory file")->required();
    replay->add_option("--tasks", tasks_path, "task file")->required();
    replay->add_option("--images", images, "image store root (default: the tasks directory)");
    replay->add_option("--corpus", corpus, "retrieval corpus directory");

    auto* manifest = app.add_subcommand("manifest", "print the tool registry manifest");

    auto* enumerate = app.add_subcommand("enumerate", "write the synthetic reward-check space");
    auto enum_tasks = std::string {};
    enumerate->add_option("--tasks-out", enum_tasks, "task file")->required();
    enumerate->add_option("--out", out_path, "trajectory file")->required();

    CLI11_PARSE(app, argc, argv);

    // outputs are written atomically at the end; on failure drop anything left behind
    auto const cleanup = [&](const std::string& path) {
        if (!path.empty())
            std::filesystem::remove(path + ".partial");
    };

    try
    {
        if (*serve)
            return cmd_serve(config, port);

        if (*rollout)
        {
            auto ctx = Context(load_server_config(config), tasks_path, images, corpus);
            auto rng = std::mt19937_64(seed);
            auto turn_policy = TurnPolicy {};
            auto targets = std::vector<std::string> {};
            if (policy.starts_with("scripted:"))
            {
                auto path = scripts.empty() ? std::filesystem::path(tasks_path).parent_path() / "scripts.jsonl" : std::filesystem::path(scripts);
                auto all = load_scripts(path);
                auto it = all.find(policy.substr(9));
                if (it == all.end())
                    throw Error(Errc::InvalidRequest, "no script named '" + policy.substr(9) + "'");
                auto script = it->second;
                targets.push_back(script.task_id);
                turn_policy = [script](const TaskInstance&, int turn, const std::optional<std::string>&) {
                    if (turn >= static_cast<int>(script.turns.size()))
                        throw Error(Errc::InvalidRequest, "script ran out of turns");
                    return script.turns[static_cast<std::size_t>(turn)];
                };
            }
            else if (policy == "random")
            {
                turn_policy = [&rng](const TaskInstance& task, int, const std::optional<std::string>&) {
                    auto unit = std::uniform_real_distribution<double>(0.0, 1.0);
                    auto choice = rng() % 3;
                    if (choice == 0)
                    {
                        auto x0 = std::round(unit(rng) * 50) / 100, y0 = std::round(unit(rng) * 50) / 100;
                        auto box = Json::array({ x0, y0, x0 + 0.5, y0 + 0.5 });
                        return serialize_turn({ "Look closer at one region.", ToolCall { "image_zoom_in", Json { { "bbox_2d", box } } } });
                    }
                    if (choice == 1)
                        return serialize_turn({ "Try a brighter rendering.", ToolCall { "brightening", Json::object() } });
                    auto label = task.options.empty() ? task.answer_key : task.options[rng() % task.options.size()].label;
                    return serialize_turn({ "Pick an option.", FinalAnswer { label } });
                };
            }
            else if (policy.starts_with("greedy:"))
            {
                auto toy_policy = ToyPolicy::from_json(Json::parse(read_text_file(policy.substr(7))));
                turn_policy = [toy_policy, used = std::make_shared<bool>(false)](const TaskInstance&, int turn,
                                                                                   const std::optional<std::string>& last) {
                    if (turn == 0)
                        *used = false;
                    auto probs = toy_policy.probabilities(ToyPolicy::state_index(turn, *used));
                    auto a = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
                    *used = *used || a == ToyPolicy::CallZoom || a == ToyPolicy::CallBrighten;
                    return render_toy_action(toy_policy, a, last);
                };
            }
            else
            {
                throw Error(Errc::InvalidRequest, "unknown policy '" + policy + "'");
            }
            if (!task_filter.empty())
                targets = task_filter;
            if (targets.empty())
                for (auto const& [id, _]: ctx.tasks)
                    targets.push_back(id);

            auto lines = std::vector<Json> {};
            auto const max_turns = ctx.cfg.episode.max_tool_calls + 2;
            for (auto const& id: targets)
                for (int e = 0; e < episodes; ++e)
                {
                    auto t = run_episode(ctx, ctx.task(id), turn_policy, max_turns);
                    t.reward = ctx.grade(t);
                    lines.push_back(trajectory_to_json(t));
                }
            write_jsonl(out_path, "tirgym.trajectory", trajectory_schema_version, lines);
            std::cout << "wrote " << lines.size() << " trajectories to " << out_path << '\n';
            return 0;
        }

        if (*reward)
        {
            auto cfg = load_server_config(config);
            if (!scheme.empty())
                cfg.reward.scheme = scheme_from_name(scheme);
            auto tasks = std::map<std::string, TaskInstance> {};
            for (auto& t: load_tasks(tasks_path))
                tasks.emplace(t.id, std::move(t));
            auto trajectories = load_trajectories(in_path);
            for (auto& t: trajectories)
            {
                auto it = tasks.find(t.task_id);
                if (it == tasks.end())
                    throw Error(Errc::InvalidTask, "no task with id '" + t.task_id + "'");
                t.reward = total_reward(t, AnswerKey::from_task(it->second, cfg.reward.match_mode), cfg.reward);
            }
            std::cout << reward_table(trajectories);
            if (!out_path.empty())
                save_trajectories(out_path, trajectories);
            return 0;
        }

        if (*curate)
        {
            auto cfg = load_server_config(config);
            auto records = records_from_trajectories(load_trajectories(in_path));
            auto report = outcome_filter(records);
            auto judge = std::unique_ptr<Judge> {};
            if (judge_spec == "rule")
                judge = std::make_unique<RuleJudge>(cfg.judge);
            else
            {
                auto colon = judge_spec.rfind(':');
                if (colon == std::string::npos)
                    throw Error(Errc::InvalidConfig, "--judge expects 'rule' or host:port");
                judge = std::make_unique<HttpJudge>(judge_spec.substr(0, colon), std::stoi(judge_spec.substr(colon + 1)));
            }
            auto judged = std::vector<TrajectoryRecord> {};
            std::size_t unavailable = 0;
            for (auto const& r: report.kept)
            {
                judged.push_back(judge_and_weight(r, *judge, cfg.judge));
                unavailable += judged.back().judge_unavailable ? 1 : 0;
            }
            auto unique = dedup(judged, cfg.episode.grammar);
            auto prompt = system_prompt.empty() ? std::string {} : std::string(trim(read_text_file(system_prompt)));
            auto sft = export_sft(unique, prompt);
            save_records(out_path, unique);
            write_sft(sft_path, sft);
            std::cout << "input " << records.size() << "\nkept " << report.kept.size() << "\ndropped_wrong_answer "
                      << report.dropped_wrong_answer << "\ndropped_malformed " << report.dropped_malformed
                      << "\njudge_unavailable " << unavailable << "\nafter_dedup " << unique.size() << "\nsft_examples "
                      << sft.size() << '\n';
            return 0;
        }

        if (*train)
        {
            toy.scheme = scheme_from_name(toy_scheme);
            auto lines = std::vector<Json> {};
            auto result = train_toy(toy, [&](int step, const ToyStepStats& s) { lines.push_back(toy_stats_to_json(step, s)); });
            write_jsonl(out_path, "tirgym.toy_metrics", 1, lines);
            if (!policy_out.empty())
                write_file_atomic(policy_out, result.policy.to_json().dump(2) + "\n");
            std::printf("scheme %s\ngroups %d\nmean_default_reward %.6f\nfinal_tool_use_probability %.6f\n", toy_scheme.c_str(),
                        toy.groups, result.mean_default_reward, result.final_tool_use_probability);
            return 0;
        }

        if (*bench)
        {
            auto rc = RuntimeConfig {};
            rc.workers_per_tool = workers;
            rc.max_batch = max_batch;
            rc.queue_capacity = std::max(calls, 1024);
            auto runtime = ToolRuntime(rc);
            register_latency_tool(runtime, "latency_echo", std::chrono::milliseconds(latency_ms), workers);
            auto requests = std::vector<ToolRequest> {};
            for (int i = 0; i < calls; ++i)
            {
                auto r = ToolRequest {};
                r.request_id = "bench-" + std::to_string(i);
                r.tool = "latency_echo";
                r.arguments = Json { { "payload", std::to_string(i) } };
                requests.push_back(std::move(r));
            }
            auto start = std::chrono::steady_clock::now();
            auto results = runtime.invoke_batch(requests);
            auto wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            bool ordered = results.size() == requests.size();
            std::size_t ok = 0;
            for (std::size_t i = 0; ordered && i < results.size(); ++i)
            {
                ordered = results[i].request_id == requests[i].request_id &&
                          results[i].text == "echo:" + requests[i].request_id + ":" + std::to_string(i);
                ok += results[i].status == ToolStatus::Ok ? 1 : 0;
            }
            auto const ideal = std::ceil(static_cast<double>(calls) / workers) * latency_ms;
            auto const bound = 2 * ideal;
            auto report = Json { { "calls", calls },         { "workers", workers },          { "latency_ms", latency_ms },
                                 { "wall_ms", wall },        { "ideal_ms", ideal },           { "bound_ms", bound },
                                 { "ok", ok },               { "order_preserved", ordered }, { "within_bound", wall <= bound } };
            std::cout << report.dump(2) << '\n';
            if (!out_path.empty())
                write_file_atomic(out_path, report.dump(2) + "\n");
            return enforce && !(wall <= bound && ordered && ok == static_cast<std::size_t>(calls)) ? 1 : 0;
        }

        if (*replay)
        {
            auto ctx = Context(load_server_config(config), tasks_path, images, corpus);
            auto recorded = load_trajectories(in_path);
            std::size_t identical = 0;
            for (std::size_t i = 0; i < recorded.size(); ++i)
            {
                auto expected = recorded[i];
                expected.reward.reset();
                auto turns = std::vector<std::string> {};
                for (std::size_t k = 0; k + 1 < expected.steps.size(); ++k)
                    if (expected.steps[k].span_kind == SpanKind::Think)
                        turns.push_back(expected.steps[k].span + expected.steps[k + 1].span);
                auto replayed = run_episode(
                    ctx, ctx.task(expected.task_id),
                    [&](const TaskInstance&, int turn, const std::optional<std::string>&) {
                        if (turn >= static_cast<int>(turns.size()))
                            throw Error(Errc::InvalidRequest, "recorded trajectory ran out of turns");
                        return turns[static_cast<std::size_t>(turn)];
                    },
                    static_cast<int>(turns.size()));
                auto a = trajectory_line(expected);
                auto b = trajectory_line(replayed);
                if (a == b)
                {
                    ++identical;
                    continue;
                }
                std::size_t at = 0;
                while (at < a.size() && at < b.size() && a[at] == b[at])
                    ++at;
                std::cerr << "trajectory " << i << " (" << expected.task_id << ") differs at byte " << at << "\n  recorded: "
                          << a.substr(at, 80) << "\n  replayed: " << b.substr(at, 80) << '\n';
            }
            std::cout << "replayed " << recorded.size() << " identical " << identical << '\n';
            return identical == recorded.size() ? 0 : 1;
        }

        if (*manifest)
        {
            auto ctx = Context(load_server_config(config), "", "", "");
            std::cout << ctx.runtime->manifest().dump(2) << '\n';
            return 0;
        }

        if (*enumerate)
        {
            auto rc = RuntimeConfig {};
            rc.workers_per_tool = 1;
            auto runtime = ToolRuntime(rc);
            auto items = enumerate_synthetic_space(runtime);
            auto task_lines = std::vector<Json> {};
            auto seen = std::set<std::string> {};
            auto trajectories = std::vector<Trajectory> {};
            for (auto const& item: items)
            {
                if (seen.insert(item.task.id).second)
                    task_lines.push_back(task_to_json(item.task));
                trajectories.push_back(item.trajectory);
            }
            write_jsonl(enum_tasks, "tirgym.tasks", 1, task_lines);
            save_trajectories(out_path, trajectories);
            std::cout << "wrote " << trajectories.size() << " trajectories over " << task_lines.size() << " tasks\n";
            return 0;
        }
    }
    catch (const Error& e)
    {
        cleanup(out_path);
        cleanup(sft_path);
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception& e)
    {
        cleanup(out_path);
        cleanup(sft_path);
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
