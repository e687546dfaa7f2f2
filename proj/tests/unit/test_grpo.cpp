// SPDX-License-Identifier: Apache-2.0

#include <tirgym/error.hpp>
#include <tirgym/grpo.hpp>
#include <tirgym/toy.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

using namespace tirgym;
using Catch::Approx;

namespace
{

MaskedSequence one_token(double logp_new, double logp_old)
{
    return MaskedSequence { { 7 }, { logp_new }, { logp_old }, { true } };
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

MaskedSequence random_sequence(std::mt19937_64& rng, int len)
{
    auto logp = std::uniform_real_distribution<double>(-3.0, -0.05);
    auto seq = MaskedSequence {};
    for (int i = 0; i < len; ++i)
    {
        seq.token_ids.push_back(static_cast<std::int64_t>(rng() % 1000));
        seq.logp_old.push_back(logp(rng));
        seq.logp_new.push_back(seq.logp_old.back() + std::uniform_real_distribution<double>(-0.4, 0.4)(rng));
        seq.trainable_mask.push_back(rng() % 3 != 0);
    }
    seq.trainable_mask[0] = true;
    return seq;
}

} // namespace

TEST_CASE("group advantages", "[grpo]")
{
    auto a = group_advantages(std::vector<double> { 1, 0, 1, 0 });
    CHECK(a == std::vector<double> { 1, -1, 1, -1 });
    auto flat = group_advantages(std::vector<double> { 2, 2, 2, 2 });
    CHECK(flat == std::vector<double> { 0, 0, 0, 0 });

    // oracle: two-pass population statistics
    auto rng = std::mt19937_64(4);
    for (int trial = 0; trial < 200; ++trial)
    {
        auto r = std::vector<double>(2 + rng() % 15);
        for (auto& x: r)
            x = static_cast<double>(rng() % 4);
        double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
        double var = 0;
        for (auto x: r)
            var += (x - mean) * (x - mean);
        double sd = std::sqrt(var / static_cast<double>(r.size()));
        auto got = group_advantages(r);
        for (std::size_t i = 0; i < r.size(); ++i)
            CHECK(got[i] == Approx(sd < 1e-8 ? 0.0 : (r[i] - mean) / sd).margin(1e-12));
    }

    CHECK(error_of([] { (void)group_advantages(std::vector<double> { 1 }); }) == Errc::GroupTooSmall);
    CHECK(error_of([] { (void)group_advantages(std::vector<double> {}); }) == Errc::GroupTooSmall);
}

TEST_CASE("importance ratios", "[grpo]")
{
    auto seq = MaskedSequence { { 1, 2, 3 }, { std::log(1.3), -1.0, -2.0 }, { 0.0, -0.5, -1.0 }, { true, false, true } };
    auto r = importance_ratios(seq);
    CHECK(r[0] == Approx(1.3).epsilon(1e-12));
    CHECK(r[1] == 1.0);
    CHECK(r[2] == Approx(std::exp(-1.0)).epsilon(1e-12));

    auto rng = std::mt19937_64(9);
    for (int i = 0; i < 100; ++i)
    {
        auto s = random_sequence(rng, 12);
        auto got = importance_ratios(s);
        for (std::size_t k = 0; k < got.size(); ++k)
        {
            if (s.trainable_mask[k])
                CHECK(got[k] == Approx(std::exp(s.logp_new[k] - s.logp_old[k])).epsilon(1e-14));
            else
                CHECK(got[k] == 1.0);
        }
    }
}

TEST_CASE("clipped surrogate examples", "[grpo]")
{
    auto up = RolloutGroup { { one_token(std::log(1.3), 0.0) }, { 0 } };
    CHECK(clipped_surrogate(up, std::vector<double> { 1.0 }) == Approx(1.2).epsilon(1e-12));
    auto down = RolloutGroup { { one_token(std::log(0.7), 0.0) }, { 0 } };
    CHECK(clipped_surrogate(down, std::vector<double> { -1.0 }) == Approx(-0.8).epsilon(1e-12));
    // inside the trust region the ratio passes through
    auto near = RolloutGroup { { one_token(std::log(1.1), 0.0) }, { 0 } };
    CHECK(clipped_surrogate(near, std::vector<double> { 2.0 }) == Approx(2.2).epsilon(1e-12));
    // clipped region has zero gradient
    CHECK(clipped_surrogate_grad(up, std::vector<double> { 1.0 })[0][0] == 0.0);
    CHECK(clipped_surrogate_grad(near, std::vector<double> { 2.0 })[0][0] == Approx(2.2).epsilon(1e-12));

    auto bad = ClipConfig {};
    bad.epsilon = 0;
    CHECK(error_of([&] { bad.validate(); }) == Errc::InvalidConfig);
    CHECK(error_of([&] { (void)clipped_surrogate(up, std::vector<double> { 1.0, 2.0 }); }) == Errc::LengthMismatch);
}

TEST_CASE("surrogate gradient matches finite differences", "[grpo]")
{
    auto rng = std::mt19937_64(21);
    auto cfg = ClipConfig {};
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial)
    {
        auto group = RolloutGroup {};
        for (int i = 0; i < 4; ++i)
            group.sequences.push_back(random_sequence(rng, 6));
        auto adv = std::vector<double> { 1.0, -0.5, 0.25, -1.5 };
        auto grad = clipped_surrogate_grad(group, adv, cfg);
        double const h = 1e-6;
        for (std::size_t i = 0; i < group.sequences.size(); ++i)
        {
            for (std::size_t k = 0; k < 6; ++k)
            {
                auto& lp = group.sequences[i].logp_new[k];
                double ratio = std::exp(lp - group.sequences[i].logp_old[k]);
                if (std::abs(ratio - 1.2) < 1e-4 || std::abs(ratio - 0.8) < 1e-4)
                    continue;
                double const saved = lp;
                lp = saved + h;
                double plus = clipped_surrogate(group, adv, cfg);
                lp = saved - h;
                double minus = clipped_surrogate(group, adv, cfg);
                lp = saved;
                CHECK(grad[i][k] == Approx((plus - minus) / (2 * h)).margin(1e-7));
                ++checked;
            }
        }
    }
    CHECK(checked > 400);
}

TEST_CASE("masked negative log-likelihood", "[grpo]")
{
    auto seq = MaskedSequence { { 1, 2 }, { std::log(0.5), -7.0 }, { 0, 0 }, { true, false } };
    CHECK(masked_nll(seq) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(masked_nll_grad(seq) == std::vector<double> { -1.0, 0.0 });

    // oracle: keep trainable tokens, then average
    auto rng = std::mt19937_64(5);
    for (int i = 0; i < 100; ++i)
    {
        auto s = random_sequence(rng, 10);
        auto kept = std::vector<double> {};
        for (std::size_t k = 0; k < 10; ++k)
            if (s.trainable_mask[k])
                kept.push_back(s.logp_new[k]);
        double expect = -std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
        CHECK(masked_nll(s) == Approx(expect).epsilon(1e-12));
    }

    auto none = MaskedSequence { { 1 }, { -1.0 }, { -1.0 }, { false } };
    CHECK(error_of([&] { (void)masked_nll(none); }) == Errc::EmptyTrainableSequence);
    auto ragged = MaskedSequence { { 1, 2 }, { -1.0 }, { -1.0, -1.0 }, { true, true } };
    CHECK(error_of([&] { ragged.check(); }) == Errc::LengthMismatch);
}

TEST_CASE("toy policy starts with a quarter tool-use rate", "[grpo]")
{
    auto p = ToyPolicy::initial();
    CHECK(p.tool_use_probability() == Approx(0.25).epsilon(1e-12));
    for (int s = 0; s < ToyPolicy::state_count; ++s)
    {
        auto probs = p.probabilities(s);
        CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == Approx(1.0).epsilon(1e-12));
    }
    CHECK(ToyPolicy::from_json(p.to_json()) == p);
}

TEST_CASE("a zero learning rate leaves the toy policy unchanged", "[grpo]")
{
    auto rc = RuntimeConfig {};
    rc.workers_per_tool = 1;
    auto runtime = ToolRuntime(rc);
    register_toy_tools(runtime);
    auto env = Environment(runtime, toy_episode_config());
    auto tasks = make_toy_tasks(4, 3);
    auto rng = std::mt19937_64(11);
    auto p = ToyPolicy::initial();
    auto step = toy_grpo_step(p, env, tasks[0], RewardConfig {}, 8, 0.0, ClipConfig {}, rng);
    CHECK(step.policy == p);
    CHECK(env.active_episodes() == 0);
}

TEST_CASE("toy training learns to call tools under the default reward", "[grpo]")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
    {
        auto cfg = ToyTrainConfig {};
        cfg.seed = seed;
        auto with_tool = train_toy(cfg);
        cfg.scheme = RewardScheme::Reward1;
        auto without = train_toy(cfg);
        INFO("seed " << seed);
        CHECK(with_tool.final_tool_use_probability > 0.9);
        CHECK(without.final_tool_use_probability < with_tool.final_tool_use_probability);
    }
}
