// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/grpo.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace tirgym
{

void ClipConfig::validate() const
{
    if (!(epsilon > 0 && epsilon < 1))
        throw Error(Errc::InvalidConfig, "epsilon must lie in (0, 1)");
    if (!(std_floor > 0))
        throw Error(Errc::InvalidConfig, "std_floor must be positive");
}

void MaskedSequence::check() const
{
    auto n = token_ids.size();
    if (logp_new.size() != n || logp_old.size() != n || trainable_mask.size() != n)
        throw Error(Errc::LengthMismatch, "token_ids, logp_new, logp_old and trainable_mask differ in length");
}

std::size_t MaskedSequence::trainable_count() const
{
    return static_cast<std::size_t>(std::count(trainable_mask.begin(), trainable_mask.end(), true));
}

std::vector<double> group_advantages(std::span<const double> rewards, const ClipConfig& cfg)
{
    cfg.validate();
    if (rewards.size() < 2)
        throw Error(Errc::GroupTooSmall, "a group needs at least 2 rewards, got " + std::to_string(rewards.size()));
    auto const n = static_cast<double>(rewards.size());
    double mean = 0;
    for (auto r: rewards)
        mean += r;
    mean /= n;
    double var = 0;
    for (auto r: rewards)
        var += (r - mean) * (r - mean);
    auto const std = std::sqrt(var / n);

    auto out = std::vector<double>(rewards.size(), 0.0);
    if (std < cfg.std_floor)
        return out;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = (rewards[i] - mean) / std;
    return out;
}

std::vector<double> importance_ratios(const MaskedSequence& seq)
{
    seq.check();
    auto out = std::vector<double>(seq.logp_new.size(), 1.0);
    for (std::size_t k = 0; k < out.size(); ++k)
        if (seq.trainable_mask[k])
            out[k] = std::exp(seq.logp_new[k] - seq.logp_old[k]);
    return out;
}

namespace
{

void check_group(const RolloutGroup& group, std::span<const double> advantages)
{
    if (group.sequences.empty())
        throw Error(Errc::GroupTooSmall, "empty rollout group");
    if (advantages.size() != group.sequences.size())
        throw Error(Errc::LengthMismatch, "one advantage per sequence is required");
    for (auto const& seq: group.sequences)
    {
        seq.check();
        if (seq.trainable_count() == 0)
            throw Error(Errc::EmptyTrainableSequence, "sequence has no trainable tokens");
    }
}

} // namespace

double clipped_surrogate(const RolloutGroup& group, std::span<const double> advantages, const ClipConfig& cfg)
{
    cfg.validate();
    check_group(group, advantages);
    double total = 0;
    for (std::size_t i = 0; i < group.sequences.size(); ++i)
    {
        auto const& seq = group.sequences[i];
        auto const a = advantages[i];
        double sum = 0;
        for (std::size_t k = 0; k < seq.logp_new.size(); ++k)
        {
            if (!seq.trainable_mask[k])
                continue;
            auto const r = std::exp(seq.logp_new[k] - seq.logp_old[k]);
            auto const clipped = std::clamp(r, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
            sum += std::min(r * a, clipped * a);
        }
        total += sum / static_cast<double>(seq.trainable_count());
    }
    return total / static_cast<double>(group.sequences.size());
}

std::vector<std::vector<double>> clipped_surrogate_grad(const RolloutGroup& group, std::span<const double> advantages,
                                                        const ClipConfig& cfg)
{
    cfg.validate();
    check_group(group, advantages);
    auto const g = static_cast<double>(group.sequences.size());
    auto out = std::vector<std::vector<double>> {};
    out.reserve(group.sequences.size());
    for (std::size_t i = 0; i < group.sequences.size(); ++i)
    {
        auto const& seq = group.sequences[i];
        auto const a = advantages[i];
        auto const scale = 1.0 / (g * static_cast<double>(seq.trainable_count()));
        auto grad = std::vector<double>(seq.logp_new.size(), 0.0);
        for (std::size_t k = 0; k < seq.logp_new.size(); ++k)
        {
            if (!seq.trainable_mask[k])
                continue;
            auto const r = std::exp(seq.logp_new[k] - seq.logp_old[k]);
            auto const clipped = std::clamp(r, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
            // the clipped branch is constant in logp, so only the unclipped one carries gradient
            if (r * a <= clipped * a)
                grad[k] = r * a * scale;
        }
        out.push_back(std::move(grad));
    }
    return out;
}

double masked_nll(const MaskedSequence& seq)
{
    seq.check();
    auto const n = seq.trainable_count();
    if (n == 0)
        throw Error(Errc::EmptyTrainableSequence, "sequence has no trainable tokens");
    double sum = 0;
    for (std::size_t k = 0; k < seq.logp_new.size(); ++k)
        if (seq.trainable_mask[k])
            sum += seq.logp_new[k];
    return -sum / static_cast<double>(n);
}

std::vector<double> masked_nll_grad(const MaskedSequence& seq)
{
    seq.check();
    auto const n = seq.trainable_count();
    if (n == 0)
        throw Error(Errc::EmptyTrainableSequence, "sequence has no trainable tokens");
    auto grad = std::vector<double>(seq.logp_new.size(), 0.0);
    for (std::size_t k = 0; k < grad.size(); ++k)
        if (seq.trainable_mask[k])
            grad[k] = -1.0 / static_cast<double>(n);
    return grad;
}

} // namespace tirgym
