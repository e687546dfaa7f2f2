// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tirgym
{

struct ClipConfig
{
    double epsilon = 0.2;
    double std_floor = 1e-8;

    void validate() const;
};

/// Per-token log-probabilities of one trajectory. Untrainable positions are the
/// environment's observation and force-prompt tokens.
struct MaskedSequence
{
    std::vector<std::int64_t> token_ids;
    std::vector<double> logp_new;
    std::vector<double> logp_old;
    std::vector<bool> trainable_mask;

    /// Throws LengthMismatch.
    void check() const;
    [[nodiscard]] std::size_t trainable_count() const;
};

struct RolloutGroup
{
    std::vector<MaskedSequence> sequences;
    std::vector<double> rewards;
};

/// (R_i - mean) / max(std_pop, floor); all zeros when std_pop < floor. Throws GroupTooSmall.
std::vector<double> group_advantages(std::span<const double> rewards, const ClipConfig& cfg = {});

/// exp(logp_new - logp_old) on trainable tokens, exactly 1 elsewhere.
std::vector<double> importance_ratios(const MaskedSequence& seq);

/// (1/G) sum_i (1/|tau_i|) sum_{k trainable} min(r A_i, clip(r, 1-eps, 1+eps) A_i).
double clipped_surrogate(const RolloutGroup& group, std::span<const double> advantages, const ClipConfig& cfg = {});

/// d clipped_surrogate / d logp_new, one vector per sequence (zeros on masked tokens).
std::vector<std::vector<double>> clipped_surrogate_grad(const RolloutGroup& group, std::span<const double> advantages,
                                                        const ClipConfig& cfg = {});

/// -(sum_{k trainable} logp_new_k) / |tau|. Throws EmptyTrainableSequence.
double masked_nll(const MaskedSequence& seq);
/// d masked_nll / d logp_new.
std::vector<double> masked_nll_grad(const MaskedSequence& seq);

} // namespace tirgym
