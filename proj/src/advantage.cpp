// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/advantage.hpp"

#include <cmath>

#include "cfpo/errors.hpp"

namespace cfpo {

double RewardScale::apply(double raw) const {
    if (raw != 0.0 && raw != 1.0) {
        throw ValidationError("raw rewards must be binary (0 or 1), got " + std::to_string(raw));
    }
    return mode == RewardScaleMode::ZeroOne ? raw : 2.0 * raw - 1.0;
}

RolloutBatch apply_reward_scale(const RolloutBatch& batch, RewardScale scale) {
    RolloutBatch out = batch;
    for (auto& g : out.groups) {
        for (auto& r : g.responses) r.reward = scale.apply(r.reward);
    }
    return out;
}

MeanStd group_stats(std::span<const double> rewards) {
    if (rewards.empty()) return {};
    const double n = static_cast<double>(rewards.size());
    double sum = 0.0;
    for (double r : rewards) sum += r;
    const double mean = sum / n;
    double sq = 0.0;
    for (double r : rewards) sq += (r - mean) * (r - mean);
    return {mean, std::sqrt(sq / n)};
}

bool uses_group_std(NormVariant v) {
    return v == NormVariant::GroupMeanStd || v == NormVariant::GroupMeanBatchStd;
}

AdvantageTensor compute_advantages(const RolloutBatch& batch, const NormStrategy& strategy,
                                   std::span<const bool> participates) {
    if (!(strategy.epsilon_guard > 0.0)) throw ValidationError("adv.eps must be positive");
    const std::size_t k = batch.group_size();
    const std::size_t total = batch.num_trajectories();
    if (!participates.empty() && participates.size() != total) {
        throw ValidationError("participation flags do not match the batch");
    }
    auto active = [&](std::size_t i) { return participates.empty() || participates[i]; };

    const std::vector<double> rewards = flatten_rewards(batch);

    std::vector<double> pool;
    pool.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        if (active(i)) pool.push_back(rewards[i]);
    }
    const MeanStd batch_stats = group_stats(pool);
    const double eps = strategy.epsilon_guard;

    AdvantageTensor out;
    out.trajectory.assign(total, 0.0);
    std::vector<double> members;
    for (std::size_t g = 0; g < batch.groups.size(); ++g) {
        members.clear();
        for (std::size_t j = 0; j < k; ++j) {
            if (active(g * k + j)) members.push_back(rewards[g * k + j]);
        }
        const MeanStd gs = group_stats(members);
        if (uses_group_std(strategy.variant) && !members.empty() && gs.std < eps) {
            out.degenerate_groups.push_back(g);
        }
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t i = g * k + j;
            if (!active(i)) continue;
            const double r = rewards[i];
            double a = 0.0;
            switch (strategy.variant) {
            case NormVariant::None: a = r; break;
            case NormVariant::GroupMeanStd: a = (r - gs.mean) / (gs.std + eps); break;
            case NormVariant::BatchMeanStd: a = (r - batch_stats.mean) / (batch_stats.std + eps); break;
            case NormVariant::GroupMeanOnly: a = r - gs.mean; break;
            case NormVariant::BatchMeanOnly: a = r - batch_stats.mean; break;
            case NormVariant::GroupMeanBatchStd: a = (r - gs.mean) / (batch_stats.std + eps); break;
            }
            out.trajectory[i] = a;
        }
    }

    out.per_token.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        out.per_token.emplace_back(batch.trajectory(i).tokens.length(), out.trajectory[i]);
    }
    return out;
}

NormVariant parse_norm_variant(std::string_view name) {
    if (name == "none") return NormVariant::None;
    if (name == "group") return NormVariant::GroupMeanStd;
    if (name == "batch") return NormVariant::BatchMeanStd;
    if (name == "group_mean_only") return NormVariant::GroupMeanOnly;
    if (name == "batch_mean_only") return NormVariant::BatchMeanOnly;
    if (name == "group_mean_batch_std") return NormVariant::GroupMeanBatchStd;
    throw ValidationError("unknown adv.norm \"" + std::string(name) + "\"");
}

std::string_view to_string(NormVariant v) {
    switch (v) {
    case NormVariant::None: return "none";
    case NormVariant::GroupMeanStd: return "group";
    case NormVariant::BatchMeanStd: return "batch";
    case NormVariant::GroupMeanOnly: return "group_mean_only";
    case NormVariant::BatchMeanOnly: return "batch_mean_only";
    case NormVariant::GroupMeanBatchStd: return "group_mean_batch_std";
    }
    return "none";
}

RewardScaleMode parse_reward_scale(std::string_view name) {
    if (name == "zero_one") return RewardScaleMode::ZeroOne;
    if (name == "pm_one") return RewardScaleMode::PlusMinusOne;
    throw ValidationError("unknown adv.reward_scale \"" + std::string(name) + "\"");
}

std::string_view to_string(RewardScaleMode m) {
    return m == RewardScaleMode::ZeroOne ? "zero_one" : "pm_one";
}

} // namespace cfpo
