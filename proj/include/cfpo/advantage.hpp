// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Critic-free advantage estimation. Every trajectory gets one scalar derived
// from reward statistics, which is then broadcast to all of its tokens.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfpo/rollout.hpp"

namespace cfpo {

enum class RewardScaleMode { ZeroOne, PlusMinusOne };

struct RewardScale {
    RewardScaleMode mode = RewardScaleMode::ZeroOne;

    /// r for ZeroOne, 2r - 1 for PlusMinusOne. Throws unless raw is 0 or 1.
    double apply(double raw) const;
};

enum class NormVariant { None, GroupMeanStd, BatchMeanStd, GroupMeanOnly, BatchMeanOnly, GroupMeanBatchStd };

struct NormStrategy {
    NormVariant variant = NormVariant::GroupMeanStd;
    double epsilon_guard = 1e-6;  // added to every std denominator
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population (divide by count)
};

struct AdvantageTensor {
    std::vector<double> trajectory;                // A_i, group-major
    std::vector<std::vector<double>> per_token;    // A_i broadcast over |o_i|
    std::vector<std::size_t> degenerate_groups;    // std_group < eps under a group-std variant
};

RolloutBatch apply_reward_scale(const RolloutBatch& batch, RewardScale scale);

MeanStd group_stats(std::span<const double> rewards);

/// `participates[i] == false` removes trajectory i from every statistic and
/// gives it advantage 0. An empty span means every trajectory participates.
AdvantageTensor compute_advantages(const RolloutBatch& batch, const NormStrategy& strategy,
                                   std::span<const bool> participates = {});

bool uses_group_std(NormVariant v);

NormVariant parse_norm_variant(std::string_view name);
std::string_view to_string(NormVariant v);
RewardScaleMode parse_reward_scale(std::string_view name);
std::string_view to_string(RewardScaleMode m);

} // namespace cfpo
