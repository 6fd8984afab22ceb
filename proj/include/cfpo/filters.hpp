// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Sample-level filters: overlong masking, repetition detection on truncated
// responses, and dropping (or refilling) prompt groups whose rewards carry
// no relative signal.
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfpo/rollout.hpp"

namespace cfpo {

enum class GroupFilterMode { Off, Drop, Refill };

struct FilterConfig {
    bool overlong_enabled = false;
    bool overlong_exclude_stats = true;  // masked samples also leave normalization statistics
    int repeat_min_period = 1;
    int repeat_min_repeats = 3;
    GroupFilterMode group_mode = GroupFilterMode::Off;
    int refill_budget = 64;  // max extra groups sampled per iteration in refill mode

    void validate() const;
};

struct MaskedResponse {
    std::size_t trajectory = 0;
    std::string reason;
};

struct FilterReport {
    std::vector<MaskedResponse> masked;
    double repeat_ratio = 0.0;
    std::vector<std::size_t> dropped_groups;
    std::size_t refilled_groups = 0;
    std::vector<std::string> diagnostics;
};

/// Masks every token of every truncated response.
std::pair<LossMask, FilterReport> overlong_mask(const RolloutBatch& batch);

/// True iff a suffix of `tokens` is >= min_repeats back-to-back copies of one
/// block of period p, min_period <= p <= len / min_repeats.
bool detect_repeat(std::span<const TokenId> tokens, int min_period, int min_repeats);
bool detect_repeat(const TokenSeq& tokens, const FilterConfig& cfg);

/// |truncated and repetitive| / |truncated|, 0 with no truncated samples.
double repeat_ratio(const RolloutBatch& batch, const FilterConfig& cfg);

/// Whether a response takes part in normalization statistics.
using Participation = std::function<bool(const Response&)>;
/// Produces one freshly sampled, already-rewarded group; nullopt stops refilling.
using GroupResampler = std::function<std::optional<RolloutGroup>()>;

/// A group is informative when at least two participating responses exist
/// and their rewards are not all equal.
bool group_is_informative(const RolloutGroup& group, const Participation& participates);

struct GroupFilterResult {
    RolloutBatch kept;
    FilterReport report;
    bool empty = false;  // nothing informative survived; skip the iteration
};

GroupFilterResult group_filter(const RolloutBatch& batch, GroupFilterMode mode, const Participation& participates,
                               const GroupResampler& resample = {}, int refill_budget = 0);

GroupFilterMode parse_group_filter_mode(std::string_view name);
std::string_view to_string(GroupFilterMode m);

} // namespace cfpo
