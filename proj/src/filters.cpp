// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/filters.hpp"

#include "cfpo/errors.hpp"

namespace cfpo {

void FilterConfig::validate() const {
    if (repeat_min_period < 1) throw ValidationError("filter.repeat_min_period must be >= 1");
    if (repeat_min_repeats < 2) throw ValidationError("filter.repeat_min_repeats must be >= 2");
    if (refill_budget < 0) throw ValidationError("filter.refill_budget must be >= 0");
}

std::pair<LossMask, FilterReport> overlong_mask(const RolloutBatch& batch) {
    LossMask mask = LossMask::ones(batch);
    FilterReport report;
    for (std::size_t i = 0; i < batch.num_trajectories(); ++i) {
        if (batch.trajectory(i).truncated) {
            std::fill(mask.weights[i].begin(), mask.weights[i].end(), std::uint8_t{0});
            report.masked.push_back({i, "overlong"});
        }
    }
    return {std::move(mask), std::move(report)};
}

bool detect_repeat(std::span<const TokenId> s, int min_period, int min_repeats) {
    const std::size_t n = s.size();
    const auto reps = static_cast<std::size_t>(min_repeats);
    for (std::size_t p = static_cast<std::size_t>(min_period); p * reps <= n; ++p) {
        // Walk back from the end while s[i] == s[i - p].
        std::size_t run = 0;
        while (run + p < n && s[n - 1 - run] == s[n - 1 - run - p]) ++run;
        if (1 + run / p >= reps) return true;
    }
    return false;
}

bool detect_repeat(const TokenSeq& tokens, const FilterConfig& cfg) {
    return detect_repeat(tokens.ids, cfg.repeat_min_period, cfg.repeat_min_repeats);
}

double repeat_ratio(const RolloutBatch& batch, const FilterConfig& cfg) {
    std::size_t truncated = 0, repetitive = 0;
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) {
            if (!r.truncated) continue;
            ++truncated;
            if (detect_repeat(r.tokens, cfg)) ++repetitive;
        }
    }
    return truncated == 0 ? 0.0 : static_cast<double>(repetitive) / static_cast<double>(truncated);
}

bool group_is_informative(const RolloutGroup& group, const Participation& participates) {
    std::optional<double> first;
    std::size_t count = 0;
    bool varied = false;
    for (const auto& r : group.responses) {
        if (participates && !participates(r)) continue;
        ++count;
        if (!first) first = r.reward;
        else if (r.reward != *first) varied = true;
    }
    return count >= 2 && varied;
}

GroupFilterResult group_filter(const RolloutBatch& batch, GroupFilterMode mode, const Participation& participates,
                               const GroupResampler& resample, int refill_budget) {
    GroupFilterResult res;
    res.kept.policy_version = batch.policy_version;
    if (mode == GroupFilterMode::Off) {
        res.kept = batch;
        return res;
    }
    for (std::size_t g = 0; g < batch.groups.size(); ++g) {
        if (group_is_informative(batch.groups[g], participates)) {
            res.kept.groups.push_back(batch.groups[g]);
        } else {
            res.report.dropped_groups.push_back(g);
        }
    }
    if (mode == GroupFilterMode::Refill && !res.report.dropped_groups.empty()) {
        int spent = 0;
        while (res.kept.groups.size() < batch.groups.size() && spent < refill_budget && resample) {
            auto fresh = resample();
            if (!fresh) break;
            ++spent;
            if (group_is_informative(*fresh, participates)) {
                res.kept.groups.push_back(std::move(*fresh));
                ++res.report.refilled_groups;
            }
        }
        if (res.kept.groups.size() < batch.groups.size()) {
            res.report.diagnostics.push_back("refill budget exhausted after " + std::to_string(spent) +
                                             " resamples; continuing with " +
                                             std::to_string(res.kept.groups.size()) + " groups (drop)");
        }
    }
    if (res.kept.groups.empty()) {
        res.empty = true;
        res.report.diagnostics.push_back("every group has uniform rewards; iteration skipped");
    }
    return res;
}

GroupFilterMode parse_group_filter_mode(std::string_view name) {
    if (name == "off") return GroupFilterMode::Off;
    if (name == "drop") return GroupFilterMode::Drop;
    if (name == "refill") return GroupFilterMode::Refill;
    throw ValidationError("unknown filter.group_mode \"" + std::string(name) + "\"");
}

std::string_view to_string(GroupFilterMode m) {
    switch (m) {
    case GroupFilterMode::Off: return "off";
    case GroupFilterMode::Drop: return "drop";
    case GroupFilterMode::Refill: return "refill";
    }
    return "off";
}

} // namespace cfpo
