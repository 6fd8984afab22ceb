// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Clipped policy-gradient surrogate with decoupled clip bounds, exact
// categorical KL penalty and token- or sequence-level aggregation.
//
// Sign convention: everything here returns a loss to MINIMIZE, i.e. the
// negated surrogate objective.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfpo/rollout.hpp"

namespace cfpo {

struct ClipConfig {
    double eps_low = 0.2;
    double eps_high = 0.2;

    void validate() const;  // 0 < eps_low <= eps_high < 1
};

enum class Aggregation { TokenLevel, SequenceLevel };

struct LossConfig {
    ClipConfig clip;
    Aggregation aggregation = Aggregation::TokenLevel;
    double kl_coef = 0.0;

    void validate() const;
};

enum class ClipDirection : std::uint8_t { Upper, Lower };

struct ClipEvent {
    TokenId token = 0;
    ClipDirection dir = ClipDirection::Upper;
    double ratio = 1.0;
    std::size_t trajectory = 0;
    std::size_t position = 0;
};

struct ClipCounts {
    std::size_t upper = 0;
    std::size_t lower = 0;
    std::size_t total() const { return upper + lower; }
};

class ClipEventLog {
public:
    void record(const ClipEvent& e);
    void merge(const ClipEventLog& other);

    const std::vector<ClipEvent>& events() const { return events_; }
    const std::map<TokenId, ClipCounts>& per_token() const { return per_token_; }
    std::size_t upper() const { return upper_; }
    std::size_t lower() const { return lower_; }

private:
    std::vector<ClipEvent> events_;
    std::map<TokenId, ClipCounts> per_token_;
    std::size_t upper_ = 0;
    std::size_t lower_ = 0;
};

/// exp(new - old) with the log-difference clamped to [-30, 30].
double token_ratio(double new_logprob, double behavior_logprob);

struct ClippedTerm {
    double value = 0.0;
    std::optional<ClipDirection> event;
    double dvalue_dratio = 0.0;  // advantage on the unclipped branch, exactly 0 when clipped
};

ClippedTerm clipped_term(double ratio, double advantage, const ClipConfig& clip);

/// Exact categorical KL(p || q). Both must be normalized within 1e-9.
double kl_penalty(std::span<const double> p, std::span<const double> q);

struct AggregateResult {
    double value = 0.0;
    bool all_masked = false;
    std::string diagnostic;
};

/// Per-token weights w such that aggregate == sum(w * values).
std::vector<std::vector<double>> aggregation_weights(const LossMask& mask, Aggregation mode);
AggregateResult aggregate(const std::vector<std::vector<double>>& values, const LossMask& mask, Aggregation mode);

/// Everything the surrogate needs about one trajectory.
struct TrajectoryTerms {
    std::span<const TokenId> tokens;
    std::span<const double> behavior_logprobs;
    std::span<const double> new_logprobs;
    std::span<const double> advantages;
    std::span<const std::uint8_t> mask;
    std::span<const double> kl;  // per-token KL(pi || pi_ref); may be empty when kl_coef == 0
};

struct SurrogateDiagnostics {
    std::size_t active_tokens = 0;
    std::size_t upper_events = 0;
    std::size_t lower_events = 0;
    double clip_frac_high = 0.0;
    double clip_frac_low = 0.0;
    double policy_term = 0.0;  // aggregated clipped objective (before negation)
    double kl_term = 0.0;      // aggregated KL (before beta)
    bool all_masked = false;
    std::string message;
};

struct SurrogateResult {
    double loss = 0.0;
    ClipEventLog events;
    SurrogateDiagnostics diagnostics;
    // Partial derivatives of loss, aligned to TrajectoryTerms tokens.
    std::vector<std::vector<double>> dloss_dlogprob;
    std::vector<std::vector<double>> dloss_dkl;
};

SurrogateResult surrogate_loss(std::span<const TrajectoryTerms> trajectories, const LossConfig& config);

/// Batch-shaped convenience wrapper; `kl` may be empty.
SurrogateResult surrogate_loss(const RolloutBatch& batch, const std::vector<std::vector<double>>& advantages,
                               const std::vector<std::vector<double>>& new_logprobs, const LossMask& mask,
                               const LossConfig& config, const std::vector<std::vector<double>>& kl = {});

Aggregation parse_aggregation(std::string_view name);
std::string_view to_string(Aggregation a);
std::string_view to_string(ClipDirection d);

} // namespace cfpo
