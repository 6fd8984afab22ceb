// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "cfpo/errors.hpp"

namespace cfpo {

void ClipConfig::validate() const {
    if (!(eps_low > 0.0 && eps_low <= eps_high && eps_high < 1.0)) {
        throw ValidationError("clip bounds must satisfy 0 < eps_low <= eps_high < 1 (got " + std::to_string(eps_low) +
                              ", " + std::to_string(eps_high) + ")");
    }
}

void LossConfig::validate() const {
    clip.validate();
    if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) throw ValidationError("loss.kl_coef must be >= 0");
}

void ClipEventLog::record(const ClipEvent& e) {
    events_.push_back(e);
    auto& c = per_token_[e.token];
    if (e.dir == ClipDirection::Upper) {
        ++c.upper;
        ++upper_;
    } else {
        ++c.lower;
        ++lower_;
    }
}

void ClipEventLog::merge(const ClipEventLog& other) {
    for (const auto& e : other.events_) record(e);
}

double token_ratio(double new_logprob, double behavior_logprob) {
    return std::exp(std::clamp(new_logprob - behavior_logprob, -30.0, 30.0));
}

ClippedTerm clipped_term(double ratio, double advantage, const ClipConfig& clip) {
    const double lo = 1.0 - clip.eps_low;
    const double hi = 1.0 + clip.eps_high;
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, lo, hi) * advantage;
    ClippedTerm t;
    if (clipped < unclipped) {
        t.value = clipped;
        t.event = ratio > hi ? ClipDirection::Upper : ClipDirection::Lower;
        t.dvalue_dratio = 0.0;
    } else {
        t.value = unclipped;
        t.dvalue_dratio = advantage;
    }
    return t;
}

double kl_penalty(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ValidationError("KL operands have different support sizes");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw ValidationError("KL operands must be non-negative");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
        throw ValidationError("KL operands must be normalized");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) throw ValidationError("KL undefined: reference assigns zero mass where policy does not");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

std::vector<std::vector<double>> aggregation_weights(const LossMask& mask, Aggregation mode) {
    std::vector<std::vector<double>> w;
    w.reserve(mask.weights.size());
    std::size_t live_responses = 0;
    std::size_t live_tokens = 0;
    for (std::size_t i = 0; i < mask.weights.size(); ++i) {
        const std::size_t n = mask.unmasked_tokens(i);
        live_tokens += n;
        if (n > 0) ++live_responses;
    }
    for (std::size_t i = 0; i < mask.weights.size(); ++i) {
        const auto& m = mask.weights[i];
        std::vector<double> row(m.size(), 0.0);
        const std::size_t n = mask.unmasked_tokens(i);
        if (n > 0) {
            const double scale = mode == Aggregation::TokenLevel
                                     ? 1.0 / static_cast<double>(live_tokens)
                                     : 1.0 / (static_cast<double>(live_responses) * static_cast<double>(n));
            for (std::size_t t = 0; t < m.size(); ++t) {
                if (m[t]) row[t] = scale;
            }
        }
        w.push_back(std::move(row));
    }
    return w;
}

AggregateResult aggregate(const std::vector<std::vector<double>>& values, const LossMask& mask, Aggregation mode) {
    if (values.size() != mask.weights.size()) throw ValidationError("mask is not congruent with values");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].size() != mask.weights[i].size()) throw ValidationError("mask is not congruent with values");
    }
    AggregateResult out;
    const auto w = aggregation_weights(mask, mode);
    bool any = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t t = 0; t < values[i].size(); ++t) {
            if (mask.weights[i][t]) {
                any = true;
                out.value += w[i][t] * values[i][t];
            }
        }
    }
    if (!any) {
        out.value = 0.0;
        out.all_masked = true;
        out.diagnostic = "every token is masked; aggregate is 0";
    }
    return out;
}

SurrogateResult surrogate_loss(std::span<const TrajectoryTerms> trajectories, const LossConfig& config) {
    config.validate();
    LossMask mask;
    mask.weights.reserve(trajectories.size());
    for (const auto& tr : trajectories) {
        const std::size_t n = tr.tokens.size();
        if (tr.behavior_logprobs.size() != n || tr.new_logprobs.size() != n || tr.advantages.size() != n ||
            tr.mask.size() != n) {
            throw ValidationError("trajectory terms are not aligned to its tokens");
        }
        if (config.kl_coef > 0.0 && tr.kl.size() != n) {
            throw ValidationError("kl_coef > 0 requires per-token KL values");
        }
        mask.weights.emplace_back(tr.mask.begin(), tr.mask.end());
    }
    const auto w = aggregation_weights(mask, config.aggregation);

    SurrogateResult res;
    auto& d = res.diagnostics;
    res.dloss_dlogprob.resize(trajectories.size());
    res.dloss_dkl.resize(trajectories.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& tr = trajectories[i];
        const std::size_t n = tr.tokens.size();
        res.dloss_dlogprob[i].assign(n, 0.0);
        res.dloss_dkl[i].assign(n, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            if (!tr.mask[t]) continue;
            ++d.active_tokens;
            const double ratio = token_ratio(tr.new_logprobs[t], tr.behavior_logprobs[t]);
            const ClippedTerm term = clipped_term(ratio, tr.advantages[t], config.clip);
            d.policy_term += w[i][t] * term.value;
            // d ratio / d logprob = ratio
            res.dloss_dlogprob[i][t] = -w[i][t] * term.dvalue_dratio * ratio;
            if (term.event) {
                res.events.record({tr.tokens[t], *term.event, ratio, i, t});
            }
            if (config.kl_coef > 0.0) {
                d.kl_term += w[i][t] * tr.kl[t];
                res.dloss_dkl[i][t] = config.kl_coef * w[i][t];
            }
        }
    }
    d.upper_events = res.events.upper();
    d.lower_events = res.events.lower();
    if (d.active_tokens == 0) {
        d.all_masked = true;
        d.message = "every token is masked; loss is 0";
    } else {
        d.clip_frac_high = static_cast<double>(d.upper_events) / static_cast<double>(d.active_tokens);
        d.clip_frac_low = static_cast<double>(d.lower_events) / static_cast<double>(d.active_tokens);
    }
    res.loss = -d.policy_term + config.kl_coef * d.kl_term;
    return res;
}

SurrogateResult surrogate_loss(const RolloutBatch& batch, const std::vector<std::vector<double>>& advantages,
                               const std::vector<std::vector<double>>& new_logprobs, const LossMask& mask,
                               const LossConfig& config, const std::vector<std::vector<double>>& kl) {
    const std::size_t total = batch.num_trajectories();
    if (advantages.size() != total || new_logprobs.size() != total || !mask.congruent_with(batch) ||
        (!kl.empty() && kl.size() != total)) {
        throw ValidationError("surrogate inputs are not aligned to the batch");
    }
    std::vector<TrajectoryTerms> terms;
    terms.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        const Response& r = batch.trajectory(i);
        TrajectoryTerms t;
        t.tokens = r.tokens.ids;
        t.behavior_logprobs = r.behavior_logprobs;
        t.new_logprobs = new_logprobs[i];
        t.advantages = advantages[i];
        t.mask = mask.weights[i];
        if (!kl.empty()) t.kl = kl[i];
        terms.push_back(t);
    }
    return surrogate_loss(terms, config);
}

Aggregation parse_aggregation(std::string_view name) {
    if (name == "token") return Aggregation::TokenLevel;
    if (name == "seq") return Aggregation::SequenceLevel;
    throw ValidationError("unknown loss.agg \"" + std::string(name) + "\"");
}

std::string_view to_string(Aggregation a) { return a == Aggregation::TokenLevel ? "token" : "seq"; }

std::string_view to_string(ClipDirection d) { return d == ClipDirection::Upper ? "upper" : "lower"; }

} // namespace cfpo
