// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Iteration engine: rollout -> scale -> filter -> normalize -> M sequential
// minibatch surrogate updates -> metrics.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfpo/advantage.hpp"
#include "cfpo/config.hpp"
#include "cfpo/env.hpp"
#include "cfpo/filters.hpp"
#include "cfpo/optimizer.hpp"
#include "cfpo/policy.hpp"
#include "cfpo/surrogate.hpp"

namespace cfpo {

struct MetricsRecord {
    std::int64_t iter = 0;
    double train_acc = 0.0;
    double mean_len = 0.0;
    double entropy = 0.0;
    double clip_frac_high = 0.0;
    double clip_frac_low = 0.0;
    double grad_norm = 0.0;
    double repeat_ratio = 0.0;
    double degenerate_group_frac = 0.0;
    double reward_std_batch = 0.0;
    double loss = 0.0;

    bool operator==(const MetricsRecord&) const = default;
};

/// One JSON object with exactly the MetricsRecord fields.
std::string metrics_to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(std::string_view line);

struct EvalResult {
    double accuracy = 0.0;
    double mean_len = 0.0;
};

/// Side information about the last iteration that is not part of the
/// metrics stream.
struct IterationDiagnostics {
    bool skipped = false;
    std::vector<std::string> messages;
    RolloutBatch sampled;                 // raw rewards, before filtering
    std::size_t kept_groups = 0;
    std::size_t optimizer_steps = 0;
    double first_minibatch_max_ratio_dev = 0.0;  // max |ratio - 1| on the first minibatch
    ClipEventLog clip_events;
    std::vector<double> minibatch_grad_norms;
};

/// Features of every decision point of `response` given `prompt`.
std::vector<Features> response_features(const PolicyShape& shape, const TokenSeq& prompt, const TokenSeq& response,
                                        TokenId pad);

/// One trajectory of a minibatch, as seen by the loss.
struct LossSample {
    std::span<const Features> features;  // one per response token
    const Response* response = nullptr;
    std::span<const double> advantages;
    std::span<const std::uint8_t> mask;
};

struct PolicyLossResult {
    SurrogateResult surrogate;
    std::vector<double> grad;      // d loss / d theta; empty when every token is masked
    double max_ratio_dev = 0.0;    // max |ratio - 1| over the samples
};

/// Surrogate loss of `samples` under `params` and its exact gradient with
/// respect to theta. `reference` is only read when loss.kl_coef > 0.
PolicyLossResult policy_loss_and_grad(const PolicyParams& params, const PolicyParams* reference,
                                      std::span<const LossSample> samples, const LossConfig& loss,
                                      double temperature);

/// Max generation length used when sampler.max_new_tokens is 0.
int default_max_new_tokens(Tier tier);

class Trainer {
public:
    Trainer(TrainConfig config, std::vector<ArithmeticTask> dataset);

    MetricsRecord run_iteration();
    EvalResult evaluate(std::span<const ArithmeticTask> tasks) const;
    EvalResult evaluate_heldout() const { return evaluate(heldout_); }

    const TrainConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }
    const PolicyParams& params() const { return params_; }
    PolicyParams& mutable_params() { return params_; }
    const ReferenceSnapshot& reference() const { return reference_; }
    const SamplerConfig& sampler() const { return sampler_; }
    const std::vector<ArithmeticTask>& dataset() const { return dataset_; }
    const std::vector<ArithmeticTask>& heldout() const { return heldout_; }
    const IterationDiagnostics& last_diagnostics() const { return diag_; }
    std::int64_t iteration() const { return iteration_; }
    RngState rng_state() const;

private:
    std::vector<std::size_t> next_prompts(std::size_t n);
    RolloutGroup sample_group(const ArithmeticTask& task, Rng& rng) const;
    RolloutBatch rollout(std::span<const std::size_t> prompts, std::vector<double>& step_entropies) const;

    TrainConfig config_;
    Vocab vocab_;
    std::vector<ArithmeticTask> dataset_;
    std::vector<ArithmeticTask> heldout_;
    SamplerConfig sampler_;
    PolicyParams params_;
    ReferenceSnapshot reference_;
    OptimizerState optimizer_;
    std::vector<std::size_t> order_;
    std::int64_t epoch_ = 0;
    std::int64_t cursor_ = 0;
    std::int64_t iteration_ = 0;
    std::vector<std::size_t> batch_tasks_;  // dataset index per group of the current batch
    IterationDiagnostics diag_;
};

} // namespace cfpo
