// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive linear-softmax policy over the toy vocabulary.
//
// logits(ctx) = W^T onehot(window) + s * T[hash(window)] + b
//
// where `window` holds the last C token ids (left-padded with PAD), W is the
// (C*V) x V position-aware unigram map, and T is an H x V table indexed by a
// hash of the whole window (H = 0 disables it) and s is the table feature
// value. Under Adam, s sets how fast the per-window table moves relative to
// the shared map W. The distribution is
// softmax(logits / tau); every gradient below is taken with respect to that
// tempered distribution.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfpo/rng.hpp"
#include "cfpo/rollout.hpp"

namespace cfpo {

struct PolicyShape {
    int vocab = 16;
    int context = 8;
    int hash_buckets = 16384;
    double table_scale = 8.0;

    std::size_t unary_size() const { return static_cast<std::size_t>(context) * vocab * vocab; }
    std::size_t table_size() const { return static_cast<std::size_t>(hash_buckets) * vocab; }
    std::size_t num_params() const { return unary_size() + table_size() + static_cast<std::size_t>(vocab); }
    void validate() const;
    bool operator==(const PolicyShape&) const = default;
};

/// Flat parameter vector laid out as [W | T | b].
struct PolicyParams {
    PolicyShape shape;
    std::vector<double> theta;
    std::int64_t version = 0;

    static PolicyParams zeros(const PolicyShape& shape);
    /// Gaussian init with standard deviation `scale` (0 gives zeros).
    static PolicyParams random(const PolicyShape& shape, double scale, std::uint64_t seed);

    std::span<double> unary() { return {theta.data(), shape.unary_size()}; }
    std::span<double> table() { return {theta.data() + shape.unary_size(), shape.table_size()}; }
    std::span<double> bias() { return {theta.data() + shape.unary_size() + shape.table_size(), static_cast<std::size_t>(shape.vocab)}; }
    std::span<const double> unary() const { return {theta.data(), shape.unary_size()}; }
    std::span<const double> table() const { return {theta.data() + shape.unary_size(), shape.table_size()}; }
    std::span<const double> bias() const { return {theta.data() + shape.unary_size() + shape.table_size(), static_cast<std::size_t>(shape.vocab)}; }

    /// FNV-1a over the raw parameter bytes and the version.
    std::uint64_t fingerprint() const;
};

/// A frozen copy of the initial parameters (pi_ref).
class ReferenceSnapshot {
public:
    explicit ReferenceSnapshot(PolicyParams params) : params_(std::move(params)) {}
    const PolicyParams& params() const { return params_; }

private:
    PolicyParams params_;
};

struct SamplerConfig {
    double temperature = 0.99;
    int top_k = 0;  // 0 means V
    double top_p = 0.99;
    int max_new_tokens = 4;

    void validate(int vocab) const;
};

/// Rows of the parameter vector touched by one context window.
struct Features {
    std::vector<std::size_t> unary_rows;  // C entries, row = position * V + token
    std::ptrdiff_t table_row = -1;
};

/// Last C ids of `history`, left-padded with `pad`.
std::vector<TokenId> context_window(std::span<const TokenId> history, int context, TokenId pad);
Features featurize(const PolicyShape& shape, std::span<const TokenId> window);

std::vector<double> logits(const PolicyParams& params, std::span<const TokenId> window);
std::vector<double> logits(const PolicyParams& params, const Features& f);
std::vector<double> log_softmax(std::span<const double> logits, double temperature);
std::vector<double> softmax(std::span<const double> logits, double temperature);
double categorical_entropy(std::span<const double> probs);

/// Mean entropy of the tempered policy over the given windows.
double entropy(const PolicyParams& params, std::span<const std::vector<TokenId>> windows, double temperature);

/// Samples until EOS or max_new_tokens. behavior_logprobs come from the full
/// tempered softmax, not the top-k/top-p renormalized one. Reward is left 0.
Response sample_response(const PolicyParams& params, const TokenSeq& prompt, const SamplerConfig& sampler,
                         const Vocab& vocab, Rng& rng);
/// Greedy decoding (top_k = 1).
Response greedy_response(const PolicyParams& params, const TokenSeq& prompt, int max_new_tokens, const Vocab& vocab);

/// d ln pi(token | ctx) / d logits = (onehot(token) - p) / tau.
std::vector<double> logit_grad_logprob(std::span<const double> logits, TokenId token, double temperature);
/// Dense gradient of ln pi(token | window) with respect to theta.
std::vector<double> grad_logprob(const PolicyParams& params, std::span<const TokenId> window, TokenId token,
                                 double temperature);
/// grad += scale * J^T g, where J = d logits / d theta at features f.
void accumulate_logit_grad(const PolicyShape& shape, const Features& f, std::span<const double> logit_grad,
                           double scale, std::span<double> grad);

/// d KL(pi_theta || pi_ref) / d logits_theta for tempered pi_theta.
std::vector<double> logit_grad_kl(std::span<const double> probs, std::span<const double> ref_probs,
                                  double temperature);

/// One target continuation for maximum-likelihood warm start.
struct Demonstration {
    TokenSeq prompt;
    TokenSeq target;
};

struct WarmStartConfig {
    int steps = 0;
    double learning_rate = 0.5;
    double temperature = 0.99;
};

/// Full-batch gradient ascent on mean log-likelihood of the demonstrations.
/// Lowers entropy before RL; returns the final mean negative log-likelihood.
double warm_start(PolicyParams& params, std::span<const Demonstration> demos, const WarmStartConfig& cfg,
                  const Vocab& vocab);

/// Counters from which every random stream of a run is derived.
struct RngState {
    std::uint64_t seed = 0;
    std::int64_t iteration = 0;
    std::int64_t epoch = 0;
    std::int64_t cursor = 0;
};

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params, const RngState& rng);
PolicyParams load_checkpoint(const std::filesystem::path& path, RngState* rng = nullptr);

} // namespace cfpo
