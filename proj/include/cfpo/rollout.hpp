// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Data model shared by every stage of an iteration: vocabulary, token
// sequences, grouped responses, rollout batches and per-token loss masks.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfpo {

using TokenId = std::int32_t;

/// Closed toy vocabulary described by one glyph per token id.
///
/// The layout must contain the ten digits, the operators `+ - *`, the `=`
/// terminator of a prompt, an EOS glyph `$` and a PAD glyph `_`. Any other
/// glyphs are filler tokens the policy may emit but the task never uses.
class Vocab {
public:
    static constexpr std::string_view kDefaultGlyphs = "0123456789+-*=$_";

    Vocab();
    explicit Vocab(std::string glyphs);

    int size() const { return static_cast<int>(glyphs_.size()); }
    const std::string& glyphs() const { return glyphs_; }
    char glyph(TokenId id) const;
    std::optional<TokenId> find(char glyph) const;

    TokenId digit(int d) const { return digits_[static_cast<std::size_t>(d)]; }
    std::optional<int> digit_value(TokenId id) const;
    TokenId plus() const { return plus_; }
    TokenId minus() const { return minus_; }
    TokenId times() const { return times_; }
    TokenId equals() const { return equals_; }
    TokenId eos() const { return eos_; }
    TokenId pad() const { return pad_; }

    bool contains(TokenId id) const { return id >= 0 && id < size(); }
    std::string render(std::span<const TokenId> ids) const;

private:
    std::string glyphs_;
    TokenId digits_[10]{};
    TokenId plus_ = 0, minus_ = 0, times_ = 0, equals_ = 0, eos_ = 0, pad_ = 0;
};

struct TokenSeq {
    std::vector<TokenId> ids;

    std::size_t length() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool ends_with(TokenId id) const { return !ids.empty() && ids.back() == id; }
    bool operator==(const TokenSeq&) const = default;
};

struct Response {
    TokenSeq tokens;
    std::vector<double> behavior_logprobs;  // natural log, one per token
    double reward = 0.0;
    bool truncated = false;  // hit max_new_tokens without emitting EOS

    bool operator==(const Response&) const = default;
};

struct RolloutGroup {
    TokenSeq prompt;
    std::vector<Response> responses;

    bool operator==(const RolloutGroup&) const = default;
};

struct RolloutBatch {
    std::vector<RolloutGroup> groups;
    std::int64_t policy_version = 0;

    std::size_t group_size() const { return groups.empty() ? 0 : groups.front().responses.size(); }
    std::size_t num_trajectories() const { return groups.size() * group_size(); }

    // Trajectory i lives at groups[i / K].responses[i % K].
    const Response& trajectory(std::size_t flat) const;
    Response& trajectory(std::size_t flat);

    bool operator==(const RolloutBatch&) const = default;
};

/// Per-token binary weights, indexed [trajectory][token] in group-major order.
struct LossMask {
    std::vector<std::vector<std::uint8_t>> weights;

    static LossMask ones(const RolloutBatch& batch);

    bool fully_masked(std::size_t trajectory) const;
    std::size_t unmasked_tokens(std::size_t trajectory) const;
    bool congruent_with(const RolloutBatch& batch) const;
};

/// Throws ValidationError when any TokenSeq/Response/Group/Batch invariant
/// is broken. `expected_group_size` of 0 accepts the batch's own K.
void validate_token_seq(const TokenSeq& seq, const Vocab& vocab);
void validate_response(const Response& r, const Vocab& vocab);
void validate_batch(const RolloutBatch& batch, const Vocab& vocab, std::size_t expected_group_size = 0);

/// Rewards in group-major, response-minor order.
std::vector<double> flatten_rewards(const RolloutBatch& batch);
/// Inverse of flatten_rewards for a fixed group size.
std::vector<std::vector<double>> regroup_rewards(std::span<const double> flat, std::size_t group_size);
/// |o_i| for every trajectory, group-major.
std::vector<std::size_t> token_counts(const RolloutBatch& batch);

/// Rollout log: one JSON object per group,
/// {"prompt": [...], "responses": [{"tokens", "logprobs", "reward", "truncated"}], "policy_version": n}.
/// A batch is the run of consecutive lines sharing a policy_version.
std::vector<std::string> rollout_to_json_lines(const RolloutBatch& batch);
std::vector<RolloutBatch> rollout_from_json_lines(std::span<const std::string> lines);
std::vector<RolloutBatch> read_rollout_log(std::istream& in);

} // namespace cfpo
