// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Mod-10 arithmetic task: prompt "s op1 d1 ... opk dk =", the correct
// response is exactly [answer, EOS].
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "cfpo/policy.hpp"
#include "cfpo/rollout.hpp"

namespace cfpo {

enum class ArithOp { Add, Sub, Mul };
enum class Tier { Easy, Medium, Hard };

struct ArithmeticTask {
    int start = 0;
    std::vector<std::pair<ArithOp, int>> ops;
    int answer = 0;
    Tier tier = Tier::Easy;
    TokenSeq prompt;

    bool operator==(const ArithmeticTask&) const = default;
};

/// Inclusive op-count range for a tier: Easy [1,1], Medium [2,3], Hard [4,6].
std::pair<int, int> tier_op_range(Tier tier);
Tier parse_tier(std::string_view name);
std::string_view to_string(Tier tier);

int apply_op(ArithOp op, int lhs, int rhs);
int fold(int start, std::span<const std::pair<ArithOp, int>> ops);
TokenSeq encode_prompt(int start, std::span<const std::pair<ArithOp, int>> ops, const Vocab& vocab);
/// Inverse of encode_prompt; throws ValidationError on malformed prompts.
ArithmeticTask decode_prompt(const TokenSeq& prompt, const Vocab& vocab);

std::vector<ArithmeticTask> gen_dataset(Tier tier, std::size_t n, std::uint64_t seed, const Vocab& vocab);

/// 1 iff tokens == [answer, EOS]. In lenient mode a response whose first
/// token is the answer scores 1 regardless of what follows.
int verify(const ArithmeticTask& task, std::span<const TokenId> tokens, const Vocab& vocab, bool lenient = false);

/// Canonical continuation [answer, EOS].
TokenSeq canonical_answer(const ArithmeticTask& task, const Vocab& vocab);

struct DifficultyHistogram {
    std::vector<int> correct_per_task;  // in [0, K]
    std::vector<std::size_t> bins;      // bins[c] = #tasks with c correct, size K + 1
};

DifficultyHistogram difficulty_histogram(std::span<const ArithmeticTask> dataset, const PolicyParams& params,
                                         const SamplerConfig& sampler, int rollouts, std::uint64_t seed,
                                         const Vocab& vocab, bool lenient = false);

/// JSON Lines: {"prompt_ids": [...], "answer_id": int, "k": int, "tier": str}.
void write_dataset(const std::filesystem::path& path, std::span<const ArithmeticTask> tasks, const Vocab& vocab);
std::vector<ArithmeticTask> read_dataset(const std::filesystem::path& path, const Vocab& vocab);

} // namespace cfpo
