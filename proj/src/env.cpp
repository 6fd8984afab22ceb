// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/env.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "cfpo/errors.hpp"
#include "cfpo/rng.hpp"

namespace cfpo {

std::pair<int, int> tier_op_range(Tier tier) {
    switch (tier) {
    case Tier::Easy: return {1, 1};
    case Tier::Medium: return {2, 3};
    case Tier::Hard: return {4, 6};
    }
    return {1, 1};
}

Tier parse_tier(std::string_view name) {
    if (name == "easy") return Tier::Easy;
    if (name == "medium") return Tier::Medium;
    if (name == "hard") return Tier::Hard;
    throw ValidationError("unknown tier \"" + std::string(name) + "\" (expected easy, medium or hard)");
}

std::string_view to_string(Tier tier) {
    switch (tier) {
    case Tier::Easy: return "easy";
    case Tier::Medium: return "medium";
    case Tier::Hard: return "hard";
    }
    return "easy";
}

int apply_op(ArithOp op, int lhs, int rhs) {
    switch (op) {
    case ArithOp::Add: return (lhs + rhs) % 10;
    case ArithOp::Sub: return ((lhs - rhs) % 10 + 10) % 10;
    case ArithOp::Mul: return (lhs * rhs) % 10;
    }
    return 0;
}

int fold(int start, std::span<const std::pair<ArithOp, int>> ops) {
    int acc = start;
    for (const auto& [op, d] : ops) acc = apply_op(op, acc, d);
    return acc;
}

namespace {

TokenId op_token(ArithOp op, const Vocab& vocab) {
    switch (op) {
    case ArithOp::Add: return vocab.plus();
    case ArithOp::Sub: return vocab.minus();
    case ArithOp::Mul: return vocab.times();
    }
    return vocab.plus();
}

Tier tier_for_ops(std::size_t k) {
    if (k <= 1) return Tier::Easy;
    if (k <= 3) return Tier::Medium;
    return Tier::Hard;
}

} // namespace

TokenSeq encode_prompt(int start, std::span<const std::pair<ArithOp, int>> ops, const Vocab& vocab) {
    TokenSeq s;
    s.ids.push_back(vocab.digit(start));
    for (const auto& [op, d] : ops) {
        s.ids.push_back(op_token(op, vocab));
        s.ids.push_back(vocab.digit(d));
    }
    s.ids.push_back(vocab.equals());
    return s;
}

ArithmeticTask decode_prompt(const TokenSeq& prompt, const Vocab& vocab) {
    const auto& ids = prompt.ids;
    if (ids.size() < 4 || ids.size() % 2 != 0 || ids.back() != vocab.equals()) {
        throw ValidationError("malformed prompt \"" + vocab.render(ids) + "\"");
    }
    ArithmeticTask t;
    auto start = vocab.digit_value(ids[0]);
    if (!start) throw ValidationError("prompt must start with a digit");
    t.start = *start;
    for (std::size_t i = 1; i + 1 < ids.size(); i += 2) {
        ArithOp op;
        if (ids[i] == vocab.plus()) op = ArithOp::Add;
        else if (ids[i] == vocab.minus()) op = ArithOp::Sub;
        else if (ids[i] == vocab.times()) op = ArithOp::Mul;
        else throw ValidationError("expected an operator in prompt \"" + vocab.render(ids) + "\"");
        auto d = vocab.digit_value(ids[i + 1]);
        if (!d) throw ValidationError("expected a digit operand in prompt \"" + vocab.render(ids) + "\"");
        t.ops.emplace_back(op, *d);
    }
    t.answer = fold(t.start, t.ops);
    t.tier = tier_for_ops(t.ops.size());
    t.prompt = prompt;
    return t;
}

std::vector<ArithmeticTask> gen_dataset(Tier tier, std::size_t n, std::uint64_t seed, const Vocab& vocab) {
    if (n < 1) throw ValidationError("dataset size must be >= 1");
    const auto [lo, hi] = tier_op_range(tier);
    Rng rng(derive_seed(seed, {0x64617461ULL, static_cast<std::uint64_t>(tier)}));
    std::vector<ArithmeticTask> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ArithmeticTask t;
        t.tier = tier;
        t.start = static_cast<int>(rng.below(10));
        const int k = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
        for (int j = 0; j < k; ++j) {
            const auto op = static_cast<ArithOp>(rng.below(3));
            t.ops.emplace_back(op, static_cast<int>(rng.below(10)));
        }
        t.answer = fold(t.start, t.ops);
        t.prompt = encode_prompt(t.start, t.ops, vocab);
        out.push_back(std::move(t));
    }
    return out;
}

int verify(const ArithmeticTask& task, std::span<const TokenId> tokens, const Vocab& vocab, bool lenient) {
    if (tokens.empty() || tokens[0] != vocab.digit(task.answer)) return 0;
    if (lenient) return 1;
    return tokens.size() == 2 && tokens[1] == vocab.eos() ? 1 : 0;
}

TokenSeq canonical_answer(const ArithmeticTask& task, const Vocab& vocab) {
    return TokenSeq{{vocab.digit(task.answer), vocab.eos()}};
}

DifficultyHistogram difficulty_histogram(std::span<const ArithmeticTask> dataset, const PolicyParams& params,
                                         const SamplerConfig& sampler, int rollouts, std::uint64_t seed,
                                         const Vocab& vocab, bool lenient) {
    if (rollouts < 1) throw ValidationError("difficulty histogram needs K >= 1");
    DifficultyHistogram h;
    h.bins.assign(static_cast<std::size_t>(rollouts) + 1, 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Rng rng(derive_seed(seed, {0x68697374ULL, i}));
        int correct = 0;
        for (int k = 0; k < rollouts; ++k) {
            const Response r = sample_response(params, dataset[i].prompt, sampler, vocab, rng);
            correct += verify(dataset[i], r.tokens.ids, vocab, lenient);
        }
        h.correct_per_task.push_back(correct);
        ++h.bins[static_cast<std::size_t>(correct)];
    }
    return h;
}

void write_dataset(const std::filesystem::path& path, std::span<const ArithmeticTask> tasks, const Vocab& vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dataset " + path.string());
    for (const auto& t : tasks) {
        nlohmann::json j;
        j["prompt_ids"] = t.prompt.ids;
        j["answer_id"] = vocab.digit(t.answer);
        j["k"] = t.ops.size();
        j["tier"] = to_string(t.tier);
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("failed writing dataset " + path.string());
}

std::vector<ArithmeticTask> read_dataset(const std::filesystem::path& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset " + path.string());
    std::vector<ArithmeticTask> tasks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        try {
            const auto j = nlohmann::json::parse(line);
            TokenSeq prompt{j.at("prompt_ids").get<std::vector<TokenId>>()};
            validate_token_seq(prompt, vocab);
            ArithmeticTask t = decode_prompt(prompt, vocab);
            t.tier = parse_tier(j.at("tier").get<std::string>());
            if (j.at("k").get<std::size_t>() != t.ops.size()) throw ValidationError("k does not match the prompt");
            const auto [lo, hi] = tier_op_range(t.tier);
            if (static_cast<int>(t.ops.size()) < lo || static_cast<int>(t.ops.size()) > hi) {
                throw ValidationError("op count outside the declared tier");
            }
            if (j.at("answer_id").get<TokenId>() != vocab.digit(t.answer)) {
                throw ValidationError("answer_id does not match the folded prompt");
            }
            tasks.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    if (tasks.empty()) throw ValidationError("dataset " + path.string() + " is empty");
    return tasks;
}

} // namespace cfpo
