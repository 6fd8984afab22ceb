// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <istream>

#include <json.hpp>

#include "cfpo/errors.hpp"

namespace cfpo {

namespace {

TokenId require_glyph(const std::string& glyphs, char g) {
    auto pos = glyphs.find(g);
    if (pos == std::string::npos) {
        throw ValidationError(std::string("vocabulary is missing required glyph '") + g + "'");
    }
    return static_cast<TokenId>(pos);
}

} // namespace

Vocab::Vocab() : Vocab(std::string(kDefaultGlyphs)) {}

Vocab::Vocab(std::string glyphs) : glyphs_(std::move(glyphs)) {
    std::string sorted = glyphs_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError("vocabulary glyphs must be unique: \"" + glyphs_ + "\"");
    }
    for (int d = 0; d < 10; ++d) {
        digits_[d] = require_glyph(glyphs_, static_cast<char>('0' + d));
    }
    plus_ = require_glyph(glyphs_, '+');
    minus_ = require_glyph(glyphs_, '-');
    times_ = require_glyph(glyphs_, '*');
    equals_ = require_glyph(glyphs_, '=');
    eos_ = require_glyph(glyphs_, '$');
    pad_ = require_glyph(glyphs_, '_');
}

char Vocab::glyph(TokenId id) const {
    return contains(id) ? glyphs_[static_cast<std::size_t>(id)] : '?';
}

std::optional<TokenId> Vocab::find(char g) const {
    auto pos = glyphs_.find(g);
    if (pos == std::string::npos) return std::nullopt;
    return static_cast<TokenId>(pos);
}

std::optional<int> Vocab::digit_value(TokenId id) const {
    for (int d = 0; d < 10; ++d) {
        if (digits_[d] == id) return d;
    }
    return std::nullopt;
}

std::string Vocab::render(std::span<const TokenId> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) out.push_back(glyph(id));
    return out;
}

const Response& RolloutBatch::trajectory(std::size_t flat) const {
    const std::size_t k = group_size();
    return groups.at(flat / k).responses.at(flat % k);
}

Response& RolloutBatch::trajectory(std::size_t flat) {
    const std::size_t k = group_size();
    return groups.at(flat / k).responses.at(flat % k);
}

LossMask LossMask::ones(const RolloutBatch& batch) {
    LossMask mask;
    mask.weights.reserve(batch.num_trajectories());
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) {
            mask.weights.emplace_back(r.tokens.length(), std::uint8_t{1});
        }
    }
    return mask;
}

bool LossMask::fully_masked(std::size_t trajectory) const {
    return unmasked_tokens(trajectory) == 0;
}

std::size_t LossMask::unmasked_tokens(std::size_t trajectory) const {
    const auto& w = weights.at(trajectory);
    return static_cast<std::size_t>(std::count(w.begin(), w.end(), std::uint8_t{1}));
}

bool LossMask::congruent_with(const RolloutBatch& batch) const {
    if (weights.size() != batch.num_trajectories()) return false;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].size() != batch.trajectory(i).tokens.length()) return false;
        for (auto v : weights[i]) {
            if (v > 1) return false;
        }
    }
    return true;
}

void validate_token_seq(const TokenSeq& seq, const Vocab& vocab) {
    for (std::size_t t = 0; t < seq.ids.size(); ++t) {
        const TokenId id = seq.ids[t];
        if (!vocab.contains(id)) {
            throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                  std::to_string(vocab.size()));
        }
        if (id == vocab.eos() && t + 1 != seq.ids.size()) {
            throw ValidationError("EOS may only appear as the final token");
        }
    }
}

void validate_response(const Response& r, const Vocab& vocab) {
    validate_token_seq(r.tokens, vocab);
    if (r.tokens.empty()) throw ValidationError("responses must contain at least one token");
    if (r.behavior_logprobs.size() != r.tokens.length()) {
        throw ValidationError("behavior_logprobs length does not match token count");
    }
    for (double lp : r.behavior_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) throw ValidationError("behavior logprobs must be finite and <= 0");
    }
    if (!std::isfinite(r.reward)) throw ValidationError("reward must be finite");
    if (r.truncated && r.tokens.ends_with(vocab.eos())) {
        throw ValidationError("a truncated response cannot contain EOS");
    }
}

void validate_batch(const RolloutBatch& batch, const Vocab& vocab, std::size_t expected_group_size) {
    if (batch.groups.empty()) throw ValidationError("rollout batch has no groups");
    const std::size_t k = expected_group_size == 0 ? batch.group_size() : expected_group_size;
    if (k < 2) throw ValidationError("group size must be at least 2");
    for (const auto& g : batch.groups) {
        validate_token_seq(g.prompt, vocab);
        if (g.responses.size() != k) {
            throw ValidationError("ragged group: expected " + std::to_string(k) + " responses, got " +
                                  std::to_string(g.responses.size()));
        }
        for (const auto& r : g.responses) validate_response(r, vocab);
    }
}

std::vector<double> flatten_rewards(const RolloutBatch& batch) {
    std::vector<double> out;
    out.reserve(batch.num_trajectories());
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) out.push_back(r.reward);
    }
    return out;
}

std::vector<std::vector<double>> regroup_rewards(std::span<const double> flat, std::size_t group_size) {
    if (group_size == 0 || flat.size() % group_size != 0) {
        throw ValidationError("reward count is not a multiple of the group size");
    }
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < flat.size(); i += group_size) {
        out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i),
                         flat.begin() + static_cast<std::ptrdiff_t>(i + group_size));
    }
    return out;
}

std::vector<std::size_t> token_counts(const RolloutBatch& batch) {
    std::vector<std::size_t> out;
    out.reserve(batch.num_trajectories());
    for (const auto& g : batch.groups) {
        for (const auto& r : g.responses) out.push_back(r.tokens.length());
    }
    return out;
}

std::vector<std::string> rollout_to_json_lines(const RolloutBatch& batch) {
    std::vector<std::string> lines;
    lines.reserve(batch.groups.size());
    for (const auto& g : batch.groups) {
        nlohmann::json responses = nlohmann::json::array();
        for (const auto& r : g.responses) {
            responses.push_back({{"tokens", r.tokens.ids},
                                 {"logprobs", r.behavior_logprobs},
                                 {"reward", r.reward},
                                 {"truncated", r.truncated}});
        }
        nlohmann::json j;
        j["prompt"] = g.prompt.ids;
        j["responses"] = std::move(responses);
        j["policy_version"] = batch.policy_version;
        lines.push_back(j.dump());
    }
    return lines;
}

namespace {

std::pair<RolloutGroup, std::int64_t> parse_group_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed rollout log line: ") + e.what());
    }
    try {
        RolloutGroup g;
        g.prompt.ids = j.at("prompt").get<std::vector<TokenId>>();
        for (const auto& rj : j.at("responses")) {
            Response r;
            r.tokens.ids = rj.at("tokens").get<std::vector<TokenId>>();
            r.behavior_logprobs = rj.at("logprobs").get<std::vector<double>>();
            r.reward = rj.at("reward").get<double>();
            r.truncated = rj.at("truncated").get<bool>();
            g.responses.push_back(std::move(r));
        }
        return {std::move(g), j.at("policy_version").get<std::int64_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("rollout log line has wrong schema: ") + e.what());
    }
}

} // namespace

std::vector<RolloutBatch> rollout_from_json_lines(std::span<const std::string> lines) {
    std::vector<RolloutBatch> batches;
    for (const auto& line : lines) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto [group, version] = parse_group_line(line);
        if (batches.empty() || batches.back().policy_version != version) {
            batches.emplace_back();
            batches.back().policy_version = version;
        }
        batches.back().groups.push_back(std::move(group));
    }
    return batches;
}

std::vector<RolloutBatch> read_rollout_log(std::istream& in) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    return rollout_from_json_lines(lines);
}

} // namespace cfpo
