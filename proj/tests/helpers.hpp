// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cfpo/rollout.hpp"

namespace testing {

/// Batch with the given per-group rewards; response i of every group has
/// `lengths[i % lengths.size()]` tokens (digit 1 repeated, EOS-terminated).
inline cfpo::RolloutBatch make_batch(const std::vector<std::vector<double>>& rewards,
                                     std::vector<std::size_t> lengths = {2}) {
    cfpo::Vocab v;
    cfpo::RolloutBatch b;
    std::size_t idx = 0;
    for (const auto& g : rewards) {
        cfpo::RolloutGroup grp;
        grp.prompt.ids = {v.digit(3), v.plus(), v.digit(4), v.equals()};
        for (double r : g) {
            const std::size_t len = lengths[idx++ % lengths.size()];
            cfpo::Response resp;
            resp.tokens.ids.assign(len - 1, v.digit(1));
            resp.tokens.ids.push_back(v.eos());
            resp.behavior_logprobs.assign(len, -0.5);
            resp.reward = r;
            grp.responses.push_back(resp);
        }
        b.groups.push_back(grp);
    }
    return b;
}

/// Random valid batch with arbitrary logprobs, lengths and truncation.
inline cfpo::RolloutBatch random_batch(std::mt19937_64& rng, std::size_t groups, std::size_t k,
                                       std::size_t max_len = 6) {
    cfpo::Vocab v;
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::uniform_int_distribution<int> tok(0, 12);  // digits and operators, never EOS/PAD
    std::uniform_real_distribution<double> lp(-5.0, 0.0);
    std::bernoulli_distribution coin(0.5);
    cfpo::RolloutBatch b;
    b.policy_version = static_cast<std::int64_t>(rng() % 1000);
    for (std::size_t g = 0; g < groups; ++g) {
        cfpo::RolloutGroup grp;
        grp.prompt.ids = {v.digit(static_cast<int>(rng() % 10)), v.times(), v.digit(2), v.equals()};
        for (std::size_t i = 0; i < k; ++i) {
            cfpo::Response r;
            const std::size_t n = len(rng);
            for (std::size_t t = 0; t < n; ++t) r.tokens.ids.push_back(tok(rng));
            r.truncated = coin(rng);
            if (!r.truncated) r.tokens.ids.back() = v.eos();
            for (std::size_t t = 0; t < n; ++t) r.behavior_logprobs.push_back(lp(rng));
            r.reward = coin(rng) ? 1.0 : 0.0;
            grp.responses.push_back(r);
        }
        b.groups.push_back(grp);
    }
    return b;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cfpo_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
