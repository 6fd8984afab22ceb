// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its flat key/value text form.
//
// Grammar, one assignment per line:
//
//     # comment
//     key = value        (dotted keys, e.g. adv.norm = group)
//
// Blank lines and '#' comments are ignored; whitespace around keys and values
// is trimmed. A `preset = <name>` line is expanded before any other key in
// the same document, so explicit keys always win over the preset.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfpo/advantage.hpp"
#include "cfpo/filters.hpp"
#include "cfpo/optimizer.hpp"
#include "cfpo/policy.hpp"
#include "cfpo/surrogate.hpp"

namespace cfpo {

struct TrainConfig {
    std::string name = "run";
    std::string preset = "none";
    std::uint64_t seed = 42;
    std::string data_path;

    int rollout_batch_size = 64;  // N prompts per iteration
    int group_size = 8;           // K responses per prompt
    int minibatches = 4;          // M sequential updates per rollout batch
    int ppo_epochs = 1;
    int max_steps = 300;
    int save_steps = 20;          // 0 disables periodic checkpoints
    int eval_steps = 1;           // 0 disables held-out evaluation
    int eval_n = 256;
    int threads = 0;              // rollout workers, 0 = hardware concurrency
    bool log_rollouts = false;
    bool log_clip_events = true;

    SamplerConfig sampler{0.99, 0, 0.99, 0};  // max_new_tokens 0 = per tier
    OptimizerConfig optim;
    NormStrategy norm{NormVariant::GroupMeanStd, 1e-6};
    RewardScale reward_scale;
    LossConfig loss;
    FilterConfig filter;

    int context = 8;
    int hash_buckets = 16384;
    double table_scale = 8.0;
    double init_scale = 0.0;
    int warm_start_steps = 0;
    double warm_start_lr = 0.5;
    bool lenient = false;
    std::string vocab_glyphs{Vocab::kDefaultGlyphs};

    /// Throws ValidationError on any broken invariant (N*K divisible by M, ...).
    void validate() const;
};

/// Names accepted by `preset`: vanilla, grpo, dapo-lite, litepo.
const std::vector<std::string>& preset_names();
/// key/value pairs a preset expands to.
const std::map<std::string, std::string>& preset_values(std::string_view name);

struct ConfigKeyInfo {
    std::string key;
    std::string description;
};
/// Every canonical key, in documentation order.
const std::vector<ConfigKeyInfo>& config_keys();
/// Canonical key for a canonical key or an accepted alias (e.g.
/// `rollout_batch_size` -> `rollout.batch_size`); nullopt if unknown.
std::optional<std::string> canonical_key(std::string_view key);

/// Accumulates assignments in application order and resolves them.
class ConfigBuilder {
public:
    void apply_preset(std::string_view name);
    void set(std::string_view key, std::string_view value);
    void set_assignment(std::string_view assignment);  // "key=value"
    void load_text(std::string_view text, std::string_view origin = "<config>");
    void load_file(const std::string& path);

    TrainConfig build() const;

private:
    std::vector<std::pair<std::string, std::string>> assignments_;
};

/// Canonical, sorted key = value dump of an effective config. Parsing the
/// dump reproduces the same config.
std::string dump_config(const TrainConfig& cfg);
std::string get_config_value(const TrainConfig& cfg, std::string_view key);

std::string format_double(double v);

} // namespace cfpo
