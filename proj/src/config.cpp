// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cfpo/env.hpp"
#include "cfpo/errors.hpp"

namespace cfpo {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw ValidationError("invalid value \"" + std::string(text) + "\" for " + std::string(key));
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) throw ValidationError("non-finite value for " + std::string(key));
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ValidationError("invalid boolean \"" + std::string(text) + "\" for " + std::string(key));
}

struct KeyDef {
    std::string key;
    std::string description;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define CFPO_INT(KEY, FIELD, DESC)                                                                  \
    KeyDef{KEY, DESC, [](TrainConfig& c, const std::string& v) { c.FIELD = parse_number<int>(KEY, v); }, \
           [](const TrainConfig& c) { return std::to_string(c.FIELD); }}
#define CFPO_DBL(KEY, FIELD, DESC)                                                                      \
    KeyDef{KEY, DESC, [](TrainConfig& c, const std::string& v) { c.FIELD = parse_number<double>(KEY, v); }, \
           [](const TrainConfig& c) { return format_double(c.FIELD); }}
#define CFPO_BOOL(KEY, FIELD, DESC)                                                              \
    KeyDef{KEY, DESC, [](TrainConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); }, \
           [](const TrainConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}
#define CFPO_STR(KEY, FIELD, DESC)                                                 \
    KeyDef{KEY, DESC, [](TrainConfig& c, const std::string& v) { c.FIELD = v; }, \
           [](const TrainConfig& c) { return c.FIELD; }}

const std::vector<KeyDef>& key_defs() {
    static const std::vector<KeyDef> defs = {
        CFPO_STR("run.name", name, "run label used in reports"),
        CFPO_STR("run.preset", preset, "preset the config was expanded from (informational)"),
        KeyDef{"run.seed", "run seed; every random stream derives from it",
               [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); },
               [](const TrainConfig& c) { return std::to_string(c.seed); }},
        CFPO_INT("run.max_steps", max_steps, "training iterations"),
        CFPO_INT("run.save_steps", save_steps, "checkpoint period in iterations (0 = final only)"),
        CFPO_INT("run.eval_steps", eval_steps, "held-out greedy evaluation period (0 = never)"),
        CFPO_INT("run.eval_n", eval_n, "held-out tasks per evaluation"),
        CFPO_INT("run.threads", threads, "rollout worker threads (0 = hardware concurrency)"),
        CFPO_BOOL("run.log_rollouts", log_rollouts, "append every rollout batch to rollouts.jsonl"),
        CFPO_BOOL("run.log_clip_events", log_clip_events, "write per-token clip events to clip_events.jsonl"),
        CFPO_STR("data.path", data_path, "training dataset (JSON Lines from gen-data)"),
        CFPO_INT("rollout.batch_size", rollout_batch_size, "prompts per iteration (N)"),
        CFPO_INT("rollout.group_size", group_size, "responses per prompt (K)"),
        CFPO_INT("rollout.minibatches", minibatches, "sequential minibatch updates per iteration (M)"),
        CFPO_INT("rollout.ppo_epochs", ppo_epochs, "passes over the rollout batch"),
        CFPO_DBL("sampler.temperature", sampler.temperature, "sampling temperature"),
        CFPO_INT("sampler.top_k", sampler.top_k, "top-k truncation (0 = V)"),
        CFPO_DBL("sampler.top_p", sampler.top_p, "nucleus truncation"),
        CFPO_INT("sampler.max_new_tokens", sampler.max_new_tokens,
                 "generation cap (0 = per tier: easy 4, medium 6, hard 8)"),
        KeyDef{"optim.kind", "adam or sgd",
               [](TrainConfig& c, const std::string& v) { c.optim.kind = parse_optimizer_kind(v); },
               [](const TrainConfig& c) { return std::string(to_string(c.optim.kind)); }},
        CFPO_DBL("optim.lr", optim.learning_rate, "learning rate"),
        CFPO_DBL("optim.beta1", optim.beta1, "Adam first-moment decay"),
        CFPO_DBL("optim.beta2", optim.beta2, "Adam second-moment decay"),
        CFPO_DBL("optim.eps", optim.epsilon, "Adam denominator epsilon"),
        KeyDef{"adv.estimator", "advantage estimator (reinforce only)",
               [](TrainConfig&, const std::string& v) {
                   if (v != "reinforce") throw ValidationError("adv.estimator supports only \"reinforce\"");
               },
               [](const TrainConfig&) { return std::string("reinforce"); }},
        KeyDef{"adv.norm", "none, group, batch, group_mean_only, batch_mean_only, group_mean_batch_std",
               [](TrainConfig& c, const std::string& v) { c.norm.variant = parse_norm_variant(v); },
               [](const TrainConfig& c) { return std::string(to_string(c.norm.variant)); }},
        KeyDef{"adv.reward_scale", "zero_one or pm_one",
               [](TrainConfig& c, const std::string& v) { c.reward_scale.mode = parse_reward_scale(v); },
               [](const TrainConfig& c) { return std::string(to_string(c.reward_scale.mode)); }},
        CFPO_DBL("adv.eps", norm.epsilon_guard, "guard added to every std denominator"),
        CFPO_DBL("loss.eps_low", loss.clip.eps_low, "lower clip range"),
        CFPO_DBL("loss.eps_high", loss.clip.eps_high, "upper clip range"),
        KeyDef{"loss.agg", "token or seq",
               [](TrainConfig& c, const std::string& v) { c.loss.aggregation = parse_aggregation(v); },
               [](const TrainConfig& c) { return std::string(to_string(c.loss.aggregation)); }},
        CFPO_DBL("loss.kl_coef", loss.kl_coef, "KL penalty coefficient (beta)"),
        CFPO_BOOL("filter.overlong", filter.overlong_enabled, "mask truncated responses out of the loss"),
        CFPO_BOOL("filter.overlong_exclude_stats", filter.overlong_exclude_stats,
                  "masked responses also leave normalization statistics"),
        CFPO_INT("filter.repeat_min_period", filter.repeat_min_period, "shortest repeated block"),
        CFPO_INT("filter.repeat_min_repeats", filter.repeat_min_repeats, "copies needed to call a repeat"),
        KeyDef{"filter.group_mode", "off, drop or refill",
               [](TrainConfig& c, const std::string& v) { c.filter.group_mode = parse_group_filter_mode(v); },
               [](const TrainConfig& c) { return std::string(to_string(c.filter.group_mode)); }},
        CFPO_INT("filter.refill_budget", filter.refill_budget, "max extra groups sampled per iteration"),
        CFPO_INT("policy.context", context, "context window width C"),
        CFPO_INT("policy.hash_buckets", hash_buckets, "hashed whole-window feature table rows (0 disables)"),
        CFPO_DBL("policy.table_scale", table_scale, "feature value of the hashed table (its speed relative to W)"),
        CFPO_DBL("policy.init_scale", init_scale, "std of the Gaussian parameter init (0 = zeros)"),
        CFPO_INT("policy.warm_start_steps", warm_start_steps, "maximum-likelihood steps before RL (aligned-like start)"),
        CFPO_DBL("policy.warm_start_lr", warm_start_lr, "warm start learning rate"),
        CFPO_BOOL("env.lenient", lenient, "prefix-match rewarding (answer digit first is enough)"),
        CFPO_STR("vocab.glyphs", vocab_glyphs, "one glyph per token id"),
    };
    return defs;
}

#undef CFPO_INT
#undef CFPO_DBL
#undef CFPO_BOOL
#undef CFPO_STR

const std::map<std::string, std::string>& aliases() {
    // Training-framework key names accepted as synonyms.
    static const std::map<std::string, std::string> a = {
        {"seed", "run.seed"},
        {"max_steps", "run.max_steps"},
        {"save_steps", "run.save_steps"},
        {"eval_steps", "run.eval_steps"},
        {"rollout_batch_size", "rollout.batch_size"},
        {"num_return_sequences", "rollout.group_size"},
        {"ppo_epochs", "rollout.ppo_epochs"},
        {"learning_rate", "optim.lr"},
        {"init_kl_coef", "loss.kl_coef"},
        {"adv_estimator", "adv.estimator"},
        {"temperature", "sampler.temperature"},
        {"top_k", "sampler.top_k"},
        {"top_p", "sampler.top_p"},
        {"max_new_tokens", "sampler.max_new_tokens"},
        {"response_length", "sampler.max_new_tokens"},
    };
    return a;
}

const KeyDef* find_def(std::string_view key) {
    for (const auto& d : key_defs()) {
        if (d.key == key) return &d;
    }
    return nullptr;
}

} // namespace

void TrainConfig::validate() const {
    if (rollout_batch_size < 1) throw ValidationError("rollout.batch_size must be >= 1");
    if (group_size < 2) throw ValidationError("rollout.group_size must be >= 2");
    if (minibatches < 1) throw ValidationError("rollout.minibatches must be >= 1");
    if ((static_cast<long long>(rollout_batch_size) * group_size) % minibatches != 0) {
        throw ValidationError("rollout.batch_size * rollout.group_size must be divisible by rollout.minibatches");
    }
    if (ppo_epochs < 1) throw ValidationError("rollout.ppo_epochs must be >= 1");
    if (max_steps < 0) throw ValidationError("run.max_steps must be >= 0");
    if (save_steps < 0 || eval_steps < 0) throw ValidationError("run.save_steps/run.eval_steps must be >= 0");
    if (eval_n < 1) throw ValidationError("run.eval_n must be >= 1");
    if (threads < 0) throw ValidationError("run.threads must be >= 0");
    const Vocab vocab(vocab_glyphs);
    SamplerConfig s = sampler;
    if (s.max_new_tokens == 0) s.max_new_tokens = 1;
    s.validate(vocab.size());
    optim.validate();
    if (!(norm.epsilon_guard > 0.0)) throw ValidationError("adv.eps must be > 0");
    loss.validate();
    filter.validate();
    PolicyShape{vocab.size(), context, hash_buckets, table_scale}.validate();
    if (init_scale < 0.0) throw ValidationError("policy.init_scale must be >= 0");
    if (warm_start_steps < 0) throw ValidationError("policy.warm_start_steps must be >= 0");
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"vanilla", "grpo", "dapo-lite", "litepo"};
    return names;
}

const std::map<std::string, std::string>& preset_values(std::string_view name) {
    static const std::map<std::string, std::map<std::string, std::string>> presets = {
        {"vanilla",
         {{"adv.norm", "none"}, {"loss.agg", "seq"}, {"loss.eps_low", "0.2"}, {"loss.eps_high", "0.2"},
          {"loss.kl_coef", "0"}, {"filter.overlong", "false"}, {"filter.group_mode", "off"}}},
        {"grpo",
         {{"adv.norm", "group"}, {"loss.agg", "seq"}, {"loss.eps_low", "0.2"}, {"loss.eps_high", "0.2"},
          {"loss.kl_coef", "0"}, {"filter.overlong", "false"}, {"filter.group_mode", "off"}}},
        {"dapo-lite",
         {{"adv.norm", "group"}, {"loss.agg", "token"}, {"loss.eps_low", "0.2"}, {"loss.eps_high", "0.28"},
          {"loss.kl_coef", "0"}, {"filter.overlong", "true"}, {"filter.group_mode", "drop"}}},
        {"litepo",
         {{"adv.norm", "group_mean_batch_std"}, {"loss.agg", "token"}, {"loss.eps_low", "0.2"},
          {"loss.eps_high", "0.2"}, {"loss.kl_coef", "0"}, {"filter.overlong", "false"},
          {"filter.group_mode", "off"}}},
    };
    auto it = presets.find(std::string(name));
    if (it == presets.end()) {
        throw ValidationError("unknown preset \"" + std::string(name) + "\" (expected vanilla, grpo, dapo-lite or litepo)");
    }
    return it->second;
}

const std::vector<ConfigKeyInfo>& config_keys() {
    static const std::vector<ConfigKeyInfo> keys = [] {
        std::vector<ConfigKeyInfo> out;
        for (const auto& d : key_defs()) out.push_back({d.key, d.description});
        return out;
    }();
    return keys;
}

std::optional<std::string> canonical_key(std::string_view key) {
    if (find_def(key)) return std::string(key);
    if (key == "preset") return std::string("preset");
    auto it = aliases().find(std::string(key));
    if (it != aliases().end()) return it->second;
    return std::nullopt;
}

void ConfigBuilder::apply_preset(std::string_view name) {
    preset_values(name);  // validates
    assignments_.emplace_back("preset", std::string(name));
}

void ConfigBuilder::set(std::string_view key, std::string_view value) {
    auto canon = canonical_key(trim(key));
    if (!canon) throw ValidationError("unknown config key \"" + std::string(key) + "\"");
    if (*canon == "preset") {
        apply_preset(trim(value));
        return;
    }
    assignments_.emplace_back(*canon, trim(value));
}

void ConfigBuilder::set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ValidationError("expected key=value, got \"" + std::string(assignment) + "\"");
    }
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void ConfigBuilder::load_text(std::string_view text, std::string_view origin) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::pair<std::string, std::string>> local;
    std::optional<std::string> preset;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(std::string(origin) + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key == "preset") preset = value;
        else local.emplace_back(key, value);
    }
    if (preset) apply_preset(*preset);
    for (const auto& [k, v] : local) {
        try {
            set(k, v);
        } catch (const ValidationError& e) {
            throw ValidationError(std::string(origin) + ": " + e.what());
        }
    }
}

void ConfigBuilder::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path);
}

TrainConfig ConfigBuilder::build() const {
    TrainConfig cfg;
    bool named = false;
    for (const auto& [key, value] : assignments_) {
        if (key == "preset") {
            for (const auto& [pk, pv] : preset_values(value)) find_def(pk)->set(cfg, pv);
            cfg.preset = value;
            if (!named) cfg.name = value;
            continue;
        }
        if (key == "run.name") named = true;
        find_def(key)->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

std::string dump_config(const TrainConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& d : key_defs()) rows.emplace_back(d.key, d.get(cfg));
    std::sort(rows.begin(), rows.end());
    std::string out;
    for (const auto& [k, v] : rows) out += k + " = " + v + "\n";
    return out;
}

std::string get_config_value(const TrainConfig& cfg, std::string_view key) {
    auto canon = canonical_key(key);
    if (!canon || *canon == "preset") throw ValidationError("unknown config key \"" + std::string(key) + "\"");
    return find_def(*canon)->get(cfg);
}

} // namespace cfpo
