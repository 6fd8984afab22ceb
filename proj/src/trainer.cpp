// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "cfpo/errors.hpp"
#include "cfpo/rng.hpp"

namespace cfpo {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEpochStream = 2;
constexpr std::uint64_t kRolloutStream = 3;
constexpr std::uint64_t kRefillStream = 4;
constexpr std::uint64_t kMinibatchStream = 5;
constexpr std::uint64_t kHeldoutStream = 6;

Tier dominant_tier(std::span<const ArithmeticTask> tasks) {
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& t : tasks) ++counts[static_cast<int>(t.tier)];
    return static_cast<Tier>(std::max_element(std::begin(counts), std::end(counts)) - std::begin(counts));
}

Tier hardest_tier(std::span<const ArithmeticTask> tasks) {
    Tier out = Tier::Easy;
    for (const auto& t : tasks) out = std::max(out, t.tier);
    return out;
}

PolicyParams initial_params(const TrainConfig& cfg, const Vocab& vocab, std::span<const ArithmeticTask> dataset) {
    PolicyShape shape{vocab.size(), cfg.context, cfg.hash_buckets, cfg.table_scale};
    PolicyParams p = PolicyParams::random(shape, cfg.init_scale, derive_seed(cfg.seed, {kInitStream}));
    if (cfg.warm_start_steps > 0) {
        std::vector<Demonstration> demos;
        demos.reserve(dataset.size());
        for (const auto& t : dataset) demos.push_back({t.prompt, canonical_answer(t, vocab)});
        warm_start(p, demos, {cfg.warm_start_steps, cfg.warm_start_lr, cfg.sampler.temperature}, vocab);
    }
    return p;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                      : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace

std::string metrics_to_json(const MetricsRecord& m) {
    nlohmann::ordered_json j;
    j["iter"] = m.iter;
    j["train_acc"] = m.train_acc;
    j["mean_len"] = m.mean_len;
    j["entropy"] = m.entropy;
    j["clip_frac_high"] = m.clip_frac_high;
    j["clip_frac_low"] = m.clip_frac_low;
    j["grad_norm"] = m.grad_norm;
    j["repeat_ratio"] = m.repeat_ratio;
    j["degenerate_group_frac"] = m.degenerate_group_frac;
    j["reward_std_batch"] = m.reward_std_batch;
    j["loss"] = m.loss;
    return j.dump();
}

MetricsRecord metrics_from_json(std::string_view line) {
    try {
        const auto j = nlohmann::json::parse(line);
        MetricsRecord m;
        m.iter = j.at("iter").get<std::int64_t>();
        m.train_acc = j.at("train_acc").get<double>();
        m.mean_len = j.at("mean_len").get<double>();
        m.entropy = j.at("entropy").get<double>();
        m.clip_frac_high = j.at("clip_frac_high").get<double>();
        m.clip_frac_low = j.at("clip_frac_low").get<double>();
        m.grad_norm = j.at("grad_norm").get<double>();
        m.repeat_ratio = j.at("repeat_ratio").get<double>();
        m.degenerate_group_frac = j.at("degenerate_group_frac").get<double>();
        m.reward_std_batch = j.at("reward_std_batch").get<double>();
        m.loss = j.at("loss").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed metrics record: ") + e.what());
    }
}

int default_max_new_tokens(Tier tier) {
    switch (tier) {
    case Tier::Easy: return 4;
    case Tier::Medium: return 6;
    case Tier::Hard: return 8;
    }
    return 4;
}

Trainer::Trainer(TrainConfig config, std::vector<ArithmeticTask> dataset)
    : config_((config.validate(), std::move(config))),
      vocab_(config_.vocab_glyphs),
      dataset_(std::move(dataset)),
      params_(PolicyParams::zeros({vocab_.size(), config_.context, config_.hash_buckets, config_.table_scale})),
      reference_(params_) {
    if (dataset_.empty()) throw ValidationError("training dataset is empty");
    for (const auto& t : dataset_) validate_token_seq(t.prompt, vocab_);
    sampler_ = config_.sampler;
    if (sampler_.max_new_tokens == 0) sampler_.max_new_tokens = default_max_new_tokens(hardest_tier(dataset_));
    sampler_.validate(vocab_.size());
    heldout_ = gen_dataset(dominant_tier(dataset_), static_cast<std::size_t>(config_.eval_n),
                           derive_seed(config_.seed, {kHeldoutStream}), vocab_);
    params_ = initial_params(config_, vocab_, dataset_);
    reference_ = ReferenceSnapshot(params_);
    order_.resize(dataset_.size());
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(config_.seed, {kEpochStream, 0}));
    shuffle(order_.begin(), order_.end(), rng);
}

RngState Trainer::rng_state() const {
    return {config_.seed, iteration_, epoch_, cursor_};
}

std::vector<std::size_t> Trainer::next_prompts(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
        if (cursor_ >= static_cast<std::int64_t>(order_.size())) {
            ++epoch_;
            cursor_ = 0;
            std::iota(order_.begin(), order_.end(), 0);
            Rng rng(derive_seed(config_.seed, {kEpochStream, static_cast<std::uint64_t>(epoch_)}));
            shuffle(order_.begin(), order_.end(), rng);
        }
        out.push_back(order_[static_cast<std::size_t>(cursor_++)]);
    }
    return out;
}

RolloutGroup Trainer::sample_group(const ArithmeticTask& task, Rng& rng) const {
    RolloutGroup g;
    g.prompt = task.prompt;
    for (int k = 0; k < config_.group_size; ++k) {
        Response r = sample_response(params_, task.prompt, sampler_, vocab_, rng);
        r.reward = verify(task, r.tokens.ids, vocab_, config_.lenient);
        g.responses.push_back(std::move(r));
    }
    return g;
}

RolloutBatch Trainer::rollout(std::span<const std::size_t> prompts, std::vector<double>& step_entropies) const {
    RolloutBatch batch;
    batch.policy_version = params_.version;
    batch.groups.resize(prompts.size());
    std::vector<std::vector<double>> entropies(prompts.size());
    parallel_for(prompts.size(), config_.threads, [&](std::size_t p) {
        // Per-prompt stream: the result does not depend on the worker count.
        Rng rng(derive_seed(config_.seed, {kRolloutStream, static_cast<std::uint64_t>(iteration_), p}));
        const ArithmeticTask& task = dataset_[prompts[p]];
        batch.groups[p] = sample_group(task, rng);
        for (const auto& r : batch.groups[p].responses) {
            std::vector<TokenId> history = task.prompt.ids;
            for (TokenId tok : r.tokens.ids) {
                const auto w = context_window(history, params_.shape.context, vocab_.pad());
                entropies[p].push_back(categorical_entropy(softmax(logits(params_, w), sampler_.temperature)));
                history.push_back(tok);
            }
        }
    });
    for (const auto& e : entropies) step_entropies.insert(step_entropies.end(), e.begin(), e.end());
    return batch;
}

MetricsRecord Trainer::run_iteration() {
    diag_ = IterationDiagnostics{};
    MetricsRecord m;
    m.iter = iteration_ + 1;

    const std::size_t n = static_cast<std::size_t>(config_.rollout_batch_size);
    std::vector<std::size_t> prompts = next_prompts(n);
    std::vector<double> step_entropies;
    RolloutBatch sampled = rollout(prompts, step_entropies);

    // Metrics over everything that was sampled.
    {
        const auto rewards = flatten_rewards(sampled);
        const auto lens = token_counts(sampled);
        m.train_acc = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
        m.mean_len = static_cast<double>(std::accumulate(lens.begin(), lens.end(), std::size_t{0})) /
                     static_cast<double>(lens.size());
        m.reward_std_batch = group_stats(rewards).std;
        m.entropy = step_entropies.empty()
                        ? 0.0
                        : std::accumulate(step_entropies.begin(), step_entropies.end(), 0.0) /
                              static_cast<double>(step_entropies.size());
        m.repeat_ratio = repeat_ratio(sampled, config_.filter);
    }

    const bool exclude_masked = config_.filter.overlong_enabled && config_.filter.overlong_exclude_stats;
    Participation participates = [exclude_masked](const Response& r) { return !(exclude_masked && r.truncated); };

    std::int64_t refill_attempt = 0;
    GroupResampler resample = [&]() -> std::optional<RolloutGroup> {
        const std::size_t idx = next_prompts(1).front();
        Rng rng(derive_seed(config_.seed, {kRefillStream, static_cast<std::uint64_t>(iteration_),
                                           static_cast<std::uint64_t>(refill_attempt++)}));
        return sample_group(dataset_[idx], rng);
    };
    GroupFilterResult filtered =
        group_filter(sampled, config_.filter.group_mode, participates, resample, config_.filter.refill_budget);
    diag_.messages = filtered.report.diagnostics;
    diag_.sampled = std::move(sampled);
    diag_.kept_groups = filtered.kept.groups.size();

    if (filtered.empty) {
        diag_.skipped = true;
        ++iteration_;
        return m;
    }

    const RolloutBatch& kept = filtered.kept;
    const RolloutBatch scaled = apply_reward_scale(kept, config_.reward_scale);
    LossMask mask = config_.filter.overlong_enabled ? overlong_mask(kept).first : LossMask::ones(kept);

    const std::size_t total = kept.num_trajectories();
    auto part = std::make_unique<bool[]>(total);
    for (std::size_t i = 0; i < total; ++i) part[i] = participates(kept.trajectory(i));
    const AdvantageTensor adv = compute_advantages(scaled, config_.norm, std::span<const bool>(part.get(), total));
    m.degenerate_group_frac =
        static_cast<double>(adv.degenerate_groups.size()) / static_cast<double>(kept.groups.size());

    // Per-token features are fixed by the sampled tokens; only logits change.
    std::vector<std::vector<Features>> features(total);
    for (std::size_t i = 0; i < total; ++i) {
        features[i] = response_features(params_.shape, kept.groups[i / kept.group_size()].prompt,
                                        kept.trajectory(i).tokens, vocab_.pad());
    }

    const std::size_t m_count = static_cast<std::size_t>(config_.minibatches);
    const double tau = sampler_.temperature;
    std::size_t active_tokens = 0;
    double loss_sum = 0.0;
    double grad_norm_sum = 0.0;
    std::size_t steps = 0;
    bool first_minibatch = true;

    for (int epoch = 0; epoch < config_.ppo_epochs; ++epoch) {
        std::vector<std::size_t> order(total);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config_.seed, {kMinibatchStream, static_cast<std::uint64_t>(iteration_),
                                           static_cast<std::uint64_t>(epoch)}));
        shuffle(order.begin(), order.end(), rng);

        std::size_t begin = 0;
        for (std::size_t mb = 0; mb < m_count; ++mb) {
            const std::size_t size = total / m_count + (mb < total % m_count ? 1 : 0);
            std::span<const std::size_t> members(order.data() + begin, size);
            begin += size;
            if (members.empty()) continue;

            std::vector<LossSample> samples(size);
            for (std::size_t a = 0; a < size; ++a) {
                const std::size_t i = members[a];
                samples[a] = {features[i], &kept.trajectory(i), adv.per_token[i], mask.weights[i]};
            }
            PolicyLossResult res = policy_loss_and_grad(params_, &reference_.params(), samples, config_.loss, tau);
            if (first_minibatch) {
                diag_.first_minibatch_max_ratio_dev = res.max_ratio_dev;
                first_minibatch = false;
            }
            for (ClipEvent e : res.surrogate.events.events()) {
                e.trajectory = members[e.trajectory];
                diag_.clip_events.record(e);
            }
            active_tokens += res.surrogate.diagnostics.active_tokens;
            if (res.surrogate.diagnostics.all_masked) {
                diag_.messages.push_back(res.surrogate.diagnostics.message);
                continue;
            }

            const double norm = apply_update(params_, res.grad, optimizer_, config_.optim);
            diag_.minibatch_grad_norms.push_back(norm);
            grad_norm_sum += norm;
            loss_sum += res.surrogate.loss;
            ++steps;
        }
    }

    diag_.optimizer_steps = steps;
    if (active_tokens > 0) {
        m.clip_frac_high = static_cast<double>(diag_.clip_events.upper()) / static_cast<double>(active_tokens);
        m.clip_frac_low = static_cast<double>(diag_.clip_events.lower()) / static_cast<double>(active_tokens);
    }
    if (steps > 0) {
        m.grad_norm = grad_norm_sum / static_cast<double>(steps);
        m.loss = loss_sum / static_cast<double>(steps);
    }
    ++iteration_;
    return m;
}

std::vector<Features> response_features(const PolicyShape& shape, const TokenSeq& prompt, const TokenSeq& response,
                                        TokenId pad) {
    std::vector<Features> out;
    out.reserve(response.length());
    std::vector<TokenId> history = prompt.ids;
    for (TokenId tok : response.ids) {
        out.push_back(featurize(shape, context_window(history, shape.context, pad)));
        history.push_back(tok);
    }
    return out;
}

PolicyLossResult policy_loss_and_grad(const PolicyParams& params, const PolicyParams* reference,
                                      std::span<const LossSample> samples, const LossConfig& loss,
                                      double temperature) {
    const bool with_kl = loss.kl_coef > 0.0;
    if (with_kl && !reference) throw ValidationError("a KL penalty needs a reference policy");
    const std::size_t n = samples.size();
    std::vector<std::vector<double>> new_lp(n), kl(n);
    std::vector<std::vector<std::vector<double>>> lgrad(n), kgrad(n);
    std::vector<TrajectoryTerms> terms(n);
    PolicyLossResult out;
    for (std::size_t a = 0; a < n; ++a) {
        const LossSample& s = samples[a];
        const Response& r = *s.response;
        if (s.features.size() != r.tokens.length()) throw ValidationError("features do not match the response");
        for (std::size_t t = 0; t < r.tokens.length(); ++t) {
            const auto z = logits(params, s.features[t]);
            const TokenId tok = r.tokens.ids[t];
            new_lp[a].push_back(log_softmax(z, temperature)[static_cast<std::size_t>(tok)]);
            lgrad[a].push_back(logit_grad_logprob(z, tok, temperature));
            out.max_ratio_dev =
                std::max(out.max_ratio_dev, std::abs(token_ratio(new_lp[a].back(), r.behavior_logprobs[t]) - 1.0));
            if (with_kl) {
                const auto p = softmax(z, temperature);
                const auto q = softmax(logits(*reference, s.features[t]), temperature);
                kl[a].push_back(kl_penalty(p, q));
                kgrad[a].push_back(logit_grad_kl(p, q, temperature));
            }
        }
        terms[a].tokens = r.tokens.ids;
        terms[a].behavior_logprobs = r.behavior_logprobs;
        terms[a].new_logprobs = new_lp[a];
        terms[a].advantages = s.advantages;
        terms[a].mask = s.mask;
        if (with_kl) terms[a].kl = kl[a];
    }
    out.surrogate = surrogate_loss(terms, loss);
    if (out.surrogate.diagnostics.all_masked) return out;

    out.grad.assign(params.theta.size(), 0.0);
    std::vector<double> dz(static_cast<std::size_t>(params.shape.vocab));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t t = 0; t < new_lp[a].size(); ++t) {
            const double c = out.surrogate.dloss_dlogprob[a][t];
            const double ck = with_kl ? out.surrogate.dloss_dkl[a][t] : 0.0;
            if (c == 0.0 && ck == 0.0) continue;
            for (std::size_t j = 0; j < dz.size(); ++j) {
                dz[j] = c * lgrad[a][t][j] + (with_kl ? ck * kgrad[a][t][j] : 0.0);
            }
            accumulate_logit_grad(params.shape, samples[a].features[t], dz, 1.0, out.grad);
        }
    }
    return out;
}

EvalResult Trainer::evaluate(std::span<const ArithmeticTask> tasks) const {
    EvalResult res;
    if (tasks.empty()) return res;
    double correct = 0.0, len = 0.0;
    for (const auto& t : tasks) {
        const Response r = greedy_response(params_, t.prompt, sampler_.max_new_tokens, vocab_);
        correct += verify(t, r.tokens.ids, vocab_, config_.lenient);
        len += static_cast<double>(r.tokens.length());
    }
    res.accuracy = correct / static_cast<double>(tasks.size());
    res.mean_len = len / static_cast<double>(tasks.size());
    return res;
}

} // namespace cfpo
