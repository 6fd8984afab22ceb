// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cfpo/errors.hpp"

namespace cfpo {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void PolicyShape::validate() const {
    if (vocab < 2) throw ValidationError("policy vocabulary must have at least 2 tokens");
    if (context < 1) throw ValidationError("policy.context must be >= 1");
    if (hash_buckets < 0) throw ValidationError("policy.hash_buckets must be >= 0");
    if (!(table_scale > 0.0) || !std::isfinite(table_scale)) throw ValidationError("policy.table_scale must be > 0");
}

PolicyParams PolicyParams::zeros(const PolicyShape& shape) {
    shape.validate();
    PolicyParams p;
    p.shape = shape;
    p.theta.assign(shape.num_params(), 0.0);
    return p;
}

PolicyParams PolicyParams::random(const PolicyShape& shape, double scale, std::uint64_t seed) {
    PolicyParams p = zeros(shape);
    if (scale == 0.0) return p;
    Rng rng(seed);
    // Box-Muller on Rng::uniform keeps the init identical across standard libraries.
    for (std::size_t i = 0; i < p.theta.size(); i += 2) {
        const double u1 = 1.0 - rng.uniform();
        const double u2 = rng.uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        p.theta[i] = scale * r * std::cos(2.0 * M_PI * u2);
        if (i + 1 < p.theta.size()) p.theta[i + 1] = scale * r * std::sin(2.0 * M_PI * u2);
    }
    return p;
}

std::uint64_t PolicyParams::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(theta.data(), theta.size() * sizeof(double));
    mix(&version, sizeof(version));
    return h;
}

void SamplerConfig::validate(int vocab) const {
    if (!(temperature > 0.0)) throw ValidationError("sampler.temperature must be > 0");
    if (top_k < 0 || top_k > vocab) throw ValidationError("sampler.top_k must be in [1, V] (0 selects V)");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("sampler.top_p must be in (0, 1]");
    if (max_new_tokens < 1) throw ValidationError("sampler.max_new_tokens must be >= 1");
}

std::vector<TokenId> context_window(std::span<const TokenId> history, int context, TokenId pad) {
    std::vector<TokenId> w(static_cast<std::size_t>(context), pad);
    const std::size_t n = std::min(history.size(), w.size());
    std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), w.end() - static_cast<std::ptrdiff_t>(n));
    return w;
}

Features featurize(const PolicyShape& shape, std::span<const TokenId> window) {
    if (window.size() != static_cast<std::size_t>(shape.context)) {
        throw ValidationError("context window has the wrong width");
    }
    Features f;
    f.unary_rows.reserve(window.size());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t pos = 0; pos < window.size(); ++pos) {
        const TokenId id = window[pos];
        if (id < 0 || id >= shape.vocab) throw ValidationError("context token outside vocabulary");
        f.unary_rows.push_back(pos * static_cast<std::size_t>(shape.vocab) + static_cast<std::size_t>(id));
        h ^= static_cast<std::uint64_t>(id) + 1;
        h *= 0x100000001b3ULL;
    }
    if (shape.hash_buckets > 0) {
        f.table_row = static_cast<std::ptrdiff_t>(splitmix64(h) % static_cast<std::uint64_t>(shape.hash_buckets));
    }
    return f;
}

std::vector<double> logits(const PolicyParams& params, const Features& f) {
    const auto v = static_cast<std::size_t>(params.shape.vocab);
    auto bias = params.bias();
    std::vector<double> z(bias.begin(), bias.end());
    auto w = params.unary();
    for (std::size_t row : f.unary_rows) {
        const double* r = w.data() + row * v;
        for (std::size_t j = 0; j < v; ++j) z[j] += r[j];
    }
    if (f.table_row >= 0) {
        const double* r = params.table().data() + static_cast<std::size_t>(f.table_row) * v;
        const double s = params.shape.table_scale;
        for (std::size_t j = 0; j < v; ++j) z[j] += s * r[j];
    }
    return z;
}

std::vector<double> logits(const PolicyParams& params, std::span<const TokenId> window) {
    return logits(params, featurize(params.shape, window));
}

std::vector<double> log_softmax(std::span<const double> z, double temperature) {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    std::vector<double> out(z.size());
    const double mx = *std::max_element(z.begin(), z.end()) / temperature;
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = z[i] / temperature - mx;
        sum += std::exp(out[i]);
    }
    const double lse = std::log(sum);
    for (double& x : out) x -= lse;
    return out;
}

std::vector<double> softmax(std::span<const double> z, double temperature) {
    auto lp = log_softmax(z, temperature);
    for (double& x : lp) x = std::exp(x);
    return lp;
}

double categorical_entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

double entropy(const PolicyParams& params, std::span<const std::vector<TokenId>> windows, double temperature) {
    if (windows.empty()) return 0.0;
    double total = 0.0;
    for (const auto& w : windows) total += categorical_entropy(softmax(logits(params, w), temperature));
    return total / static_cast<double>(windows.size());
}

namespace {

TokenId sample_truncated(std::span<const double> probs, int top_k, double top_p, Rng& rng) {
    std::vector<TokenId> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
    const std::size_t k = top_k == 0 ? probs.size() : std::min<std::size_t>(static_cast<std::size_t>(top_k), probs.size());
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < k) {
        mass += probs[order[keep]];
        ++keep;
        if (mass >= top_p) break;
    }
    const double u = rng.uniform() * mass;
    double acc = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        acc += probs[order[i]];
        if (u < acc) return order[i];
    }
    return order[keep - 1];
}

} // namespace

Response sample_response(const PolicyParams& params, const TokenSeq& prompt, const SamplerConfig& sampler,
                         const Vocab& vocab, Rng& rng) {
    sampler.validate(params.shape.vocab);
    Response r;
    std::vector<TokenId> history = prompt.ids;
    for (int step = 0; step < sampler.max_new_tokens; ++step) {
        const auto window = context_window(history, params.shape.context, vocab.pad());
        const auto lp = log_softmax(logits(params, window), sampler.temperature);
        std::vector<double> probs(lp.size());
        for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
        const TokenId tok = sample_truncated(probs, sampler.top_k, sampler.top_p, rng);
        r.tokens.ids.push_back(tok);
        r.behavior_logprobs.push_back(lp[static_cast<std::size_t>(tok)]);
        history.push_back(tok);
        if (tok == vocab.eos()) return r;
    }
    r.truncated = true;
    return r;
}

Response greedy_response(const PolicyParams& params, const TokenSeq& prompt, int max_new_tokens, const Vocab& vocab) {
    Response r;
    std::vector<TokenId> history = prompt.ids;
    for (int step = 0; step < max_new_tokens; ++step) {
        const auto window = context_window(history, params.shape.context, vocab.pad());
        const auto z = logits(params, window);
        const auto tok = static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
        const auto lp = log_softmax(z, 1.0);
        r.tokens.ids.push_back(tok);
        r.behavior_logprobs.push_back(lp[static_cast<std::size_t>(tok)]);
        history.push_back(tok);
        if (tok == vocab.eos()) return r;
    }
    r.truncated = true;
    return r;
}

std::vector<double> logit_grad_logprob(std::span<const double> z, TokenId token, double temperature) {
    auto g = softmax(z, temperature);
    for (double& x : g) x = -x / temperature;
    g[static_cast<std::size_t>(token)] += 1.0 / temperature;
    return g;
}

void accumulate_logit_grad(const PolicyShape& shape, const Features& f, std::span<const double> logit_grad,
                           double scale, std::span<double> grad) {
    const auto v = static_cast<std::size_t>(shape.vocab);
    for (std::size_t row : f.unary_rows) {
        double* r = grad.data() + row * v;
        for (std::size_t j = 0; j < v; ++j) r[j] += scale * logit_grad[j];
    }
    if (f.table_row >= 0) {
        double* r = grad.data() + shape.unary_size() + static_cast<std::size_t>(f.table_row) * v;
        const double s = scale * shape.table_scale;
        for (std::size_t j = 0; j < v; ++j) r[j] += s * logit_grad[j];
    }
    double* b = grad.data() + shape.unary_size() + shape.table_size();
    for (std::size_t j = 0; j < v; ++j) b[j] += scale * logit_grad[j];
}

std::vector<double> grad_logprob(const PolicyParams& params, std::span<const TokenId> window, TokenId token,
                                 double temperature) {
    const Features f = featurize(params.shape, window);
    const auto g = logit_grad_logprob(logits(params, f), token, temperature);
    std::vector<double> grad(params.theta.size(), 0.0);
    accumulate_logit_grad(params.shape, f, g, 1.0, grad);
    return grad;
}

std::vector<double> logit_grad_kl(std::span<const double> probs, std::span<const double> ref_probs,
                                  double temperature) {
    double kl = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) kl += probs[i] * std::log(probs[i] / ref_probs[i]);
    }
    std::vector<double> g(probs.size(), 0.0);
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (probs[j] > 0.0) g[j] = probs[j] * (std::log(probs[j] / ref_probs[j]) - kl) / temperature;
    }
    return g;
}

double warm_start(PolicyParams& params, std::span<const Demonstration> demos, const WarmStartConfig& cfg,
                  const Vocab& vocab) {
    if (demos.empty() || cfg.steps <= 0) return 0.0;
    struct Step {
        Features f;
        TokenId target;
    };
    std::vector<Step> steps;
    for (const auto& d : demos) {
        std::vector<TokenId> history = d.prompt.ids;
        for (TokenId t : d.target.ids) {
            steps.push_back({featurize(params.shape, context_window(history, params.shape.context, vocab.pad())), t});
            history.push_back(t);
        }
    }
    const double inv = 1.0 / static_cast<double>(steps.size());
    std::vector<double> grad(params.theta.size());
    double nll = 0.0;
    for (int it = 0; it < cfg.steps; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        nll = 0.0;
        for (const auto& s : steps) {
            const auto z = logits(params, s.f);
            nll -= log_softmax(z, cfg.temperature)[static_cast<std::size_t>(s.target)] * inv;
            accumulate_logit_grad(params.shape, s.f, logit_grad_logprob(z, s.target, cfg.temperature), inv, grad);
        }
        for (std::size_t i = 0; i < grad.size(); ++i) params.theta[i] += cfg.learning_rate * grad[i];
    }
    return nll;
}

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'F', 'P', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint is truncated");
    return v;
}

} // namespace

// Layout (little-endian): magic[8], u32 format version, i32 vocab, i32 context,
// i32 hash_buckets, f64 table_scale, i64 params version, u64 seed, i64 iteration, i64 epoch,
// i64 cursor, u64 parameter count, f64 theta[count].
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params, const RngState& rng) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put(out, kCheckpointVersion);
    put(out, static_cast<std::int32_t>(params.shape.vocab));
    put(out, static_cast<std::int32_t>(params.shape.context));
    put(out, static_cast<std::int32_t>(params.shape.hash_buckets));
    put(out, params.shape.table_scale);
    put(out, params.version);
    put(out, rng.seed);
    put(out, rng.iteration);
    put(out, rng.epoch);
    put(out, rng.cursor);
    put(out, static_cast<std::uint64_t>(params.theta.size()));
    out.write(reinterpret_cast<const char*>(params.theta.data()),
              static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path, RngState* rng) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ValidationError(path.string() + " is not a cfpo checkpoint");
    }
    if (get<std::uint32_t>(in) != kCheckpointVersion) throw ValidationError("unsupported checkpoint version");
    PolicyShape shape;
    shape.vocab = get<std::int32_t>(in);
    shape.context = get<std::int32_t>(in);
    shape.hash_buckets = get<std::int32_t>(in);
    shape.table_scale = get<double>(in);
    PolicyParams p = PolicyParams::zeros(shape);
    p.version = get<std::int64_t>(in);
    RngState st;
    st.seed = get<std::uint64_t>(in);
    st.iteration = get<std::int64_t>(in);
    st.epoch = get<std::int64_t>(in);
    st.cursor = get<std::int64_t>(in);
    if (get<std::uint64_t>(in) != p.theta.size()) throw ValidationError("checkpoint parameter count mismatch");
    in.read(reinterpret_cast<char*>(p.theta.data()), static_cast<std::streamsize>(p.theta.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint is truncated");
    if (rng) *rng = st;
    return p;
}

} // namespace cfpo
