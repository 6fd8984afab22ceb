// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cfpo/errors.hpp"
#include "cfpo/surrogate.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cfpo;

namespace {

const ClipConfig kDapo{0.2, 0.28};

struct Frozen {
    RolloutBatch batch;
    std::vector<std::vector<double>> adv, lp;
    LossMask mask;
};

Frozen frozen_batch(std::mt19937_64& rng, std::size_t g, std::size_t k) {
    Frozen f;
    f.batch = testing::random_batch(rng, g, k);
    std::normal_distribution<double> n(0.0, 1.0), drift(0.0, 0.3);
    for (std::size_t i = 0; i < f.batch.num_trajectories(); ++i) {
        const auto& r = f.batch.trajectory(i);
        const double a = n(rng);
        f.adv.emplace_back(r.tokens.length(), a);
        std::vector<double> row;
        for (double b : r.behavior_logprobs) row.push_back(std::min(0.0, b + drift(rng)));
        f.lp.push_back(row);
    }
    f.mask = LossMask::ones(f.batch);
    return f;
}

} // namespace

TEST_CASE("token_ratio") {
    CHECK(token_ratio(-1.2, -1.2) == 1.0);
    CHECK(token_ratio(-2.0 + std::log(1.5), -2.0) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(token_ratio(-1.0 - std::numbers::ln2, -1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(token_ratio(0.0, -100.0) == doctest::Approx(std::exp(30.0)));
    CHECK(std::isfinite(token_ratio(-1000.0, 0.0)));
}

TEST_CASE("clipped_term worked examples") {
    auto t = clipped_term(1.4, 1.0, kDapo);
    CHECK(t.value == doctest::Approx(1.28));
    CHECK(t.event == ClipDirection::Upper);
    CHECK(t.dvalue_dratio == 0.0);

    t = clipped_term(0.7, -1.0, kDapo);
    CHECK(t.value == doctest::Approx(-0.8));
    CHECK(t.event == ClipDirection::Lower);
    CHECK(t.dvalue_dratio == 0.0);

    for (double a : {-2.0, -0.3, 0.0, 0.5, 3.0}) {
        t = clipped_term(1.0, a, kDapo);
        CHECK(t.value == a);
        CHECK_FALSE(t.event.has_value());
    }

    t = clipped_term(1.25, 1.0, kDapo);
    CHECK(t.value == doctest::Approx(1.25));
    CHECK_FALSE(t.event.has_value());
    t = clipped_term(1.25, 1.0, {0.2, 0.2});
    CHECK(t.value == doctest::Approx(1.2));
    CHECK(t.event == ClipDirection::Upper);
}

TEST_CASE("no event when the unclipped branch stays active") {
    // Ratio outside the band but min() keeps r*A: gradient still flows.
    auto t = clipped_term(1.5, -1.0, kDapo);
    CHECK(t.value == doctest::Approx(-1.5));
    CHECK_FALSE(t.event.has_value());
    CHECK(t.dvalue_dratio == -1.0);
    t = clipped_term(0.5, 1.0, kDapo);
    CHECK(t.value == doctest::Approx(0.5));
    CHECK_FALSE(t.event.has_value());
}

TEST_CASE("clipped_term matches the min/clip oracle") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> r(0.2, 2.0), a(-3.0, 3.0), e(0.01, 0.45);
    for (int i = 0; i < 5000; ++i) {
        const double lo = e(rng), hi = lo + e(rng) * 0.5;
        const double ratio = r(rng), adv = a(rng);
        const auto t = clipped_term(ratio, adv, {lo, hi});
        CHECK(t.value == doctest::Approx(oracle::clipped(ratio, adv, lo, hi)).epsilon(1e-12));
        // Finite-difference slope in ratio; zero exactly when an event fires.
        const double h = 1e-7;
        const double fd = (oracle::clipped(ratio + h, adv, lo, hi) - oracle::clipped(ratio - h, adv, lo, hi)) / (2 * h);
        const bool at_kink = std::abs(ratio - (1 - lo)) < 1e-6 || std::abs(ratio - (1 + hi)) < 1e-6;
        if (!at_kink) CHECK(t.dvalue_dratio == doctest::Approx(fd).epsilon(1e-5));
        if (t.event) CHECK(t.dvalue_dratio == 0.0);
    }
}

TEST_CASE("clip config validation") {
    CHECK_NOTHROW(ClipConfig{0.2, 0.28}.validate());
    CHECK_THROWS_AS((ClipConfig{0.3, 0.2}.validate()), ValidationError);
    CHECK_THROWS_AS((ClipConfig{0.0, 0.2}.validate()), ValidationError);
    CHECK_THROWS_AS((ClipConfig{0.2, 1.0}.validate()), ValidationError);
    LossConfig lc;
    lc.kl_coef = -0.1;
    CHECK_THROWS_AS(lc.validate(), ValidationError);
}

TEST_CASE("kl_penalty") {
    const std::vector<double> u{0.5, 0.5}, q{0.25, 0.75}, one{1.0, 0.0};
    CHECK(kl_penalty(u, u) == 0.0);
    CHECK(kl_penalty(u, q) == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(kl_penalty(u, q) ==
          doctest::Approx(static_cast<double>(oracle::kl({0.5L, 0.5L}, {0.25L, 0.75L}))).epsilon(1e-12));
    CHECK(kl_penalty(one, u) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK_THROWS_AS(kl_penalty(u, one), ValidationError);
    CHECK_THROWS_AS(kl_penalty(std::vector<double>{0.5, 0.6}, u), ValidationError);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> w(0.01, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> p(16), r(16);
        double sp = 0, sr = 0;
        for (int j = 0; j < 16; ++j) {
            sp += p[j] = w(rng);
            sr += r[j] = w(rng);
        }
        for (int j = 0; j < 16; ++j) {
            p[j] /= sp;
            r[j] /= sr;
        }
        CHECK(kl_penalty(p, r) >= 0.0);
        CHECK(kl_penalty(p, p) == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("aggregation worked example") {
    const std::vector<std::vector<double>> v{{0.2, 0.4}, {0.1, 0.1, 0.1, 0.1}};
    LossMask m{{{1, 1}, {1, 1, 1, 1}}};
    CHECK(aggregate(v, m, Aggregation::SequenceLevel).value == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(aggregate(v, m, Aggregation::TokenLevel).value == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    m.weights[1] = {0, 0, 0, 0};
    CHECK(aggregate(v, m, Aggregation::SequenceLevel).value == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(aggregate(v, m, Aggregation::TokenLevel).value == doctest::Approx(0.3).epsilon(1e-12));

    m.weights[0] = {0, 0};
    const auto all = aggregate(v, m, Aggregation::TokenLevel);
    CHECK(all.value == 0.0);
    CHECK(all.all_masked);
    CHECK_FALSE(all.diagnostic.empty());
}

TEST_CASE("aggregation matches the oracle on random masks") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> val(-2, 2);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 6;
        std::vector<std::vector<double>> v(n);
        LossMask m;
        m.weights.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t len = 1 + rng() % 7;
            for (std::size_t t = 0; t < len; ++t) {
                v[i].push_back(val(rng));
                m.weights[i].push_back(static_cast<std::uint8_t>(rng() % 4 != 0));
            }
        }
        for (bool token : {true, false}) {
            const auto mode = token ? Aggregation::TokenLevel : Aggregation::SequenceLevel;
            CHECK(aggregate(v, m, mode).value == doctest::Approx(oracle::aggregate(v, m.weights, token)).epsilon(1e-12));
            // The weights reproduce the aggregate.
            const auto w = aggregation_weights(m, mode);
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < v[i].size(); ++t) s += w[i][t] * v[i][t];
            CHECK(s == doctest::Approx(aggregate(v, m, mode).value).epsilon(1e-12));
        }
    }
}

TEST_CASE("equal lengths make both aggregations agree") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> val(-2, 2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 8, len = 1 + rng() % 6;
        std::vector<std::vector<double>> v(n, std::vector<double>(len));
        for (auto& row : v)
            for (auto& x : row) x = val(rng);
        LossMask m{std::vector<std::vector<std::uint8_t>>(n, std::vector<std::uint8_t>(len, 1))};
        CHECK(aggregate(v, m, Aggregation::TokenLevel).value ==
              doctest::Approx(aggregate(v, m, Aggregation::SequenceLevel).value).epsilon(1e-12));
    }
}

TEST_CASE("surrogate_loss examples") {
    SUBCASE("ratio 1 gives minus the aggregated advantage") {
        auto b = testing::make_batch({{1, 0}}, {2, 3});
        std::vector<std::vector<double>> adv{{1.0, 1.0}, {-0.5, -0.5, -0.5}};
        std::vector<std::vector<double>> lp{b.trajectory(0).behavior_logprobs, b.trajectory(1).behavior_logprobs};
        const auto mask = LossMask::ones(b);
        LossConfig cfg;
        const auto r = surrogate_loss(b, adv, lp, mask, cfg);
        CHECK(r.loss == doctest::Approx(-aggregate(adv, mask, Aggregation::TokenLevel).value).epsilon(1e-12));
        CHECK(r.events.events().empty());
        cfg.aggregation = Aggregation::SequenceLevel;
        CHECK(surrogate_loss(b, adv, lp, mask, cfg).loss == doctest::Approx(-0.25).epsilon(1e-12));
    }
    SUBCASE("single upper-clipped token") {
        auto b = testing::make_batch({{1, 0}}, {1});
        std::vector<std::vector<double>> adv{{1.0}, {0.0}};
        std::vector<std::vector<double>> lp{{-0.5 + std::log(1.4)}, {-0.5}};
        LossMask mask{{{1}, {0}}};
        LossConfig cfg{kDapo, Aggregation::TokenLevel, 0.0};
        const auto r = surrogate_loss(b, adv, lp, mask, cfg);
        CHECK(r.loss == doctest::Approx(-1.28).epsilon(1e-12));
        REQUIRE(r.events.events().size() == 1);
        CHECK(r.events.upper() == 1);
        CHECK(r.dloss_dlogprob[0][0] == 0.0);
    }
    SUBCASE("KL of identical distributions adds nothing") {
        auto b = testing::make_batch({{1, 0}}, {2});
        std::vector<std::vector<double>> adv{{1, 1}, {-1, -1}};
        std::vector<std::vector<double>> lp{b.trajectory(0).behavior_logprobs, b.trajectory(1).behavior_logprobs};
        const auto mask = LossMask::ones(b);
        LossConfig cfg;
        const double base = surrogate_loss(b, adv, lp, mask, cfg).loss;
        cfg.kl_coef = 0.1;
        std::vector<std::vector<double>> kl{{0, 0}, {0, 0}};
        CHECK(surrogate_loss(b, adv, lp, mask, cfg, kl).loss == base);
        kl = {{0.5, 0.5}, {0.5, 0.5}};
        CHECK(surrogate_loss(b, adv, lp, mask, cfg, kl).loss == doctest::Approx(base + 0.05).epsilon(1e-12));
    }
}

TEST_CASE("symmetric clipping reduces to the single-epsilon objective") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const auto f = frozen_batch(rng, 2, 4);
        const double eps = 0.1 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
        LossConfig cfg{{eps, eps}, Aggregation::TokenLevel, 0.0};
        const auto r = surrogate_loss(f.batch, f.adv, f.lp, f.mask, cfg);
        std::vector<std::vector<double>> terms;
        for (std::size_t i = 0; i < f.adv.size(); ++i) {
            std::vector<double> row;
            for (std::size_t t = 0; t < f.adv[i].size(); ++t) {
                const double ratio = std::exp(f.lp[i][t] - f.batch.trajectory(i).behavior_logprobs[t]);
                const double c = std::min(std::max(ratio, 1 - eps), 1 + eps);
                row.push_back(std::min(ratio * f.adv[i][t], c * f.adv[i][t]));
            }
            terms.push_back(row);
        }
        CHECK(r.loss == doctest::Approx(-oracle::aggregate(terms, f.mask.weights, true)).epsilon(1e-12));
    }
}

TEST_CASE("clip fractions are monotone in the bounds") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = frozen_batch(rng, 4, 8);
        std::size_t prev_upper = SIZE_MAX;
        for (double hi : {0.20, 0.24, 0.28, 0.32}) {
            const auto r = surrogate_loss(f.batch, f.adv, f.lp, f.mask, {{0.2, hi}, Aggregation::TokenLevel, 0.0});
            CHECK(r.events.upper() <= prev_upper);
            CHECK(r.events.events().size() <= r.diagnostics.active_tokens);
            prev_upper = r.events.upper();
        }
        std::size_t prev_lower = SIZE_MAX;
        for (double lo : {0.10, 0.15, 0.20, 0.25}) {
            const auto r = surrogate_loss(f.batch, f.adv, f.lp, f.mask, {{lo, 0.3}, Aggregation::TokenLevel, 0.0});
            CHECK(r.events.lower() <= prev_lower);
            prev_lower = r.events.lower();
        }
    }
}

TEST_CASE("dloss_dlogprob matches finite differences") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto f = frozen_batch(rng, 2, 3);
        for (auto& w : f.mask.weights)
            for (auto& x : w) x = static_cast<std::uint8_t>(rng() % 5 != 0);
        for (auto agg : {Aggregation::TokenLevel, Aggregation::SequenceLevel}) {
            LossConfig cfg{kDapo, agg, 0.0};
            const auto r = surrogate_loss(f.batch, f.adv, f.lp, f.mask, cfg);
            if (r.diagnostics.all_masked) continue;
            for (std::size_t i = 0; i < f.lp.size(); ++i) {
                for (std::size_t t = 0; t < f.lp[i].size(); ++t) {
                    const double h = 1e-6;
                    auto up = f.lp, dn = f.lp;
                    up[i][t] += h;
                    dn[i][t] -= h;
                    const double fd = (surrogate_loss(f.batch, f.adv, up, f.mask, cfg).loss -
                                       surrogate_loss(f.batch, f.adv, dn, f.mask, cfg).loss) /
                                      (2 * h);
                    // Skip tokens sitting on a clip boundary, where the loss has a kink.
                    const double ratio = std::exp(f.lp[i][t] - f.batch.trajectory(i).behavior_logprobs[t]);
                    if (std::abs(ratio - 0.8) < 1e-4 || std::abs(ratio - 1.28) < 1e-4) continue;
                    CHECK(r.dloss_dlogprob[i][t] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
                }
            }
        }
    }
}

TEST_CASE("clip event log") {
    ClipEventLog a, b;
    a.record({3, ClipDirection::Upper, 1.5, 0, 0});
    a.record({3, ClipDirection::Lower, 0.5, 0, 1});
    b.record({5, ClipDirection::Upper, 1.4, 1, 0});
    a.merge(b);
    CHECK(a.events().size() == 3);
    CHECK(a.upper() == 2);
    CHECK(a.lower() == 1);
    CHECK(a.per_token().at(3).total() == 2);
    CHECK(a.events().back().token == 5);
    CHECK(parse_aggregation("seq") == Aggregation::SequenceLevel);
    CHECK(to_string(ClipDirection::Lower) == "lower");
}
