// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// cfpo command-line tool. Talks to the library exclusively through cfpo.h.
//
// Exit codes: 0 success, 1 validation / usage error, 2 runtime failure.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfpo/cfpo.h"

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int exit_code(cfpo_status s) {
    switch (s) {
    case CFPO_OK: return 0;
    case CFPO_ERR_VALIDATION: return kExitValidation;
    default: return kExitRuntime;
    }
}

int fail(cfpo_status s) {
    std::cerr << "error: " << cfpo_last_error() << "\n";
    return exit_code(s);
}

struct CString {
    char* p = nullptr;
    ~CString() { cfpo_string_free(p); }
    std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ConfigHandle {
    cfpo_config* p = nullptr;
    ~ConfigHandle() { cfpo_config_destroy(p); }
};

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
    std::vector<const char*> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.c_str());
    return out;
}

void print_progress(const cfpo_metrics* m, void*) {
    std::fprintf(stderr, "iter %4lld  acc %.3f  len %.2f  ent %.3f  clip+ %.4f  clip- %.4f  |g| %.3g\n",
                 static_cast<long long>(m->iter), m->train_acc, m->mean_len, m->entropy, m->clip_frac_high,
                 m->clip_frac_low, m->grad_norm);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cfpo: critic-free policy optimization lab on a toy arithmetic task"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cfpo_version()));

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate an arithmetic dataset (JSONL)");
    std::string tier;
    std::int64_t n = 2000;
    std::uint64_t data_seed = 1;
    std::string data_out;
    bool gen_force = false;
    gen->add_option("--tier", tier, "easy, medium or hard")->required();
    gen->add_option("--n", n, "number of tasks")->capture_default_str();
    gen->add_option("--seed", data_seed, "generator seed")->capture_default_str();
    gen->add_option("--out", data_out, "output file (default <tier>.jsonl)");
    gen->add_flag("--force", gen_force, "overwrite an existing file");

    // train
    auto* train = app.add_subcommand("train", "Run one training job into a run directory");
    std::string config_path, preset, train_data, train_out;
    std::optional<std::uint64_t> train_seed;
    std::vector<std::string> sets;
    bool train_force = false, quiet = false;
    train->add_option("--config", config_path, "config file (key = value lines)");
    train->add_option("--preset", preset, "vanilla, grpo, dapo-lite or litepo");
    train->add_option("--data", train_data, "dataset file")->required();
    train->add_option("--seed", train_seed, "run seed");
    train->add_option("--set", sets, "override, key=value (repeatable)");
    train->add_option("--out", train_out, "run directory")->required();
    train->add_flag("--force", train_force, "clear an existing run directory");
    train->add_flag("--quiet,-q", quiet, "no per-iteration progress on stderr");

    // inspect-clip
    auto* clip = app.add_subcommand("inspect-clip", "Most frequently clipped tokens of a run (CSV)");
    std::string clip_dir;
    int top_k = 20;
    clip->add_option("run_dir", clip_dir, "run directory")->required();
    clip->add_option("--top-k", top_k, "rows to print")->capture_default_str();

    // report
    auto* rep = app.add_subcommand("report", "Compare runs (CSV)");
    std::vector<std::string> report_dirs;
    rep->add_option("run_dirs", report_dirs, "run directories")->required();

    // ablate
    auto* abl = app.add_subcommand("ablate", "Run every cell of an ablation grid");
    std::string grid_path, ablate_out;
    int jobs = 1;
    std::vector<std::string> ablate_sets;
    bool ablate_force = false;
    abl->add_option("grid", grid_path, "grid spec file")->required();
    abl->add_option("--out", ablate_out, "output root")->required();
    abl->add_option("--jobs,-j", jobs, "cells run in parallel")->capture_default_str();
    abl->add_option("--set", ablate_sets, "override applied to every cell, key=value (repeatable)");
    abl->add_flag("--force", ablate_force, "clear existing cell directories");

    // audit
    auto* aud = app.add_subcommand("audit", "Summarize a rollout log (CSV)");
    std::string audit_log;
    aud->add_option("rollout_log", audit_log, "rollouts.jsonl")->required();

    // config-keys
    auto* keys = app.add_subcommand("config-keys", "List every config key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    if (gen->parsed()) {
        if (data_out.empty()) data_out = tier + ".jsonl";
        const auto s = cfpo_gen_data(tier.c_str(), n, data_seed, data_out.c_str(), gen_force ? 1 : 0);
        if (s != CFPO_OK) return fail(s);
        return 0;
    }

    if (train->parsed()) {
        ConfigHandle cfg;
        cfpo_status s = cfpo_config_create(&cfg.p);
        if (s == CFPO_OK && !config_path.empty()) s = cfpo_config_load_file(cfg.p, config_path.c_str());
        if (s == CFPO_OK && !preset.empty()) s = cfpo_config_apply_preset(cfg.p, preset.c_str());
        if (s == CFPO_OK) s = cfpo_config_set(cfg.p, "data.path", train_data.c_str());
        if (s == CFPO_OK && train_seed) s = cfpo_config_set(cfg.p, "run.seed", std::to_string(*train_seed).c_str());
        for (const auto& a : sets) {
            if (s != CFPO_OK) break;
            s = cfpo_config_set_assignment(cfg.p, a.c_str());
        }
        if (s == CFPO_OK)
            s = cfpo_run_train(cfg.p, train_out.c_str(), train_force ? 1 : 0, quiet ? nullptr : print_progress,
                               nullptr);
        if (s != CFPO_OK) return fail(s);
        return 0;
    }

    if (clip->parsed()) {
        CString csv;
        const auto s = cfpo_inspect_clip(clip_dir.c_str(), top_k, &csv.p);
        if (s != CFPO_OK) return fail(s);
        std::cout << csv.str();
        return 0;
    }

    if (rep->parsed()) {
        CString csv, warnings;
        const auto dirs = c_strings(report_dirs);
        const auto s = cfpo_report(dirs.data(), dirs.size(), &csv.p, &warnings.p);
        if (s != CFPO_OK) return fail(s);
        std::cerr << warnings.str();
        std::cout << csv.str();
        return 0;
    }

    if (abl->parsed()) {
        CString csv;
        const auto ov = c_strings(ablate_sets);
        const auto s = cfpo_ablate(grid_path.c_str(), ablate_out.c_str(), ablate_force ? 1 : 0, jobs, ov.data(),
                                   ov.size(), &csv.p);
        if (s != CFPO_OK) return fail(s);
        std::cout << csv.str();
        return 0;
    }

    if (aud->parsed()) {
        CString csv;
        const auto s = cfpo_audit_rollouts(audit_log.c_str(), &csv.p);
        if (s != CFPO_OK) return fail(s);
        std::cout << csv.str();
        return 0;
    }

    if (keys->parsed()) {
        CString txt;
        const auto s = cfpo_config_keys(&txt.p);
        if (s != CFPO_OK) return fail(s);
        std::cout << txt.str();
        return 0;
    }
    return 0;
}
