// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/cfpo.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "cfpo/config.hpp"
#include "cfpo/errors.hpp"
#include "cfpo/run.hpp"
#include "cfpo/trainer.hpp"

struct cfpo_config {
    cfpo::ConfigBuilder builder;
};

struct cfpo_trainer {
    std::unique_ptr<cfpo::Trainer> trainer;
};

namespace {

thread_local std::string g_last_error;

template <class Fn>
cfpo_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return CFPO_OK;
    } catch (const cfpo::ValidationError& e) {
        g_last_error = e.what();
        return CFPO_ERR_VALIDATION;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CFPO_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return CFPO_ERR_RUNTIME;
    }
}

cfpo_status null_arg(const char* what) {
    g_last_error = std::string("null argument: ") + what;
    return CFPO_ERR_NULL;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

cfpo_metrics to_c(const cfpo::MetricsRecord& m) {
    return {m.iter,         m.train_acc,    m.mean_len,     m.entropy,
            m.clip_frac_high, m.clip_frac_low, m.grad_norm,  m.repeat_ratio,
            m.degenerate_group_frac, m.reward_std_batch, m.loss};
}

cfpo::MetricsRecord from_c(const cfpo_metrics& m) {
    return {m.iter,         m.train_acc,    m.mean_len,     m.entropy,
            m.clip_frac_high, m.clip_frac_low, m.grad_norm,  m.repeat_ratio,
            m.degenerate_group_frac, m.reward_std_batch, m.loss};
}

} // namespace

extern "C" {

const char* cfpo_version(void) { return "0.1.0"; }

const char* cfpo_last_error(void) { return g_last_error.c_str(); }

void cfpo_string_free(char* s) { std::free(s); }

cfpo_status cfpo_config_create(cfpo_config** out) {
    if (!out) return null_arg("out");
    return guarded([&] { *out = new cfpo_config(); });
}

void cfpo_config_destroy(cfpo_config* cfg) { delete cfg; }

cfpo_status cfpo_config_apply_preset(cfpo_config* cfg, const char* name) {
    if (!cfg) return null_arg("cfg");
    if (!name) return null_arg("name");
    return guarded([&] { cfg->builder.apply_preset(name); });
}

cfpo_status cfpo_config_load_file(cfpo_config* cfg, const char* path) {
    if (!cfg) return null_arg("cfg");
    if (!path) return null_arg("path");
    return guarded([&] { cfg->builder.load_file(path); });
}

cfpo_status cfpo_config_set(cfpo_config* cfg, const char* key, const char* value) {
    if (!cfg) return null_arg("cfg");
    if (!key || !value) return null_arg("key/value");
    return guarded([&] { cfg->builder.set(key, value); });
}

cfpo_status cfpo_config_set_assignment(cfpo_config* cfg, const char* assignment) {
    if (!cfg) return null_arg("cfg");
    if (!assignment) return null_arg("assignment");
    return guarded([&] { cfg->builder.set_assignment(assignment); });
}

cfpo_status cfpo_config_get(const cfpo_config* cfg, const char* key, char** out) {
    if (!cfg || !key || !out) return null_arg("cfg/key/out");
    return guarded([&] { *out = dup_string(cfpo::get_config_value(cfg->builder.build(), key)); });
}

cfpo_status cfpo_config_dump(const cfpo_config* cfg, char** out) {
    if (!cfg || !out) return null_arg("cfg/out");
    return guarded([&] { *out = dup_string(cfpo::dump_config(cfg->builder.build())); });
}

cfpo_status cfpo_config_keys(char** out) {
    if (!out) return null_arg("out");
    return guarded([&] {
        std::string s;
        for (const auto& k : cfpo::config_keys()) s += k.key + "\t" + k.description + "\n";
        *out = dup_string(s);
    });
}

cfpo_status cfpo_gen_data(const char* tier, int64_t n, uint64_t seed, const char* out_path, int force) {
    if (!tier || !out_path) return null_arg("tier/out_path");
    return guarded([&] {
        if (n < 1) throw cfpo::ValidationError("--n must be >= 1");
        cfpo::gen_data(cfpo::parse_tier(tier), static_cast<std::size_t>(n), seed, out_path, force != 0);
    });
}

cfpo_status cfpo_trainer_create(const cfpo_config* cfg, cfpo_trainer** out) {
    if (!cfg || !out) return null_arg("cfg/out");
    return guarded([&] {
        cfpo::TrainConfig c = cfg->builder.build();
        if (c.data_path.empty()) throw cfpo::ValidationError("data.path is not set");
        auto data = cfpo::read_dataset(c.data_path, cfpo::Vocab(c.vocab_glyphs));
        auto t = std::make_unique<cfpo_trainer>();
        t->trainer = std::make_unique<cfpo::Trainer>(std::move(c), std::move(data));
        *out = t.release();
    });
}

void cfpo_trainer_destroy(cfpo_trainer* t) { delete t; }

cfpo_status cfpo_trainer_step(cfpo_trainer* t, cfpo_metrics* out) {
    if (!t || !out) return null_arg("trainer/out");
    return guarded([&] { *out = to_c(t->trainer->run_iteration()); });
}

cfpo_status cfpo_trainer_evaluate(const cfpo_trainer* t, double* accuracy, double* mean_len) {
    if (!t || !accuracy || !mean_len) return null_arg("trainer/accuracy/mean_len");
    return guarded([&] {
        const auto r = t->trainer->evaluate_heldout();
        *accuracy = r.accuracy;
        *mean_len = r.mean_len;
    });
}

cfpo_status cfpo_trainer_save_checkpoint(const cfpo_trainer* t, const char* path) {
    if (!t || !path) return null_arg("trainer/path");
    return guarded([&] { cfpo::save_checkpoint(path, t->trainer->params(), t->trainer->rng_state()); });
}

cfpo_status cfpo_trainer_params_fingerprint(const cfpo_trainer* t, uint64_t* out) {
    if (!t || !out) return null_arg("trainer/out");
    return guarded([&] { *out = t->trainer->params().fingerprint(); });
}

cfpo_status cfpo_trainer_last_rollout(const cfpo_trainer* t, char** out) {
    if (!t || !out) return null_arg("trainer/out");
    return guarded([&] {
        std::string s;
        for (const auto& line : cfpo::rollout_to_json_lines(t->trainer->last_diagnostics().sampled)) s += line + "\n";
        *out = dup_string(s);
    });
}

cfpo_status cfpo_metrics_to_json(const cfpo_metrics* m, char** out) {
    if (!m || !out) return null_arg("metrics/out");
    return guarded([&] { *out = dup_string(cfpo::metrics_to_json(from_c(*m))); });
}

cfpo_status cfpo_run_train(const cfpo_config* cfg, const char* out_dir, int force, cfpo_progress_fn progress,
                           void* user) {
    if (!cfg || !out_dir) return null_arg("cfg/out_dir");
    return guarded([&] {
        cfpo::ProgressFn fn;
        if (progress) {
            fn = [progress, user](const cfpo::MetricsRecord& m) {
                const cfpo_metrics c = to_c(m);
                progress(&c, user);
            };
        }
        cfpo::run_train(cfg->builder.build(), out_dir, force != 0, fn);
    });
}

cfpo_status cfpo_inspect_clip(const char* run_dir, int top_k, char** csv_out) {
    if (!run_dir || !csv_out) return null_arg("run_dir/csv_out");
    return guarded([&] { *csv_out = dup_string(cfpo::inspect_clip(run_dir, top_k)); });
}

cfpo_status cfpo_report(const char* const* run_dirs, size_t n, char** csv_out, char** warnings_out) {
    if (!run_dirs || !csv_out) return null_arg("run_dirs/csv_out");
    return guarded([&] {
        std::vector<std::filesystem::path> dirs;
        for (size_t i = 0; i < n; ++i) {
            if (!run_dirs[i]) throw cfpo::ValidationError("null run directory");
            dirs.emplace_back(run_dirs[i]);
        }
        const auto rep = cfpo::report(dirs);
        std::string warnings;
        for (const auto& w : rep.warnings) warnings += w + "\n";
        *csv_out = dup_string(rep.csv);
        if (warnings_out) *warnings_out = dup_string(warnings);
    });
}

cfpo_status cfpo_ablate(const char* grid_path, const char* out_root, int force, int jobs,
                        const char* const* overrides, size_t n_overrides, char** summary_out) {
    if (!grid_path || !out_root) return null_arg("grid_path/out_root");
    if (n_overrides > 0 && !overrides) return null_arg("overrides");
    return guarded([&] {
        std::vector<std::pair<std::string, std::string>> ov;
        for (size_t i = 0; i < n_overrides; ++i) {
            const std::string a = overrides[i] ? overrides[i] : "";
            const auto eq = a.find('=');
            if (eq == std::string::npos) throw cfpo::ValidationError("expected key=value, got \"" + a + "\"");
            ov.emplace_back(a.substr(0, eq), a.substr(eq + 1));
        }
        const auto cells = cfpo::load_grid(grid_path);
        const auto csv = cfpo::ablate(cells, out_root, force != 0, jobs, ov);
        if (summary_out) *summary_out = dup_string(csv);
    });
}

cfpo_status cfpo_audit_rollouts(const char* log_path, char** csv_out) {
    if (!log_path || !csv_out) return null_arg("log_path/csv_out");
    return guarded([&] { *csv_out = dup_string(cfpo::audit_rollouts(log_path)); });
}

} // extern "C"
