/* Copyright (c) 2026, cfpo developers
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the cfpo policy-optimization lab.
 *
 * Every function returns a cfpo_status. On failure a human-readable message
 * is available from cfpo_last_error() on the calling thread until the next
 * call into the library. Strings returned through `char**` out-parameters
 * are owned by the caller and must be released with cfpo_string_free().
 */
#ifndef CFPO_CFPO_H
#define CFPO_CFPO_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CFPO_BUILDING_LIBRARY)
#    define CFPO_API __declspec(dllexport)
#  else
#    define CFPO_API __declspec(dllimport)
#  endif
#else
#  define CFPO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cfpo_status {
    CFPO_OK = 0,
    CFPO_ERR_VALIDATION = 1, /* bad input, config or arguments */
    CFPO_ERR_RUNTIME = 2,    /* I/O failures, non-finite gradients, ... */
    CFPO_ERR_NULL = 3        /* a required pointer argument was NULL */
} cfpo_status;

typedef struct cfpo_config cfpo_config;
typedef struct cfpo_trainer cfpo_trainer;

/* Mirrors one metrics.jsonl record. */
typedef struct cfpo_metrics {
    int64_t iter;
    double train_acc;
    double mean_len;
    double entropy;
    double clip_frac_high;
    double clip_frac_low;
    double grad_norm;
    double repeat_ratio;
    double degenerate_group_frac;
    double reward_std_batch;
    double loss;
} cfpo_metrics;

CFPO_API const char* cfpo_version(void);
CFPO_API const char* cfpo_last_error(void);
CFPO_API void cfpo_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

CFPO_API cfpo_status cfpo_config_create(cfpo_config** out);
CFPO_API void cfpo_config_destroy(cfpo_config* cfg);
/* vanilla, grpo, dapo-lite or litepo; later assignments override it. */
CFPO_API cfpo_status cfpo_config_apply_preset(cfpo_config* cfg, const char* name);
CFPO_API cfpo_status cfpo_config_load_file(cfpo_config* cfg, const char* path);
CFPO_API cfpo_status cfpo_config_set(cfpo_config* cfg, const char* key, const char* value);
/* "key=value" form of cfpo_config_set. */
CFPO_API cfpo_status cfpo_config_set_assignment(cfpo_config* cfg, const char* assignment);
/* Resolved value of one key. */
CFPO_API cfpo_status cfpo_config_get(const cfpo_config* cfg, const char* key, char** out);
/* Canonical effective config (the run directory's config.txt). */
CFPO_API cfpo_status cfpo_config_dump(const cfpo_config* cfg, char** out);
/* Documentation of every key: "key<TAB>description" lines. */
CFPO_API cfpo_status cfpo_config_keys(char** out);

/* ---- dataset ---------------------------------------------------------- */

/* tier: easy, medium or hard. Refuses to overwrite unless force != 0. */
CFPO_API cfpo_status cfpo_gen_data(const char* tier, int64_t n, uint64_t seed, const char* out_path, int force);

/* ---- step-wise training ----------------------------------------------- */

CFPO_API cfpo_status cfpo_trainer_create(const cfpo_config* cfg, cfpo_trainer** out);
CFPO_API void cfpo_trainer_destroy(cfpo_trainer* t);
CFPO_API cfpo_status cfpo_trainer_step(cfpo_trainer* t, cfpo_metrics* out);
/* Greedy held-out accuracy and mean length; does not modify the policy. */
CFPO_API cfpo_status cfpo_trainer_evaluate(const cfpo_trainer* t, double* accuracy, double* mean_len);
CFPO_API cfpo_status cfpo_trainer_save_checkpoint(const cfpo_trainer* t, const char* path);
CFPO_API cfpo_status cfpo_trainer_params_fingerprint(const cfpo_trainer* t, uint64_t* out);
/* Last iteration's sampled batch in rollout-log form (one JSON line per group). */
CFPO_API cfpo_status cfpo_trainer_last_rollout(const cfpo_trainer* t, char** out);
CFPO_API cfpo_status cfpo_metrics_to_json(const cfpo_metrics* m, char** out);

/* ---- run-level commands ----------------------------------------------- */

typedef void (*cfpo_progress_fn)(const cfpo_metrics* m, void* user);

/* Full run into out_dir (config.txt, metrics.jsonl, eval.jsonl,
 * clip_events.jsonl, checkpoints/). progress may be NULL. */
CFPO_API cfpo_status cfpo_run_train(const cfpo_config* cfg, const char* out_dir, int force,
                                    cfpo_progress_fn progress, void* user);
/* CSV token,glyph,upper,lower of the top_k most clipped tokens. */
CFPO_API cfpo_status cfpo_inspect_clip(const char* run_dir, int top_k, char** csv_out);
/* Summary CSV, one row per run dir. Missing metrics produce an "invalid" row
 * and a warning line in *warnings_out (may be NULL). */
CFPO_API cfpo_status cfpo_report(const char* const* run_dirs, size_t n, char** csv_out, char** warnings_out);
/* Runs every grid cell and writes out_root/summary.csv. overrides holds
 * n_overrides "key=value" strings applied to every cell. */
CFPO_API cfpo_status cfpo_ablate(const char* grid_path, const char* out_root, int force, int jobs,
                                 const char* const* overrides, size_t n_overrides, char** summary_out);
/* Per-batch CSV summary of a rollout log. */
CFPO_API cfpo_status cfpo_audit_rollouts(const char* log_path, char** csv_out);

#ifdef __cplusplus
}
#endif

#endif /* CFPO_CFPO_H */
