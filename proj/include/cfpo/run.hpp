// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
//
// Run directories and the operations behind each CLI subcommand.
//
// A run directory holds:
//   config.txt         effective config (dump_config of the resolved config)
//   metrics.jsonl      one MetricsRecord per iteration
//   eval.jsonl         {"iter", "accuracy", "mean_len"} per held-out evaluation
//   clip_events.jsonl  {"iter", "token", "dir", "ratio"} per clip event
//   rollouts.jsonl     rollout log (only with run.log_rollouts = true)
//   checkpoints/       step_<iter>.ckpt every run.save_steps, plus final.ckpt
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfpo/config.hpp"
#include "cfpo/env.hpp"
#include "cfpo/trainer.hpp"

namespace cfpo {

namespace fs = std::filesystem;

/// Refuses an existing non-empty directory unless `force`, in which case it
/// is cleared. Creates the directory.
void prepare_output_dir(const fs::path& dir, bool force);

void gen_data(Tier tier, std::size_t n, std::uint64_t seed, const fs::path& out, bool force);

using ProgressFn = std::function<void(const MetricsRecord&)>;

/// Full training run into `out_dir`. Returns the metrics stream.
std::vector<MetricsRecord> run_train(const TrainConfig& cfg, const fs::path& out_dir, bool force,
                                     const ProgressFn& progress = {});

std::vector<MetricsRecord> read_metrics(const fs::path& path);

struct ClipRow {
    TokenId token = 0;
    char glyph = '?';
    std::size_t upper = 0;
    std::size_t lower = 0;
};
/// Per-token clip counts sorted by total descending, ties by token id.
std::vector<ClipRow> clip_table(const fs::path& run_dir, int top_k);
/// CSV with header token,glyph,upper,lower.
std::string inspect_clip(const fs::path& run_dir, int top_k);

inline constexpr std::string_view kSummaryHeader =
    "run,name,peak_acc,final_acc,mean_entropy,clip_frac_high,clip_frac_low,repeat_ratio_mean";

struct ReportResult {
    std::string csv;
    std::vector<std::string> warnings;
};
ReportResult report(std::span<const fs::path> run_dirs);

struct AblationCell {
    std::string name;
    std::vector<std::pair<std::string, std::string>> assignments;  // base first, then axis values
};

/// A grid file uses the config grammar: `grid.<key> = v1, v2, ...` declares an
/// axis, every other line is a base assignment shared by all cells.
std::vector<AblationCell> parse_grid(std::string_view text);
std::vector<AblationCell> load_grid(const fs::path& path);

/// Runs every cell into out_root/<cell name>/ and writes out_root/summary.csv.
/// Returns the summary CSV.
std::string ablate(std::span<const AblationCell> cells, const fs::path& out_root, bool force, int jobs,
                   const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Per-batch CSV summary of a rollout log: policy_version,groups,trajectories,
/// mean_reward,truncated,repeat_ratio,mean_len.
std::string audit_rollouts(const fs::path& log_path, const FilterConfig& cfg = {});

} // namespace cfpo
