// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/run.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cfpo/errors.hpp"
#include "cfpo/filters.hpp"

namespace cfpo {

namespace {

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// Value of `key` in a dumped config.txt, empty when absent.
std::string config_txt_value(const fs::path& run_dir, std::string_view key) {
    std::ifstream in(run_dir / "config.txt");
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        if (trim(std::string_view(line).substr(0, eq)) == key) return trim(std::string_view(line).substr(eq + 1));
    }
    return {};
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string sanitize_name(std::string_view s) {
    std::string out;
    for (char c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
        out += ok ? c : '-';
    }
    return out;
}

} // namespace

void prepare_output_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw ValidationError(dir.string() + " already exists; pass --force to overwrite");
            fs::remove_all(dir);
        }
    }
    fs::create_directories(dir);
}

void gen_data(Tier tier, std::size_t n, std::uint64_t seed, const fs::path& out, bool force) {
    if (fs::exists(out) && !force) throw ValidationError(out.string() + " already exists; pass --force to overwrite");
    const Vocab vocab;
    const auto tasks = gen_dataset(tier, n, seed, vocab);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_dataset(out, tasks, vocab);
}

std::vector<MetricsRecord> run_train(const TrainConfig& cfg, const fs::path& out_dir, bool force,
                                     const ProgressFn& progress) {
    cfg.validate();
    if (cfg.data_path.empty()) throw ValidationError("data.path is not set");
    if (!fs::exists(cfg.data_path)) throw ValidationError("dataset " + cfg.data_path + " does not exist");
    const Vocab vocab(cfg.vocab_glyphs);
    auto dataset = read_dataset(cfg.data_path, vocab);

    prepare_output_dir(out_dir, force);
    {
        auto out = open_out(out_dir / "config.txt");
        out << dump_config(cfg);
    }
    fs::create_directories(out_dir / "checkpoints");

    Trainer trainer(cfg, std::move(dataset));
    auto metrics_out = open_out(out_dir / "metrics.jsonl");
    auto eval_out = open_out(out_dir / "eval.jsonl");
    auto clip_out = open_out(out_dir / "clip_events.jsonl");
    std::ofstream rollout_out;
    if (cfg.log_rollouts) rollout_out = open_out(out_dir / "rollouts.jsonl");

    std::vector<MetricsRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.max_steps));
    for (int step = 0; step < cfg.max_steps; ++step) {
        const MetricsRecord m = trainer.run_iteration();
        records.push_back(m);
        metrics_out << metrics_to_json(m) << '\n';
        const auto& diag = trainer.last_diagnostics();
        if (cfg.log_clip_events) {
            for (const auto& e : diag.clip_events.events()) {
                nlohmann::ordered_json j;
                j["iter"] = m.iter;
                j["token"] = e.token;
                j["dir"] = to_string(e.dir);
                j["ratio"] = e.ratio;
                clip_out << j.dump() << '\n';
            }
        }
        if (cfg.log_rollouts) {
            for (const auto& line : rollout_to_json_lines(diag.sampled)) rollout_out << line << '\n';
        }
        if (cfg.eval_steps > 0 && m.iter % cfg.eval_steps == 0) {
            const EvalResult ev = trainer.evaluate_heldout();
            nlohmann::ordered_json j;
            j["iter"] = m.iter;
            j["accuracy"] = ev.accuracy;
            j["mean_len"] = ev.mean_len;
            eval_out << j.dump() << '\n';
        }
        if (cfg.save_steps > 0 && m.iter % cfg.save_steps == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06lld.ckpt", static_cast<long long>(m.iter));
            save_checkpoint(out_dir / "checkpoints" / name, trainer.params(), trainer.rng_state());
        }
        if (progress) progress(m);
    }
    save_checkpoint(out_dir / "checkpoints" / "final.ckpt", trainer.params(), trainer.rng_state());
    if (!metrics_out || !eval_out || !clip_out) throw std::runtime_error("failed writing run outputs");
    return records;
}

std::vector<MetricsRecord> read_metrics(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.push_back(metrics_from_json(line));
    }
    return out;
}

std::vector<ClipRow> clip_table(const fs::path& run_dir, int top_k) {
    if (top_k < 1) throw ValidationError("top_k must be >= 1");
    const fs::path path = run_dir / "clip_events.jsonl";
    if (!fs::exists(path)) throw ValidationError(path.string() + " does not exist");
    std::string glyphs = config_txt_value(run_dir, "vocab.glyphs");
    const Vocab vocab(glyphs.empty() ? std::string(Vocab::kDefaultGlyphs) : glyphs);

    std::map<TokenId, ClipRow> rows;
    std::ifstream in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const TokenId tok = j.at("token").get<TokenId>();
            const std::string dir = j.at("dir").get<std::string>();
            auto& row = rows[tok];
            row.token = tok;
            row.glyph = vocab.glyph(tok);
            if (dir == "upper") ++row.upper;
            else if (dir == "lower") ++row.lower;
            else throw ValidationError("dir must be upper or lower");
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    std::vector<ClipRow> out;
    for (const auto& [tok, row] : rows) out.push_back(row);
    std::stable_sort(out.begin(), out.end(), [](const ClipRow& a, const ClipRow& b) {
        const auto ta = a.upper + a.lower, tb = b.upper + b.lower;
        if (ta != tb) return ta > tb;
        return a.token < b.token;
    });
    if (out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
    return out;
}

std::string inspect_clip(const fs::path& run_dir, int top_k) {
    std::string csv = "token,glyph,upper,lower\n";
    for (const auto& r : clip_table(run_dir, top_k)) {
        csv += std::to_string(r.token) + "," + csv_field(std::string(1, r.glyph)) + "," + std::to_string(r.upper) +
               "," + std::to_string(r.lower) + "\n";
    }
    return csv;
}

ReportResult report(std::span<const fs::path> run_dirs) {
    if (run_dirs.empty()) throw ValidationError("report needs at least one run directory");
    ReportResult res;
    res.csv = std::string(kSummaryHeader) + "\n";
    for (const auto& dir : run_dirs) {
        const std::string name = config_txt_value(dir, "run.name");
        const std::string prefix = csv_field(dir.string()) + "," + csv_field(name) + ",";
        std::vector<MetricsRecord> metrics;
        try {
            metrics = read_metrics(dir / "metrics.jsonl");
        } catch (const std::exception& e) {
            res.warnings.push_back(dir.string() + ": " + e.what());
        }
        if (metrics.empty()) {
            if (res.warnings.empty() || res.warnings.back().rfind(dir.string(), 0) != 0) {
                res.warnings.push_back(dir.string() + ": no metrics records");
            }
            res.csv += prefix + "invalid,invalid,invalid,invalid,invalid,invalid\n";
            continue;
        }
        // Peak/final come from held-out evaluation when present, else from train_acc.
        std::vector<double> acc;
        std::ifstream eval_in(dir / "eval.jsonl");
        std::string line;
        while (eval_in && std::getline(eval_in, line)) {
            if (trim(line).empty()) continue;
            try {
                acc.push_back(nlohmann::json::parse(line).at("accuracy").get<double>());
            } catch (const std::exception& e) {
                res.warnings.push_back(dir.string() + "/eval.jsonl: " + e.what());
            }
        }
        if (acc.empty()) {
            for (const auto& m : metrics) acc.push_back(m.train_acc);
        }
        double ent = 0.0, hi = 0.0, lo = 0.0, rep = 0.0;
        for (const auto& m : metrics) {
            ent += m.entropy;
            hi += m.clip_frac_high;
            lo += m.clip_frac_low;
            rep += m.repeat_ratio;
        }
        const double n = static_cast<double>(metrics.size());
        res.csv += prefix + format_double(*std::max_element(acc.begin(), acc.end())) + "," +
                   format_double(acc.back()) + "," + format_double(ent / n) + "," + format_double(hi / n) + "," +
                   format_double(lo / n) + "," + format_double(rep / n) + "\n";
    }
    return res;
}

std::vector<AblationCell> parse_grid(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> base;
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("grid:" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.rfind("grid.", 0) == 0) {
            key = key.substr(5);
            if (!canonical_key(key)) throw ValidationError("grid axis has unknown key \"" + key + "\"");
            std::vector<std::string> values;
            std::stringstream vs(value);
            for (std::string v; std::getline(vs, v, ',');) {
                v = trim(v);
                if (!v.empty()) values.push_back(v);
            }
            if (values.empty()) throw ValidationError("grid axis " + key + " has no values");
            axes.emplace_back(key, std::move(values));
        } else {
            if (!canonical_key(key)) throw ValidationError("grid base has unknown key \"" + key + "\"");
            base.emplace_back(key, value);
        }
    }

    std::vector<AblationCell> cells{AblationCell{"", base}};
    for (const auto& [key, values] : axes) {
        std::vector<AblationCell> next;
        for (const auto& cell : cells) {
            for (const auto& v : values) {
                AblationCell c = cell;
                c.name += (c.name.empty() ? "" : "__") + sanitize_name(key + "-" + v);
                c.assignments.emplace_back(key, v);
                next.push_back(std::move(c));
            }
        }
        cells = std::move(next);
    }
    if (axes.empty()) cells.front().name = "base";

    std::set<std::string> seen;
    for (const auto& c : cells) {
        if (!seen.insert(c.name).second) throw ValidationError("duplicate grid cell name \"" + c.name + "\"");
    }
    // Every cell must resolve to a valid config.
    for (const auto& c : cells) {
        ConfigBuilder b;
        for (const auto& [k, v] : c.assignments) b.set(k, v);
        try {
            b.build();
        } catch (const ValidationError& e) {
            throw ValidationError("grid cell " + c.name + ": " + e.what());
        }
    }
    return cells;
}

std::vector<AblationCell> load_grid(const fs::path& path) {
    if (!fs::exists(path)) throw ValidationError("grid file " + path.string() + " does not exist");
    return parse_grid(read_text(path));
}

std::string ablate(std::span<const AblationCell> cells, const fs::path& out_root, bool force, int jobs,
                   const std::vector<std::pair<std::string, std::string>>& overrides) {
    if (cells.empty()) throw ValidationError("grid has no cells");
    std::vector<TrainConfig> configs;
    for (const auto& c : cells) {
        ConfigBuilder b;
        for (const auto& [k, v] : c.assignments) b.set(k, v);
        for (const auto& [k, v] : overrides) b.set(k, v);
        if (!c.name.empty()) b.set("run.name", c.name);
        configs.push_back(b.build());
    }
    prepare_output_dir(out_root, force);

    std::vector<fs::path> dirs;
    for (const auto& c : cells) dirs.push_back(out_root / c.name);
    std::vector<std::string> failures(cells.size());
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= cells.size()) return;
                i = next++;
            }
            try {
                run_train(configs[i], dirs[i], true);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    const std::size_t n_workers = std::clamp<std::size_t>(jobs < 1 ? 1 : static_cast<std::size_t>(jobs), 1, cells.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    const ReportResult rep = report(dirs);
    {
        auto out = open_out(out_root / "summary.csv");
        out << rep.csv;
    }
    std::string failed;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!failures[i].empty()) failed += "\n  " + cells[i].name + ": " + failures[i];
    }
    if (!failed.empty()) throw std::runtime_error("ablation cells failed:" + failed);
    return rep.csv;
}

std::string audit_rollouts(const fs::path& log_path, const FilterConfig& cfg) {
    std::ifstream in(log_path);
    if (!in) throw ValidationError("cannot open rollout log " + log_path.string());
    const auto batches = read_rollout_log(in);
    std::string csv = "policy_version,groups,trajectories,mean_reward,truncated,repeat_ratio,mean_len\n";
    for (const auto& b : batches) {
        const auto rewards = flatten_rewards(b);
        const auto lens = token_counts(b);
        std::size_t truncated = 0;
        double reward_sum = 0.0, len_sum = 0.0;
        for (std::size_t i = 0; i < rewards.size(); ++i) {
            reward_sum += rewards[i];
            len_sum += static_cast<double>(lens[i]);
            if (b.trajectory(i).truncated) ++truncated;
        }
        const double n = static_cast<double>(std::max<std::size_t>(1, rewards.size()));
        csv += std::to_string(b.policy_version) + "," + std::to_string(b.groups.size()) + "," +
               std::to_string(rewards.size()) + "," + format_double(reward_sum / n) + "," + std::to_string(truncated) +
               "," + format_double(repeat_ratio(b, cfg)) + "," + format_double(len_sum / n) + "\n";
    }
    return csv;
}

} // namespace cfpo
