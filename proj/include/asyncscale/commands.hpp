// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// The four CLI commands. Each reads an ExperimentConfig, writes its files
// under an output directory and logs a short human-readable summary.
//
// Exit codes: 0 ok, 2 config, 3 I/O, 4 internal invariant, 5 statistical bound.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "asyncscale/config.hpp"
#include "asyncscale/conformal.hpp"
#include "asyncscale/metrics.hpp"
#include "asyncscale/pipeline.hpp"
#include "asyncscale/simkernel.hpp"

namespace asyncscale::commands {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitInvariant = 4;
inline constexpr int kExitBound = 5;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutEnv = "ASYNCSCALE_OUT";

/// --out, else experiment.out, else $ASYNCSCALE_OUT, else "asyncscale_out".
std::filesystem::path resolve_out_dir(const std::optional<std::filesystem::path>& flag,
                                      const config::ExperimentConfig& cfg);

/// Online calibration from the configured source. Records-source failures
/// are IoError.
conformal::CalibrationPool build_pool(const config::ExperimentConfig& cfg);

/// Writes the pool (default out/pool.jsonl) and returns it.
conformal::CalibrationPool cmd_calibrate(const config::ExperimentConfig& cfg,
                                         const std::filesystem::path& out,
                                         const std::optional<std::filesystem::path>& poolPath,
                                         std::ostream& log);

struct RunResult {
  pipeline::EpisodeTrace episode;
  simkernel::ScheduleTrace sync;
  simkernel::ScheduleTrace async;
  simkernel::IntensityReport intensitySync;
  simkernel::IntensityReport intensityAsync;
  metrics::BudgetReport budget;
  metrics::EfficiencyReport efficiency;
};

/// Episode, both schedules and reports, without touching the file system.
RunResult simulate_run(const config::ExperimentConfig& cfg, const conformal::CalibrationPool& pool);

/// Writes episode.jsonl, episode_summary.csv, sync.csv, async.csv,
/// summary.txt, intensity_{sync,async}.txt, budget_per_input.csv and the
/// plot series fig1_memory, fig3b_sync_turns, fig5_budget, fig7b_takeovers.
RunResult cmd_run(const config::ExperimentConfig& cfg, const std::filesystem::path& out,
                  const std::optional<std::filesystem::path>& poolPath, std::ostream& log);

struct VerifyResult {
  metrics::CoverageReport marginal;
  metrics::CoverageReport conditional;
  metrics::CoverageReport simultaneous;
  bool ok() const { return !marginal.violated() && !conditional.violated() && !simultaneous.violated(); }
};

/// Runs the three verifiers. Throws ConfigError "insufficient trials" below
/// 1000 trials.
VerifyResult cmd_verify(const config::ExperimentConfig& cfg, const std::filesystem::path& out,
                        std::ostream& log);

/// One run per axis point in out/<axis>_<value>/, plus the aggregated series.
/// Axis is one of alpha, m, K_d (or k_draft), turns; else ConfigError.
void cmd_sweep(const config::ExperimentConfig& cfg, const std::string& axis,
               const std::filesystem::path& out, const std::optional<std::filesystem::path>& poolPath,
               std::ostream& log);

/// Full CLI entry point; returns the process exit code.
int main_entry(int argc, char** argv);

}  // namespace asyncscale::commands
