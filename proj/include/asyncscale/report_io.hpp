// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Text renderings of traces and reports. Every function is a pure function of
// its arguments (no timestamps, shortest round-trip number formatting), so
// re-running a command reproduces its files byte for byte.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "asyncscale/metrics.hpp"
#include "asyncscale/pipeline.hpp"
#include "asyncscale/simkernel.hpp"

namespace asyncscale::report {

using Series = std::vector<std::pair<double, double>>;

/// Writes `content` to `path`, creating parent directories. Throws IoError.
void write_file(const std::filesystem::path& path, const std::string& content);

/// One TurnRecord per line, tagged with its chain.
std::string episode_jsonl(const pipeline::EpisodeTrace& trace);
/// turn,verified,rejected,draft_tokens,target_tokens,wasted_tokens
std::string episode_summary_csv(const pipeline::EpisodeTrace& trace);

/// time_start,time_end,kind,chain_id,tokens,device
std::string schedule_csv(const simkernel::ScheduleTrace& schedule);
/// Flat key=value lines.
std::string intensity_kv(const simkernel::IntensityReport& report);

/// alpha,reject_rate,epsilon,violation (plus refinement columns when present).
std::string coverage_csv(const metrics::CoverageReport& report);
/// k,p,frequency over the atoms k/support.
std::string atoms_csv(const metrics::CoverageReport& report);
std::string coverage_summary(const metrics::CoverageReport& report);

/// input_id,rejection_rate for turn 1 of each input.
std::string budget_csv(const metrics::BudgetReport& report);
std::string budget_summary(const metrics::BudgetReport& report);
std::string efficiency_summary(const metrics::EfficiencyReport& report);

/// Two-column plot series with header "x,y".
std::string series_csv(const std::string& x, const std::string& y, const Series& series);

}  // namespace asyncscale::report
