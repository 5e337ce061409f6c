// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/report_io.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "asyncscale/error.hpp"

namespace asyncscale::report {

namespace {

std::string_view scope_name(conformal::BudgetScope scope) {
  return scope == conformal::BudgetScope::perTurnPerInput ? "per_turn_per_input" : "per_dataset";
}

std::string_view decision_name(conformal::Decision d) {
  return d == conformal::Decision::reject ? "reject" : "accept";
}

}  // namespace

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(fmt::format("cannot create directory '{}': {}", path.parent_path().string(), ec.message()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << content;
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::string episode_jsonl(const pipeline::EpisodeTrace& trace) {
  std::string out;
  for (const auto& c : trace.chains) {
    for (const auto& r : c.history) {
      nlohmann::ordered_json j;
      j["chain_id"] = c.chainIndex;
      j["candidate_id"] = c.candidateId;
      j["input_id"] = c.inputId;
      j["turn"] = r.turn;
      j["role"] = records::to_string(r.role);
      j["score"] = r.score;
      j["target_score"] = r.targetScore;
      j["p_numerator"] = r.p.numerator;
      j["p_denominator"] = r.p.denominator;
      j["mode"] = conformal::to_string(r.p.mode);
      j["decision"] = decision_name(r.decision);
      j["draft_tokens"] = r.draftTokens;
      j["target_tokens"] = r.targetTokens;
      j["wasted_draft_tokens"] = r.wastedDraftTokens;
      j["ended_with_answer"] = r.endedWithAnswer;
      if (&r == &c.history.back()) j["status"] = pipeline::to_string(c.status);
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

std::string episode_summary_csv(const pipeline::EpisodeTrace& trace) {
  std::vector<std::size_t> draft(trace.turns()), target(trace.turns()), wasted(trace.turns());
  for (const auto& c : trace.chains)
    for (const auto& r : c.history) {
      draft[r.turn - 1] += r.draftTokens;
      target[r.turn - 1] += r.targetTokens;
      wasted[r.turn - 1] += r.wastedDraftTokens;
    }
  std::string out = "turn,verified,rejected,draft_tokens,target_tokens,wasted_tokens\n";
  for (std::size_t t = 0; t < trace.turns(); ++t)
    out += fmt::format("{},{},{},{},{},{}\n", t + 1, trace.perTurnVerified[t],
                       trace.perTurnRejectionCounts[t], draft[t], target[t], wasted[t]);
  out += fmt::format("total,{},{},{},{},{}\n",
                     std::accumulate(trace.perTurnVerified.begin(), trace.perTurnVerified.end(), std::size_t{0}),
                     std::accumulate(trace.perTurnRejectionCounts.begin(), trace.perTurnRejectionCounts.end(), std::size_t{0}),
                     trace.totalDraftTokens, trace.totalTargetTokens, trace.totalWastedTokens);
  return out;
}

std::string schedule_csv(const simkernel::ScheduleTrace& schedule) {
  std::string out = "time_start,time_end,kind,chain_id,tokens,device\n";
  for (const auto& e : schedule.events)
    out += fmt::format("{},{},{},{},{},{}\n", e.start, e.end, simkernel::to_string(e.kind), e.chainId,
                       e.tokens, e.device);
  return out;
}

std::string intensity_kv(const simkernel::IntensityReport& r) {
  return fmt::format(
      "F={}\nB={}\nI={}\nT_c={}\nT_m={}\nT_s={}\nr={}\nr_approx={}\n", r.flops, r.bytes, r.I,
      r.computeTime, r.memoryTime, r.syncTime, r.r, r.rApprox);
}

std::string coverage_csv(const metrics::CoverageReport& r) {
  const bool refined = !r.refinementBound.empty();
  std::string out = refined ? "alpha,reject_rate,epsilon,violation,refinement_bound,refinement_violation\n"
                            : "alpha,reject_rate,epsilon,violation\n";
  for (std::size_t k = 0; k < r.alphaGrid.size(); ++k) {
    out += fmt::format("{},{},{},{}", r.alphaGrid[k], r.empiricalRejectRate[k], r.epsilon[k],
                       r.violation[k] ? 1 : 0);
    if (refined)
      out += fmt::format(",{},{}", r.refinementBound[k], r.refinementViolation[k] ? 1 : 0);
    out += '\n';
  }
  return out;
}

std::string atoms_csv(const metrics::CoverageReport& r) {
  std::string out = "k,p,frequency\n";
  for (std::size_t k = 0; k < r.atomFrequency.size(); ++k)
    out += fmt::format("{},{},{}\n", k + 1, static_cast<double>(k + 1) / static_cast<double>(r.support),
                       r.atomFrequency[k]);
  return out;
}

std::string coverage_summary(const metrics::CoverageReport& r) {
  std::string out = fmt::format("[{}]\nmode = {}\nn = {}\nm = {}\ntrials = {}\nseed = {}\n", r.check,
                                conformal::to_string(r.mode), r.n, r.m, r.trials, r.seed);
  if (r.check == "simultaneous_coverage") {
    out += fmt::format("alpha = {}\nacceptance = {}\nlower_bound = {}\nupper_bound = {}\nbound_vacuous = {}\n",
                       r.alphaGrid.front(), r.acceptance, r.lowerBound, r.upperBound, r.boundVacuous);
  } else {
    std::size_t violations = 0;
    double worst = -1.0;
    for (std::size_t k = 0; k < r.alphaGrid.size(); ++k) {
      violations += r.violation[k] ? 1 : 0;
      worst = std::max(worst, r.empiricalRejectRate[k] - r.alphaGrid[k]);
    }
    out += fmt::format("support = {}\nks_distance = {}\nmax_rate_minus_alpha = {}\nviolations = {}\n",
                       r.support, r.ksDistanceToUniform, worst, violations);
    if (!r.refinementViolation.empty()) {
      std::size_t refined = 0;
      for (bool v : r.refinementViolation) refined += v ? 1 : 0;
      out += fmt::format("refinement_violations = {}\n", refined);
    }
  }
  out += fmt::format("epsilon_rule = max(0.01, 3*sqrt(alpha*(1-alpha)/trials))\nviolated = {}\n",
                     r.violated());
  return out;
}

std::string budget_csv(const metrics::BudgetReport& r) {
  std::string out = "input_id,rejection_rate\n";
  for (std::size_t k = 0; k < r.inputIds.size(); ++k)
    out += fmt::format("{},{}\n", r.inputIds[k], r.perInputRate[k]);
  return out;
}

std::string budget_summary(const metrics::BudgetReport& r) {
  std::string out = fmt::format(
      "[budget]\nalpha = {}\nmode = {}\nscope = {}\nbudget_B = {}\nexpected_rejections_per_turn = {}\n"
      "empirical_rate = {}\nabs_error = {}\nall_turns_rate = {}\n",
      r.targetAlpha, conformal::to_string(r.mode), scope_name(r.scope), r.budget.B, r.budget.expected,
      r.empiricalRate, r.absError, r.allTurnsRate);
  out += "per_turn_rate =";
  for (double v : r.perTurnRate) out += fmt::format(" {}", v);
  out += '\n';
  return out;
}

std::string efficiency_summary(const metrics::EfficiencyReport& r) {
  return fmt::format(
      "[efficiency]\nmakespan_sync = {}\nmakespan_async = {}\nspeedup = {}\ntokens_draft = {}\n"
      "tokens_target = {}\ntokens_wasted = {}\nthroughput_sync = {}\nthroughput_async = {}\n"
      "peak_memory_sync = {}\npeak_memory_async = {}\n",
      r.makespanSync, r.makespanAsync, r.speedup, r.tokensDraft, r.tokensTarget, r.tokensWasted,
      r.throughputSync, r.throughputAsync, r.peakMemorySync, r.peakMemoryAsync);
}

std::string series_csv(const std::string& x, const std::string& y, const Series& series) {
  std::string out = fmt::format("{},{}\n", x, y);
  for (const auto& [a, b] : series) out += fmt::format("{},{}\n", a, b);
  return out;
}

}  // namespace asyncscale::report
