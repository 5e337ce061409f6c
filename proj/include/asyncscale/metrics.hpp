// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Monte-Carlo checks of the conformal guarantees, budget accuracy of an
// episode, and sync-vs-async efficiency.
//
// Trials are split into a fixed number of shards, each with its own derived
// seed, and reduced by summing counts. Results therefore do not depend on how
// many worker threads run the shards.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "asyncscale/conformal.hpp"
#include "asyncscale/pipeline.hpp"
#include "asyncscale/simkernel.hpp"
#include "asyncscale/synthetic.hpp"

namespace asyncscale::metrics {

using conformal::CoverageMode;
using synthetic::Distribution;

inline constexpr std::size_t kMinTrials = 1000;

/// max(0.01, 3 sqrt(alpha (1 - alpha) / trials)).
double mc_epsilon(double alpha, std::size_t trials);

/// {0.05, 0.10, ..., 0.95}.
std::vector<double> default_alpha_grid();

struct CoverageReport {
  std::string check;  // "marginal_validity", "conditional_validity", "simultaneous_coverage"
  CoverageMode mode = CoverageMode::marginal;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;

  std::vector<double> alphaGrid;
  std::vector<double> empiricalRejectRate;
  std::vector<double> epsilon;
  std::vector<bool> violation;  // rate > alpha + epsilon

  // p takes values k / support, k = 1..support; atomFrequency[k-1] = P(p = k/support).
  std::size_t support = 0;
  std::vector<double> atomFrequency;
  double ksDistanceToUniform = 0.0;

  // Conditional only: sharpened bound for distinct scores,
  // rate <= alpha - 1/((n-1)m+1) + epsilon. Reported, not part of the gate.
  std::vector<double> refinementBound;
  std::vector<bool> refinementViolation;

  // Simultaneous coverage only (single alpha).
  double acceptance = 0.0;
  double lowerBound = 0.0;
  double upperBound = 0.0;
  bool boundVacuous = false;

  bool violated() const;
};

struct MonteCarloSpec {
  Distribution generator = Distribution::distinctUniform;
  std::size_t n = 20;
  std::size_t m = 8;
  std::vector<double> alphaGrid = default_alpha_grid();
  std::size_t trials = 100'000;
  std::uint64_t seed = 0;
  /// Test hook: the test score is shifted by this many generator standard
  /// deviations, which breaks exchangeability.
  double testShift = 0.0;
  /// Worker threads; 0 means hardware concurrency. Does not affect results.
  std::size_t threads = 0;
};

/// Throws Error "insufficient trials" when spec.trials < kMinTrials.
CoverageReport verify_marginal_validity(const MonteCarloSpec& spec);
CoverageReport verify_conditional_validity(const MonteCarloSpec& spec);

/// One designated exchangeable candidate per trial; acceptance is P(p > alpha).
/// Bounds: 1 - alpha - eps <= acceptance <= 1 - alpha + 1/((n-1)m+1) + eps.
/// Uses spec.alphaGrid.front() as alpha and requires distinct scores.
CoverageReport verify_simultaneous_coverage(const MonteCarloSpec& spec);

struct BudgetReport {
  double targetAlpha = 0.0;
  CoverageMode mode = CoverageMode::marginal;
  conformal::BudgetScope scope = conformal::BudgetScope::perDataset;
  conformal::BudgetSpec budget;
  // Turn 1 is the only turn whose draft blocks match the calibration blocks.
  double empiricalRate = 0.0;
  double absError = 0.0;
  std::vector<std::string> inputIds;
  std::vector<double> perInputRate;  // turn 1
  std::vector<double> perTurnRate;
  double allTurnsRate = 0.0;
};

/// Throws Error "empty trace" when the episode ran no turn.
BudgetReport budget_accuracy(const pipeline::EpisodeTrace& trace);

struct EfficiencyReport {
  double makespanSync = 0.0;
  double makespanAsync = 0.0;
  double speedup = 1.0;
  std::size_t tokensDraft = 0;
  std::size_t tokensTarget = 0;
  std::size_t tokensWasted = 0;
  double throughputSync = 0.0;   // consumed tokens per simulated second
  double throughputAsync = 0.0;
  double peakMemorySync = 0.0;
  double peakMemoryAsync = 0.0;
};

/// Throws Error when the schedules do not both derive from `episode` or
/// their policies are not (sync, async).
EfficiencyReport efficiency(const simkernel::ScheduleTrace& traceSync,
                            const simkernel::ScheduleTrace& traceAsync,
                            const pipeline::EpisodeTrace& episode);

}  // namespace asyncscale::metrics
