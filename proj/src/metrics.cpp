// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <thread>

#include <fmt/format.h>

#include "asyncscale/error.hpp"
#include "asyncscale/seed.hpp"

namespace asyncscale::metrics {

double mc_epsilon(double alpha, std::size_t trials) {
  if (trials == 0) return 1.0;
  return std::max(0.01, 3.0 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(trials)));
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(k * 0.05);
  return grid;
}

bool CoverageReport::violated() const {
  if (check == "simultaneous_coverage") return acceptance < lowerBound || acceptance > upperBound;
  return std::any_of(violation.begin(), violation.end(), [](bool v) { return v; });
}

namespace {

constexpr std::size_t kShards = 16;

using Histogram = std::vector<std::uint64_t>;

// Runs `trial(rng, hist)` spec.trials times over kShards seeded shards and
// sums the per-shard histograms in shard order.
Histogram run_sharded(const MonteCarloSpec& spec, std::string_view label, std::size_t bins,
                      const std::function<void(Rng&, Histogram&)>& trial) {
  std::vector<Histogram> partial(kShards, Histogram(bins, 0));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(kShards);

  auto worker = [&] {
    for (std::size_t s = next++; s < kShards; s = next++) {
      try {
        Rng rng = make_rng(derive_seed(spec.seed, label, {s}));
        const std::size_t count = spec.trials / kShards + (s < spec.trials % kShards ? 1 : 0);
        for (std::size_t t = 0; t < count; ++t) trial(rng, partial[s]);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  };

  std::size_t threads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, kShards);
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Histogram total(bins, 0);
  for (const auto& h : partial)
    for (std::size_t b = 0; b < bins; ++b) total[b] += h[b];
  return total;
}

double generator_sd(Distribution d) {
  switch (d) {
    case Distribution::standardNormal: return 1.0;
    case Distribution::uniform:
    case Distribution::distinctUniform: return 1.0 / std::sqrt(12.0);
    case Distribution::lognormal: return std::sqrt((std::exp(1.0) - 1.0) * std::exp(1.0));
    case Distribution::constant: return 1.0;
  }
  return 1.0;
}

void check_spec(const MonteCarloSpec& spec) {
  if (spec.trials < kMinTrials)
    throw Error(fmt::format("insufficient trials: {} < {}", spec.trials, kMinTrials));
  if (spec.n == 0 || spec.m == 0) throw Error("n and m must be >= 1");
  if (spec.alphaGrid.empty()) throw Error("alpha grid is empty");
  for (double a : spec.alphaGrid) (void)conformal::AlphaLevel(a);
}

std::vector<std::string> input_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(fmt::format("x{}", i));
  return ids;
}

// Fills rates, violations and the uniformity summary from a histogram over
// numerators 1..support.
void summarize(CoverageReport& r, const Histogram& hist) {
  const auto total = static_cast<double>(r.trials);
  r.support = hist.size();
  r.atomFrequency.resize(hist.size());
  double cumulative = 0.0;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    r.atomFrequency[k] = static_cast<double>(hist[k]) / total;
    cumulative += r.atomFrequency[k];
    const double uniform = static_cast<double>(k + 1) / static_cast<double>(hist.size());
    r.ksDistanceToUniform = std::max(r.ksDistanceToUniform, std::abs(cumulative - uniform));
  }
  for (double a : r.alphaGrid) {
    const conformal::AlphaLevel alpha(a);
    std::uint64_t rejected = 0;
    for (std::size_t k = 0; k < hist.size(); ++k) {
      conformal::PValueRecord p;
      p.numerator = k + 1;
      p.denominator = hist.size();
      if (conformal::reject(p, alpha) == conformal::Decision::reject) rejected += hist[k];
    }
    const double rate = static_cast<double>(rejected) / total;
    const double eps = mc_epsilon(a, r.trials);
    r.empiricalRejectRate.push_back(rate);
    r.epsilon.push_back(eps);
    r.violation.push_back(rate > a + eps);
  }
}

CoverageReport base_report(const MonteCarloSpec& spec, std::string check, CoverageMode mode) {
  CoverageReport r;
  r.check = std::move(check);
  r.mode = mode;
  r.n = spec.n;
  r.m = spec.m;
  r.trials = spec.trials;
  r.seed = spec.seed;
  r.alphaGrid = spec.alphaGrid;
  return r;
}

}  // namespace

CoverageReport verify_marginal_validity(const MonteCarloSpec& spec) {
  check_spec(spec);
  const std::size_t nm = spec.n * spec.m;
  const double shift = spec.testShift * generator_sd(spec.generator);
  const auto ids = input_ids(spec.n);

  auto hist = run_sharded(spec, "verify-marginal", nm + 1, [&](Rng& rng, Histogram& h) {
    std::vector<double> draws(nm + 1);
    synthetic::fill_scores(spec.generator, draws, rng);
    const conformal::ConformityScore test(draws.back() + shift);
    draws.pop_back();
    const conformal::CalibrationPool pool(ids, spec.m, std::move(draws));
    h[conformal::marginal_p_value(test, pool).numerator - 1] += 1;
  });

  CoverageReport r = base_report(spec, "marginal_validity", CoverageMode::marginal);
  summarize(r, hist);
  return r;
}

CoverageReport verify_conditional_validity(const MonteCarloSpec& spec) {
  check_spec(spec);
  const std::size_t nm = spec.n * spec.m;
  const double shift = spec.testShift * generator_sd(spec.generator);
  const auto ids = input_ids(spec.n);

  auto hist = run_sharded(spec, "verify-conditional", spec.m + 1, [&](Rng& rng, Histogram& h) {
    std::vector<double> draws(nm + 1);
    synthetic::fill_scores(spec.generator, draws, rng);
    const std::size_t input = std::uniform_int_distribution<std::size_t>(0, spec.n - 1)(rng);
    const conformal::ConformityScore test(draws.back() + shift);
    draws.pop_back();
    const conformal::CalibrationPool pool(ids, spec.m, std::move(draws));
    h[conformal::conditional_p_value(test, pool, ids[input]).numerator - 1] += 1;
  });

  CoverageReport r = base_report(spec, "conditional_validity", CoverageMode::conditional);
  summarize(r, hist);
  const double denom = static_cast<double>((spec.n - 1) * spec.m + 1);
  for (std::size_t k = 0; k < r.alphaGrid.size(); ++k) {
    const double bound = r.alphaGrid[k] - 1.0 / denom + r.epsilon[k];
    r.refinementBound.push_back(bound);
    r.refinementViolation.push_back(r.empiricalRejectRate[k] > bound);
  }
  return r;
}

CoverageReport verify_simultaneous_coverage(const MonteCarloSpec& spec) {
  check_spec(spec);
  if (spec.generator != Distribution::distinctUniform)
    throw Error("simultaneous coverage requires the distinct-uniform generator");
  const std::size_t nm = spec.n * spec.m;
  const conformal::AlphaLevel alpha(spec.alphaGrid.front());
  const double shift = spec.testShift * generator_sd(spec.generator);

  // Bin 0 counts rejections of the designated candidate, bin 1 acceptances.
  auto hist = run_sharded(spec, "verify-simultaneous", 2, [&](Rng& rng, Histogram& h) {
    std::vector<double> draws(nm + spec.m);
    synthetic::fill_scores(spec.generator, draws, rng);
    const std::size_t right = std::uniform_int_distribution<std::size_t>(0, spec.m - 1)(rng);
    const double s = draws[nm + right] + shift;
    std::size_t atLeast = 0;
    for (std::size_t k = 0; k < nm; ++k) atLeast += draws[k] >= s ? 1 : 0;
    conformal::PValueRecord p;
    p.numerator = atLeast + 1;
    p.denominator = nm + 1;
    h[conformal::reject(p, alpha) == conformal::Decision::reject ? 0 : 1] += 1;
  });

  CoverageReport r = base_report(spec, "simultaneous_coverage", CoverageMode::marginal);
  r.alphaGrid = {alpha.value()};
  const double a = alpha.value();
  const double eps = mc_epsilon(a, spec.trials);
  const double rejectRate = static_cast<double>(hist[0]) / static_cast<double>(spec.trials);
  r.empiricalRejectRate = {rejectRate};
  r.epsilon = {eps};
  r.violation = {rejectRate > a + eps};
  r.acceptance = static_cast<double>(hist[1]) / static_cast<double>(spec.trials);
  r.boundVacuous = spec.n == 1;
  r.lowerBound = 1.0 - a - eps;
  r.upperBound = 1.0 - a + 1.0 / static_cast<double>((spec.n - 1) * spec.m + 1) + eps;
  return r;
}

BudgetReport budget_accuracy(const pipeline::EpisodeTrace& trace) {
  if (trace.turns() == 0) throw Error("empty trace");
  const auto& cfg = trace.config;
  BudgetReport r;
  r.targetAlpha = cfg.alpha.value();
  r.mode = cfg.coverage;
  r.budget = conformal::budget_for(cfg.alpha, cfg.m, cfg.coverage);
  r.scope = r.budget.scope;

  std::map<std::string, std::pair<std::size_t, std::size_t>> perInput;  // rejected, verified
  for (const auto& c : trace.chains) {
    if (c.history.empty() || c.history.front().turn != 1) continue;
    auto& slot = perInput[c.inputId];
    slot.first += c.history.front().decision == conformal::Decision::reject ? 1 : 0;
    slot.second += 1;
  }
  for (const auto& id : trace.inputs) {
    auto it = perInput.find(id);
    if (it == perInput.end() || it->second.second == 0) continue;
    r.inputIds.push_back(id);
    r.perInputRate.push_back(static_cast<double>(it->second.first) /
                             static_cast<double>(it->second.second));
  }

  std::size_t rejected = 0, verified = 0;
  for (std::size_t t = 0; t < trace.turns(); ++t) {
    const std::size_t v = trace.perTurnVerified[t];
    const std::size_t k = trace.perTurnRejectionCounts[t];
    r.perTurnRate.push_back(v ? static_cast<double>(k) / static_cast<double>(v) : 0.0);
    rejected += k;
    verified += v;
  }
  r.allTurnsRate = verified ? static_cast<double>(rejected) / static_cast<double>(verified) : 0.0;
  r.empiricalRate = r.perTurnRate.front();
  r.absError = std::abs(r.empiricalRate - r.targetAlpha);
  return r;
}

EfficiencyReport efficiency(const simkernel::ScheduleTrace& traceSync,
                            const simkernel::ScheduleTrace& traceAsync,
                            const pipeline::EpisodeTrace& episode) {
  if (traceSync.policy != simkernel::Policy::sync || traceAsync.policy != simkernel::Policy::async)
    throw Error("efficiency expects one sync and one async schedule");
  const std::string fp = episode.fingerprint();
  if (traceSync.episodeFingerprint != fp || traceAsync.episodeFingerprint != fp)
    throw Error("schedules derive from a different episode");

  EfficiencyReport r;
  r.makespanSync = traceSync.makespan;
  r.makespanAsync = traceAsync.makespan;
  r.speedup = r.makespanAsync > 0.0 ? r.makespanSync / r.makespanAsync : 1.0;
  r.tokensDraft = episode.totalDraftTokens;
  r.tokensTarget = episode.totalTargetTokens;
  r.tokensWasted = episode.totalWastedTokens;
  const auto consumed = static_cast<double>(episode.totalConsumedTokens());
  r.throughputSync = r.makespanSync > 0.0 ? consumed / r.makespanSync : 0.0;
  r.throughputAsync = r.makespanAsync > 0.0 ? consumed / r.makespanAsync : 0.0;
  r.peakMemorySync = traceSync.peakMemoryBytes;
  r.peakMemoryAsync = traceAsync.peakMemoryBytes;
  return r;
}

}  // namespace asyncscale::metrics
