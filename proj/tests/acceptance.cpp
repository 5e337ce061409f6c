// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

// Acceptance suite: one PASS/FAIL line per criterion. Exits 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "asyncscale/commands.hpp"
#include "asyncscale/conformal.hpp"
#include "asyncscale/metrics.hpp"
#include "asyncscale/pipeline.hpp"
#include "asyncscale/seed.hpp"
#include "asyncscale/simkernel.hpp"
#include "asyncscale/synthetic.hpp"

using namespace asyncscale;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  fmt::print("{} {}: {}\n", pass ? "PASS" : "FAIL", name, detail);
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fmt::format("q{}", i));
  return out;
}

conformal::CalibrationPool synthetic_pool(const std::vector<std::string>& inputs, std::size_t m,
                                          std::size_t blockTokens, const synthetic::ProcessParams& p,
                                          std::uint64_t seed) {
  return conformal::online_calibrate(inputs, m, synthetic::SyntheticScoreSource(p, blockTokens, seed));
}

pipeline::EpisodeTrace episode(const pipeline::PipelineConfig& cfg, std::size_t inputs,
                               const synthetic::ProcessParams& p, std::size_t calBlock = 0) {
  auto in = ids(inputs);
  auto pool = synthetic_pool(in, cfg.m, calBlock ? calBlock : cfg.kDraft, p, cfg.seed);
  return pipeline::run_episode(cfg, pool, in, p);
}

// ---------------------------------------------------------------------------

metrics::CoverageReport marginal_run;

void check_marginal_validity() {
  metrics::MonteCarloSpec spec;
  spec.n = 20;
  spec.m = 8;
  spec.trials = 100'000;
  spec.seed = 2026;
  const auto t0 = std::chrono::steady_clock::now();
  marginal_run = metrics::verify_marginal_validity(spec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = -1.0;
  bool ok = true;
  for (std::size_t k = 0; k < marginal_run.alphaGrid.size(); ++k) {
    const double excess = marginal_run.empiricalRejectRate[k] - marginal_run.alphaGrid[k];
    worst = std::max(worst, excess);
    ok = ok && excess <= 0.01;
  }
  report("marginal_validity", ok && secs < 30.0,
         fmt::format("n=20 m=8 trials=1e5, max(rate - alpha) = {:.5f} <= 0.01 over 19 alphas, runtime {:.2f} s < 30 s",
                     worst, secs));
}

void check_marginal_uniformity() {
  report("marginal_uniformity_ks", marginal_run.ksDistanceToUniform < 0.02,
         fmt::format("KS distance to uniform on {{k/161}} = {:.5f} < 0.02", marginal_run.ksDistanceToUniform));

  // Exact oracle: the p-value depends only on where the test score falls
  // among the nm+1 distinct values. Every rank placement is one outcome of
  // equal probability, so each atom k/(nm+1) must be hit by exactly one
  // placement. For nm <= 6 every full assignment of values to cells is
  // enumerated as well.
  bool ok = true;
  std::size_t cases = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t m = 1; n * m <= 12; ++m) {
      const std::size_t total = n * m + 1;
      std::vector<double> values(total);
      std::iota(values.begin(), values.end(), 1.0);
      std::vector<std::uint64_t> atoms(total, 0);
      std::uint64_t outcomes = 0;
      auto tally = [&](const std::vector<double>& v, std::size_t testSlot) {
        std::vector<double> cells;
        for (std::size_t k = 0; k < total; ++k)
          if (k != testSlot) cells.push_back(v[k]);
        std::vector<std::string> in = ids(n);
        conformal::CalibrationPool pool(in, m, cells);
        auto p = conformal::marginal_p_value(conformal::ConformityScore(v[testSlot]), pool);
        ok = ok && p.denominator == total;
        atoms[p.numerator - 1] += 1;
        ++outcomes;
      };
      if (total <= 7) {
        do tally(values, total - 1);
        while (std::next_permutation(values.begin(), values.end()));
      } else {
        for (std::size_t slot = 0; slot < total; ++slot) tally(values, slot);
      }
      for (auto a : atoms) ok = ok && a * total == outcomes;
      ++cases;
    }
  }
  report("marginal_uniformity_exact", ok,
         fmt::format("{} (n, m) shapes with nm <= 12: every atom has probability exactly 1/(nm+1)", cases));
}

void check_conditional() {
  metrics::MonteCarloSpec spec;
  spec.n = 20;
  spec.m = 7;
  spec.trials = 100'000;
  spec.seed = 2027;
  auto r = metrics::verify_conditional_validity(spec);
  double worst = 0.0;
  for (double f : r.atomFrequency) worst = std::max(worst, std::abs(f - 0.125));
  report("conditional_atoms", r.support == 8 && worst <= 0.01,
         fmt::format("m=7 trials=1e5, atoms {:.4f}, max |f - 0.125| = {:.5f} <= 0.01",
                     fmt::join(r.atomFrequency, " "), worst));

  // Zero tolerance: per input and turn, the conditional rejection count is
  // floor(alpha (m_cal + 1)) with m_cal + 1 the candidates ranked together.
  bool ok = true;
  std::size_t groups = 0;
  for (double a : {0.05, 0.1, 0.125, 0.25, 0.3, 0.4, 0.5, 0.75}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      pipeline::PipelineConfig cfg;
      cfg.m = 8;
      cfg.alpha = conformal::AlphaLevel(a);
      cfg.coverage = conformal::CoverageMode::conditional;
      cfg.seed = seed;
      auto tr = episode(cfg, 10, synthetic::ProcessParams{});
      std::map<std::pair<std::string, std::size_t>, std::pair<std::size_t, std::size_t>> perGroup;
      for (const auto& c : tr.chains)
        for (const auto& rec : c.history) {
          auto& g = perGroup[{c.inputId, rec.turn}];
          g.first += 1;
          g.second += rec.decision == conformal::Decision::reject ? 1 : 0;
        }
      for (const auto& [key, g] : perGroup) {
        // A lone survivor has p = 1 and is never rejected.
        const std::size_t expected =
            g.first < 2 ? 0 : conformal::budget_for(cfg.alpha, g.first - 1, conformal::CoverageMode::conditional).B;
        ok = ok && g.second == expected;
        ++groups;
      }
    }
  }
  // The m=7 pool example itself.
  conformal::CalibrationPool own({"x"}, 7, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
  std::vector<conformal::PValueRecord> ps;
  for (double s : {0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75})
    ps.push_back(conformal::conditional_p_value(conformal::ConformityScore(s), own, "x"));
  ok = ok && conformal::build_rejection_set(ps, conformal::AlphaLevel(0.25), 1).rejected.size() == 2;
  report("conditional_exact_count", ok,
         fmt::format("{} (input, turn) groups over 8 alphas x 10 seeds: rejections == floor(alpha (m_cal+1)) exactly",
                     groups));
}

void check_simultaneous() {
  metrics::MonteCarloSpec spec;
  spec.n = 20;
  spec.m = 8;
  spec.alphaGrid = {0.25};
  spec.trials = 1'000'000;
  spec.seed = 2028;
  auto r = metrics::verify_simultaneous_coverage(spec);
  const double hi = 0.75 + 1.0 / 153.0 + 0.01;
  report("simultaneous_coverage", r.acceptance >= 0.75 && r.acceptance <= hi,
         fmt::format("n=20 m=8 alpha=0.25 trials=1e6, acceptance = {:.5f} in [0.75, {:.5f}]", r.acceptance, hi));
}

void budget() {
  for (std::size_t kd : {std::size_t{700}, std::size_t{500}}) {
    const double bound = kd == 500 ? 0.02 : 0.05;
    std::vector<double> errors;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      pipeline::PipelineConfig cfg;
      cfg.m = 64;
      cfg.alpha = conformal::AlphaLevel(0.25);
      cfg.kDraft = kd;
      cfg.maxTurns = 1;
      cfg.seed = seed;
      auto r = metrics::budget_accuracy(episode(cfg, 100, synthetic::ProcessParams{}, 500));
      errors.push_back(r.absError);
    }
    const double worst = *std::max_element(errors.begin(), errors.end());
    report(kd == 500 ? "budget_matched_blocks" : "budget_unmatched_blocks", worst <= bound,
           fmt::format("marginal m=64, 100 inputs, alpha=0.25, calibration K=500, sampling K_d={}: |rate - alpha| "
                       "per seed 1..5 = {:.4f}, max {:.4f} <= {}",
                       kd, fmt::join(errors, " "), worst, bound));
  }
}

void scheduler() {
  // Dominance over random configurations.
  Rng rng = make_rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t strict = 0;
  double worstRatio = 0.0;
  for (int k = 0; k < 100; ++k) {
    pipeline::PipelineConfig cfg;
    cfg.m = 1 + static_cast<std::size_t>(u(rng) * 16);
    cfg.kDraft = 50 + static_cast<std::size_t>(u(rng) * 450);
    cfg.kTarget = 50 + static_cast<std::size_t>(u(rng) * 450);
    cfg.maxTurns = 1 + static_cast<std::size_t>(u(rng) * 8);
    cfg.alpha = conformal::AlphaLevel(0.05 + 0.6 * u(rng));
    cfg.coverage = u(rng) < 0.5 ? conformal::CoverageMode::marginal : conformal::CoverageMode::conditional;
    cfg.intervention = u(rng) < 0.5 ? pipeline::InterventionMode::continueSampling
                                    : pipeline::InterventionMode::resampling;
    cfg.seed = static_cast<std::uint64_t>(k);
    const std::size_t inputs = 1 + static_cast<std::size_t>(u(rng) * 4);
    simkernel::CostModel cost;
    cost.barrierBase = 0.001 + 0.2 * u(rng);
    cost.barrierCostPerCandidate = 0.001 + 0.05 * u(rng);
    cost.barrierGrowth = u(rng);
    cost.verifyLookupCost = 1e-4 * u(rng);
    cost.separateDevices = u(rng) < 0.5;
    auto tr = episode(cfg, inputs, synthetic::ProcessParams{});
    const double s = simkernel::simulate_sync(tr, cost).makespan;
    const double a = simkernel::simulate_async(tr, cost).makespan;
    strict += a < s ? 1 : 0;
    worstRatio = std::max(worstRatio, a / s);
  }
  report("scheduler_dominance", strict == 100,
         fmt::format("{}/100 random configs with async makespan < sync makespan (max async/sync = {:.4f})", strict,
                     worstRatio));

  // r against m on real episodes with the default cost model.
  simkernel::CostModel cost;
  std::vector<double> rs, ra;
  for (std::size_t m : {4, 8, 16, 32}) {
    pipeline::PipelineConfig cfg;
    cfg.m = m;
    cfg.seed = 5;
    auto tr = episode(cfg, 10, synthetic::ProcessParams{});
    rs.push_back(simkernel::intensity_of(simkernel::simulate_sync(tr, cost), cost).r);
    ra.push_back(simkernel::intensity_of(simkernel::simulate_async(tr, cost), cost).r);
  }
  bool dec = true;
  for (std::size_t k = 1; k < rs.size(); ++k) dec = dec && rs[k] < rs[k - 1];
  const auto [lo, hi] = std::minmax_element(ra.begin(), ra.end());
  report("sync_r_decreasing_in_m", dec,
         fmt::format("m = 4 8 16 32: sync r = {:.5f}", fmt::join(rs, " ")));
  report("async_r_flat_in_m", (*hi - *lo) <= 0.05 * *lo,
         fmt::format("m = 4 8 16 32: async r = {:.4f}, spread {:.2f}% <= 5%", fmt::join(ra, " "),
                     100.0 * (*hi - *lo) / *lo));

  // Total sync time against the closed form, and linearity in m.
  synthetic::ProcessParams endless;
  endless.answerHazard.maxProbability = 0.0;
  std::vector<double> ms, total, closed;
  double worstRel = 0.0;
  for (std::size_t m : {4, 8, 16, 32}) {
    pipeline::PipelineConfig cfg;
    cfg.m = m;
    cfg.maxTurns = 6;
    cfg.tokenLimit = 1'000'000;
    cfg.seed = 9;
    auto tr = episode(cfg, 5, endless);
    const auto s = simkernel::simulate_sync(tr, cost);
    double cf = 0.0;
    for (std::size_t t = 1; t <= tr.turns(); ++t) {
      const double active = static_cast<double>(tr.perTurnVerified[t - 1]);
      cf += cost.barrierBase + cost.barrierCostPerCandidate * active * std::pow(1.0 + cost.barrierGrowth, t) +
            cost.verifyLookupCost * active;
    }
    ms.push_back(static_cast<double>(m));
    total.push_back(s.totalSyncTime);
    closed.push_back(cf);
    worstRel = std::max(worstRel, std::abs(s.totalSyncTime - cf) / cf);
  }
  const double slope = (total.back() - total.front()) / (ms.back() - ms.front());
  double worstLine = 0.0;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const double line = total.front() + slope * (ms[k] - ms.front());
    worstLine = std::max(worstLine, std::abs(total[k] - line) / line);
  }
  report("sync_time_linear_in_m", worstRel <= 0.01 && worstLine <= 0.01,
         fmt::format("6 turns, m = 4 8 16 32: T_s = {:.4f} s, max deviation from closed form {:.2e}, from the "
                     "line through the endpoints {:.2e} (<= 1%)",
                     fmt::join(total, " "), worstRel, worstLine));

  // Peak memory against m.
  bool mono = true;
  std::vector<double> peaks;
  double prevSync = 0.0, prevAsync = 0.0;
  for (std::size_t m : {1, 2, 4, 8, 16, 32, 64}) {
    pipeline::PipelineConfig cfg;
    cfg.m = m;
    cfg.seed = 4;
    auto tr = episode(cfg, 4, endless);
    const double ps = simkernel::simulate_sync(tr, cost).peakMemoryBytes;
    const double pa = simkernel::simulate_async(tr, cost).peakMemoryBytes;
    mono = mono && ps >= prevSync && pa >= prevAsync;
    prevSync = ps;
    prevAsync = pa;
    peaks.push_back(ps);
  }
  report("peak_memory_monotone_in_m", mono,
         fmt::format("m = 1..64: sync peak bytes = {:.3e} (async also non-decreasing)", fmt::join(peaks, " ")));
}

void pipeline_bookkeeping() {
  bool conserved = true, resampleGeq = true;
  std::size_t episodes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    pipeline::PipelineConfig cfg;
    cfg.m = 8;
    cfg.seed = seed;
    cfg.coverage = seed % 2 ? conformal::CoverageMode::conditional : conformal::CoverageMode::marginal;
    auto in = ids(5);
    synthetic::ProcessParams p;
    auto pool = synthetic_pool(in, cfg.m, cfg.kDraft, p, seed);
    auto cont = pipeline::run_episode(cfg, pool, in, p);
    cfg.intervention = pipeline::InterventionMode::resampling;
    auto res = pipeline::run_episode(cfg, pool, in, p);
    for (const auto* tr : {&cont, &res}) {
      try {
        pipeline::check_trace_invariants(*tr);
      } catch (const std::exception&) {
        conserved = false;
      }
      std::size_t kept = 0, emitted = 0, target = 0, wasted = 0;
      for (const auto& c : tr->chains) {
        std::size_t used = 0;
        for (const auto& r : c.history) {
          used += r.tokens();
          emitted += r.draftEmitted();
          target += r.targetTokens;
          wasted += r.wastedDraftTokens;
        }
        conserved = conserved && used == c.tokensUsed;
        kept += c.tokensUsed;
      }
      conserved = conserved && kept == tr->totalDraftTokens + tr->totalTargetTokens &&
                  emitted == tr->totalDraftTokens + tr->totalWastedTokens && target == tr->totalTargetTokens &&
                  wasted == tr->totalWastedTokens &&
                  tr->totalConsumedTokens() == emitted + target;
      ++episodes;
    }
    resampleGeq = resampleGeq && res.totalConsumedTokens() >= cont.totalConsumedTokens();
  }
  report("token_conservation", conserved,
         fmt::format("{} episodes: per-chain and per-episode token identities hold", episodes));
  report("resample_geq_continue", resampleGeq,
         "100 matched seeds: resampling consumed tokens >= continue-sampling consumed tokens");
}

void dynamics() {
  // Default dynamics, alpha = 0.4, 1000 seeds.
  const std::size_t seeds = 1000, inputs = 5, turns = 10;
  synthetic::ProcessParams p;
  std::vector<double> takeovers(turns, 0.0), keptNll(turns, 0.0), keptTokens(turns, 0.0);
  std::vector<double> draftNll(turns, 0.0), draftTokens(turns, 0.0);
  synthetic::ProcessParams draftOnly = p;
  draftOnly.answerHazard.maxProbability = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    pipeline::PipelineConfig cfg;
    cfg.seed = seed;
    auto tr = episode(cfg, inputs, p);
    for (std::size_t t = 0; t < tr.turns() && t < turns; ++t) takeovers[t] += static_cast<double>(tr.perTurnRejectionCounts[t]);
    for (const auto& c : tr.chains)
      for (const auto& r : c.history) {
        keptNll[r.turn - 1] += r.keptNll() * static_cast<double>(r.tokens());
        keptTokens[r.turn - 1] += static_cast<double>(r.tokens());
      }

    // The same chains evolved by the draft model alone.
    for (auto c : pipeline::make_chains(ids(inputs), cfg, p)) {
      for (std::size_t t = 1; t <= turns; ++t) {
        auto [block, next] = synthetic::draft_block(c.quality, cfg.kDraft, t, draftOnly,
                                                    derive_seed(seed, "draft", {c.chainIndex, t}));
        draftNll[t - 1] += conformal::nll_score(block.tokenLogProbs).value() * static_cast<double>(block.length());
        draftTokens[t - 1] += static_cast<double>(block.length());
        c.quality = next;
      }
    }
  }
  bool nonInc = true;
  for (auto& v : takeovers) v /= static_cast<double>(seeds);
  for (std::size_t t = 1; t < turns; ++t) nonInc = nonInc && takeovers[t] <= takeovers[t - 1];
  report("takeovers_non_increasing", nonInc,
         fmt::format("1000 seeds, m=16, alpha=0.4: mean takeovers per turn = {:.2f}", fmt::join(takeovers, " ")));

  bool draftUp = true, keptDown = true;
  for (std::size_t t = 0; t < turns; ++t) {
    draftNll[t] /= draftTokens[t];
    keptNll[t] = keptTokens[t] > 0 ? keptNll[t] / keptTokens[t] : 0.0;
  }
  for (std::size_t t = 1; t < turns; ++t) {
    draftUp = draftUp && draftNll[t] > draftNll[t - 1];
    keptDown = keptDown && (keptTokens[t] == 0 || keptNll[t] <= keptNll[t - 1]);
  }
  report("nll_increasing_draft_only", draftUp,
         fmt::format("1000 seeds: mean per-token NLL per turn = {:.4f}", fmt::join(draftNll, " ")));
  report("nll_non_increasing_with_takeovers", keptDown,
         fmt::format("1000 seeds, alpha=0.4: mean kept per-token NLL per turn = {:.4f}", fmt::join(keptNll, " ")));
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = s.str();
  }
  return out;
}

void determinism() {
  config::ExperimentConfig cfg;
  cfg.seed = 11;
  cfg.pipeline.seed = 11;
  cfg.inputs = 20;
  const auto root = fs::temp_directory_path() / "asyncscale_acceptance";
  fs::remove_all(root);
  std::ostringstream log;
  commands::cmd_run(cfg, root / "a", std::nullopt, log);
  commands::cmd_run(cfg, root / "b", std::nullopt, log);
  const auto a = read_dir(root / "a"), b = read_dir(root / "b");
  report("run_byte_identical", !a.empty() && a == b,
         fmt::format("cmd_run twice with one config: {} files, all byte-identical", a.size()));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> steps{
      {"marginal_validity", check_marginal_validity}, {"marginal_uniformity", check_marginal_uniformity},
      {"conditional", check_conditional},                {"simultaneous_coverage", check_simultaneous},
      {"budget", budget},                    {"scheduler", scheduler},
      {"pipeline_bookkeeping", pipeline_bookkeeping},
      {"dynamics", dynamics},                {"determinism", determinism},
  };
  for (const auto& [name, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      report(name, false, fmt::format("threw: {}", e.what()));
    }
  }
  fmt::print("{} criteria failed\n", failures);
  return failures ? 1 : 0;
}
