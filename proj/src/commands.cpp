// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/commands.hpp"

#include <cstdlib>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "asyncscale/error.hpp"
#include "asyncscale/records.hpp"
#include "asyncscale/report_io.hpp"
#include "asyncscale/synthetic.hpp"

namespace asyncscale::commands {

namespace fs = std::filesystem;

fs::path resolve_out_dir(const std::optional<fs::path>& flag, const config::ExperimentConfig& cfg) {
  if (flag && !flag->empty()) return *flag;
  if (!cfg.out.empty()) return cfg.out;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  return "asyncscale_out";
}

conformal::CalibrationPool build_pool(const config::ExperimentConfig& cfg) {
  const auto& cal = cfg.calibration;
  if (cal.source == config::CalibrationSource::records) {
    auto source = synthetic::score_source_from_records(cal.records, cal.turn);
    if (source.completeSamplesPerInput() < cal.m)
      throw IoError(fmt::format("records file '{}' has fewer than {} samples for some input",
                                cal.records.string(), cal.m));
    try {
      return conformal::online_calibrate(source.inputIds(), cal.m, source);
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw IoError(fmt::format("calibration from '{}' failed: {}", cal.records.string(), e.what()));
    }
  }
  const synthetic::SyntheticScoreSource source(cfg.process, cal.blockTokens, cfg.seed);
  return conformal::online_calibrate(cfg.inputIds(), cal.m, source);
}

conformal::CalibrationPool cmd_calibrate(const config::ExperimentConfig& cfg, const fs::path& out,
                                         const std::optional<fs::path>& poolPath, std::ostream& log) {
  auto pool = build_pool(cfg);
  const fs::path path = poolPath ? *poolPath : out / "pool.jsonl";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  records::write_pool(path, pool);
  fmt::print(log, "pool {}: n={} m={} hash={}\n", path.string(), pool.n(), pool.m(), pool.hash());
  return pool;
}

RunResult simulate_run(const config::ExperimentConfig& cfg, const conformal::CalibrationPool& pool) {
  if (cfg.pipeline.coverage == conformal::CoverageMode::conditional && !pool.grouped())
    throw ConfigError("conditional mode requires grouped pool");
  if (cfg.calibration.poolHash && *cfg.calibration.poolHash != pool.hash())
    throw ConfigError(fmt::format("pool hash {} does not match pinned calibration.pool_hash {}",
                                  pool.hash(), *cfg.calibration.poolHash));
  RunResult r;
  const auto inputs = cfg.inputIds();
  r.episode = pipeline::run_episode(cfg.pipeline, pool, inputs, cfg.process);
  r.sync = simkernel::simulate_sync(r.episode, cfg.cost);
  r.async = simkernel::simulate_async(r.episode, cfg.cost);
  r.intensitySync = simkernel::intensity_of(r.sync, cfg.cost);
  r.intensityAsync = simkernel::intensity_of(r.async, cfg.cost);
  r.budget = metrics::budget_accuracy(r.episode);
  r.efficiency = metrics::efficiency(r.sync, r.async, r.episode);
  return r;
}

namespace {

conformal::CalibrationPool load_or_build_pool(const config::ExperimentConfig& cfg,
                                              const std::optional<fs::path>& poolPath) {
  return poolPath ? records::read_pool(*poolPath) : build_pool(cfg);
}

std::string run_summary(const config::ExperimentConfig& cfg, const conformal::CalibrationPool& pool,
                        const RunResult& r) {
  const auto& p = cfg.pipeline;
  std::string out = fmt::format(
      "[run]\nseed = {}\ninputs = {}\nm = {}\nalpha = {}\ncoverage = {}\nintervention = {}\n"
      "k_draft = {}\nk_target = {}\nmax_turns = {}\ntoken_limit = {}\npool_hash = {}\npool_n = {}\n"
      "pool_m = {}\nepisode = {}\nturns = {}\nchains = {}\n",
      cfg.seed, cfg.inputs, p.m, p.alpha.value(), conformal::to_string(p.coverage),
      pipeline::to_string(p.intervention), p.kDraft, p.kTarget, p.maxTurns, p.tokenLimit, pool.hash(),
      pool.n(), pool.m(), r.episode.fingerprint(), r.episode.turns(), r.episode.chains.size());
  out += "\n" + report::budget_summary(r.budget);
  out += "\n" + report::efficiency_summary(r.efficiency);
  out += fmt::format("oom_sync = {}\noom_async = {}\ntotal_sync_time_sync = {}\ntotal_sync_time_async = {}\n",
                     r.sync.oom, r.async.oom, r.sync.totalSyncTime, r.async.totalSyncTime);
  out += "\n[intensity_sync]\n" + report::intensity_kv(r.intensitySync);
  out += "\n[intensity_async]\n" + report::intensity_kv(r.intensityAsync);
  return out;
}

void write_run(const config::ExperimentConfig& cfg, const conformal::CalibrationPool& pool,
               const RunResult& r, const fs::path& out) {
  report::write_file(out / "episode.jsonl", report::episode_jsonl(r.episode));
  report::write_file(out / "episode_summary.csv", report::episode_summary_csv(r.episode));
  report::write_file(out / "sync.csv", report::schedule_csv(r.sync));
  report::write_file(out / "async.csv", report::schedule_csv(r.async));
  report::write_file(out / "intensity_sync.txt", report::intensity_kv(r.intensitySync));
  report::write_file(out / "intensity_async.txt", report::intensity_kv(r.intensityAsync));
  report::write_file(out / "budget_per_input.csv", report::budget_csv(r.budget));
  report::write_file(out / "summary.txt", run_summary(cfg, pool, r));

  report::write_file(out / "fig1_memory.csv",
                     report::series_csv("time", "resident_bytes", r.sync.memoryTimeline));
  report::Series syncTurns, takeovers;
  for (std::size_t t = 0; t < r.episode.turns(); ++t) {
    syncTurns.emplace_back(static_cast<double>(t + 1), r.sync.perTurnSyncTime[t]);
    takeovers.emplace_back(static_cast<double>(t + 1),
                           static_cast<double>(r.episode.perTurnRejectionCounts[t]));
  }
  report::write_file(out / "fig3b_sync_turns.csv", report::series_csv("turn", "sync_seconds", syncTurns));
  report::write_file(out / "fig7b_takeovers.csv", report::series_csv("turn", "takeovers", takeovers));
  report::write_file(out / "fig5_budget.csv",
                     report::series_csv("alpha", "rejection_rate",
                                        {{r.budget.targetAlpha, r.budget.empiricalRate}}));
}

}  // namespace

RunResult cmd_run(const config::ExperimentConfig& cfg, const fs::path& out,
                  const std::optional<fs::path>& poolPath, std::ostream& log) {
  const auto pool = load_or_build_pool(cfg, poolPath);
  RunResult r = simulate_run(cfg, pool);
  write_run(cfg, pool, r, out);
  fmt::print(log, "episode {}: {} chains, {} turns, rejection rate {} (alpha {}), speedup {}\n",
             r.episode.fingerprint(), r.episode.chains.size(), r.episode.turns(), r.budget.empiricalRate,
             r.budget.targetAlpha, r.efficiency.speedup);
  return r;
}

VerifyResult cmd_verify(const config::ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  const auto& v = cfg.verify;
  if (v.trials < metrics::kMinTrials)
    throw ConfigError(fmt::format("insufficient trials: {} < {}", v.trials, metrics::kMinTrials));

  metrics::MonteCarloSpec spec;
  spec.generator = v.generator;
  spec.n = v.n;
  spec.m = v.m;
  spec.trials = v.trials;
  spec.testShift = v.testShift;
  spec.threads = v.threads;

  VerifyResult r;
  spec.seed = derive_seed(cfg.seed, "verify-marginal");
  r.marginal = metrics::verify_marginal_validity(spec);

  spec.m = v.conditionalM;
  spec.seed = derive_seed(cfg.seed, "verify-conditional");
  r.conditional = metrics::verify_conditional_validity(spec);

  spec.m = v.m;
  spec.generator = synthetic::Distribution::distinctUniform;
  spec.alphaGrid = {v.simultaneousAlpha};
  spec.seed = derive_seed(cfg.seed, "verify-simultaneous");
  r.simultaneous = metrics::verify_simultaneous_coverage(spec);

  report::write_file(out / "marginal.csv", report::coverage_csv(r.marginal));
  report::write_file(out / "marginal_atoms.csv", report::atoms_csv(r.marginal));
  report::write_file(out / "conditional.csv", report::coverage_csv(r.conditional));
  report::write_file(out / "conditional_atoms.csv", report::atoms_csv(r.conditional));
  report::write_file(out / "simultaneous.csv", report::coverage_csv(r.simultaneous));
  report::write_file(out / "coverage_summary.txt",
                     report::coverage_summary(r.marginal) + "\n" + report::coverage_summary(r.conditional) +
                         "\n" + report::coverage_summary(r.simultaneous));

  fmt::print(log, "marginal: ks={} violated={}\n", r.marginal.ksDistanceToUniform, r.marginal.violated());
  fmt::print(log, "conditional: ks={} violated={}\n", r.conditional.ksDistanceToUniform,
             r.conditional.violated());
  fmt::print(log, "simultaneous: acceptance={} in [{}, {}] violated={}\n", r.simultaneous.acceptance,
             r.simultaneous.lowerBound, r.simultaneous.upperBound, r.simultaneous.violated());
  return r;
}

namespace {

struct SweepPoint {
  double x = 0.0;
  RunResult result;
};

std::string trend(const std::vector<double>& ys, bool strict, bool increasing) {
  for (std::size_t k = 1; k < ys.size(); ++k) {
    const double d = increasing ? ys[k] - ys[k - 1] : ys[k - 1] - ys[k];
    if (strict ? !(d > 0.0) : d < 0.0) return "no";
  }
  return "yes";
}

}  // namespace

void cmd_sweep(const config::ExperimentConfig& cfg, const std::string& axisName, const fs::path& out,
               const std::optional<fs::path>& poolPath, std::ostream& log) {
  std::string axis = axisName;
  if (axis == "K_d" || axis == "k_d" || axis == "kdraft") axis = "k_draft";
  std::vector<double> values;
  std::function<void(config::ExperimentConfig&, double)> apply;
  if (axis == "alpha") {
    values = cfg.sweep.alpha;
    apply = [](config::ExperimentConfig& c, double x) { c.pipeline.alpha = conformal::AlphaLevel(x); };
  } else if (axis == "m") {
    for (auto m : cfg.sweep.m) values.push_back(static_cast<double>(m));
    apply = [](config::ExperimentConfig& c, double x) { c.pipeline.m = static_cast<std::size_t>(x); };
  } else if (axis == "k_draft") {
    for (auto k : cfg.sweep.kDraft) values.push_back(static_cast<double>(k));
    apply = [](config::ExperimentConfig& c, double x) { c.pipeline.kDraft = static_cast<std::size_t>(x); };
  } else if (axis == "turns") {
    for (auto t : cfg.sweep.turns) values.push_back(static_cast<double>(t));
    apply = [](config::ExperimentConfig& c, double x) { c.pipeline.maxTurns = static_cast<std::size_t>(x); };
  } else {
    throw ConfigError(fmt::format("unknown sweep axis '{}' (expected alpha, m, K_d or turns)", axisName));
  }

  const auto pool = load_or_build_pool(cfg, poolPath);
  std::vector<SweepPoint> points;
  for (double x : values) {
    config::ExperimentConfig point = cfg;
    apply(point, x);
    try {
      point.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("sweep point {}={}: {}", axis, x, e.what()));
    }
    SweepPoint sp{x, simulate_run(point, pool)};
    write_run(point, pool, sp.result, out / fmt::format("{}_{}", axis, x));
    points.push_back(std::move(sp));
  }

  report::Series budget, r, syncLatency, memory, syncTurns;
  std::vector<double> rs, errs, sync, mem, speed;
  std::string table = fmt::format(
      "{},rejection_rate,abs_error,r_sync,r_async,total_sync_seconds,peak_memory_sync,peak_memory_async,"
      "makespan_sync,makespan_async,speedup\n",
      axis);
  for (const auto& p : points) {
    const auto& res = p.result;
    table += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", p.x, res.budget.empiricalRate,
                         res.budget.absError, res.intensitySync.r, res.intensityAsync.r, res.sync.totalSyncTime,
                         res.sync.peakMemoryBytes, res.async.peakMemoryBytes, res.efficiency.makespanSync,
                         res.efficiency.makespanAsync, res.efficiency.speedup);
    budget.emplace_back(p.x, res.budget.empiricalRate);
    r.emplace_back(p.x, res.intensitySync.r);
    syncLatency.emplace_back(p.x, res.sync.totalSyncTime);
    memory.emplace_back(p.x, res.sync.peakMemoryBytes);
    syncTurns.emplace_back(p.x, res.sync.totalSyncTime);
    rs.push_back(res.intensitySync.r);
    errs.push_back(res.budget.absError);
    sync.push_back(res.sync.totalSyncTime);
    mem.push_back(res.sync.peakMemoryBytes);
    speed.push_back(res.efficiency.speedup);
  }
  report::write_file(out / fmt::format("sweep_{}.csv", axis), table);

  double maxErr = 0.0, minSpeedup = speed.empty() ? 1.0 : speed.front();
  for (double e : errs) maxErr = std::max(maxErr, e);
  for (double s : speed) minSpeedup = std::min(minSpeedup, s);

  if (axis == "alpha") {
    report::write_file(out / "fig5_budget.csv", report::series_csv("alpha", "rejection_rate", budget));
    fmt::print(log, "alpha sweep: max budget abs error {}\n", maxErr);
  } else if (axis == "m") {
    report::write_file(out / "fig4b_r_vs_m.csv", report::series_csv("m", "r", r));
    report::write_file(out / "fig3a_sync_latency.csv", report::series_csv("m", "sync_seconds", syncLatency));
    report::write_file(out / "fig1_memory.csv", report::series_csv("m", "peak_memory_bytes", memory));
    fmt::print(log, "m sweep: r (sync) strictly decreasing: {}; sync time increasing: {}; peak memory non-decreasing: {}\n",
               trend(rs, true, false), trend(sync, true, true), trend(mem, false, true));
  } else if (axis == "k_draft") {
    fmt::print(log, "K_d sweep: max budget abs error {}\n", maxErr);
  } else {
    report::write_file(out / "fig3b_sync_turns.csv", report::series_csv("turns", "sync_seconds", syncTurns));
    fmt::print(log, "turns sweep: total sync time non-decreasing: {}\n", trend(sync, false, true));
  }
  fmt::print(log, "{} points, minimum speedup {}\n", points.size(), minSpeedup);
}

int main_entry(int argc, char** argv) {
  CLI::App app{"asyncscale: conformal rejection sampling and sync/async scheduling simulator"};
  app.require_subcommand(1);

  std::string configPath;
  std::optional<fs::path> outDir, poolPath;
  std::string axis;

  auto addCommon = [&](CLI::App* sub, bool withPool) {
    sub->add_option("--config", configPath, "experiment config (INI)")->required();
    sub->add_option("--out", outDir, "output directory");
    if (withPool) sub->add_option("--pool", poolPath, "calibration pool file");
  };
  auto* calibrate = app.add_subcommand("calibrate", "build the calibration pool");
  addCommon(calibrate, true);
  auto* run = app.add_subcommand("run", "simulate one episode under sync and async schedules");
  addCommon(run, true);
  auto* verify = app.add_subcommand("verify", "Monte-Carlo checks of the coverage guarantees");
  addCommon(verify, false);
  auto* sweep = app.add_subcommand("sweep", "run one episode per point of a parameter axis");
  addCommon(sweep, true);
  sweep->add_option("--axis", axis, "alpha | m | K_d | turns")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const auto cfg = config::load_config(configPath);
    const fs::path out = resolve_out_dir(outDir, cfg);
    if (*calibrate) {
      cmd_calibrate(cfg, out, poolPath, std::cout);
    } else if (*run) {
      cmd_run(cfg, out, poolPath, std::cout);
      fmt::print("wrote {}\n", out.string());
    } else if (*verify) {
      const auto r = cmd_verify(cfg, out, std::cout);
      if (!r.ok()) {
        fmt::print(std::cerr, "error: coverage bound violated beyond epsilon\n");
        return kExitBound;
      }
    } else if (*sweep) {
      cmd_sweep(cfg, axis, out, poolPath, std::cout);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    fmt::print(std::cerr, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const InvariantError& e) {
    fmt::print(std::cerr, "invariant violated: {}\n", e.what());
    return kExitInvariant;
  } catch (const fs::filesystem_error& e) {
    fmt::print(std::cerr, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "internal error: {}\n", e.what());
    return kExitInvariant;
  }
}

}  // namespace asyncscale::commands
