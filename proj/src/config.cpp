// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "asyncscale/error.hpp"

namespace asyncscale::config {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(fmt::format("invalid value for '{}': '{}'", key, raw));
  return value;
}

double parse_real(const std::string& key, const std::string& raw) {
  // from_chars for double is missing from older standard libraries.
  std::istringstream in(trim(raw));
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof()) throw ConfigError(fmt::format("invalid value for '{}': '{}'", key, raw));
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string t = trim(raw);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(fmt::format("invalid value for '{}': '{}'", key, raw));
}

template <typename F>
auto parse_list(const std::string& key, const std::string& raw, F item) {
  std::vector<decltype(item(key, raw))> out;
  std::stringstream in(raw);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(item(key, part));
  if (out.empty()) throw ConfigError(fmt::format("'{}' must list at least one value", key));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

#define AS_SIZE(expr) [](ExperimentConfig& c, const std::string& k, const std::string& v) { expr = parse_number<std::size_t>(k, v); }
#define AS_REAL(expr) [](ExperimentConfig& c, const std::string& k, const std::string& v) { expr = parse_real(k, v); }

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.seed",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_number<std::uint64_t>(k, v);
       }},
      {"experiment.inputs", AS_SIZE(c.inputs)},
      {"experiment.out",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = trim(v); }},

      {"calibration.m", AS_SIZE(c.calibration.m)},
      {"calibration.block_tokens", AS_SIZE(c.calibration.blockTokens)},
      {"calibration.source",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const std::string t = trim(v);
         if (t == "synthetic") c.calibration.source = CalibrationSource::synthetic;
         else if (t == "records") c.calibration.source = CalibrationSource::records;
         else throw ConfigError(fmt::format("invalid value for '{}': '{}'", k, v));
       }},
      {"calibration.records",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.calibration.records = trim(v); }},
      {"calibration.turn",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.calibration.turn = parse_number<std::int64_t>(k, v);
       }},
      {"calibration.pool_hash",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.calibration.poolHash = trim(v); }},

      {"pipeline.m", AS_SIZE(c.pipeline.m)},
      {"pipeline.k_draft", AS_SIZE(c.pipeline.kDraft)},
      {"pipeline.k_target", AS_SIZE(c.pipeline.kTarget)},
      {"pipeline.max_turns", AS_SIZE(c.pipeline.maxTurns)},
      {"pipeline.token_limit", AS_SIZE(c.pipeline.tokenLimit)},
      {"pipeline.alpha",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.pipeline.alpha = conformal::AlphaLevel(parse_real(k, v));
       }},
      {"pipeline.coverage",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.pipeline.coverage = conformal::parse_coverage_mode(trim(v));
       }},
      {"pipeline.intervention",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.pipeline.intervention = pipeline::parse_intervention_mode(trim(v));
       }},

      {"process.draft_drift_mean", AS_REAL(c.process.draftDriftMean)},
      {"process.target_pull_mean", AS_REAL(c.process.targetPullMean)},
      {"process.noise_std", AS_REAL(c.process.noiseStd)},
      {"process.token_log_sd", AS_REAL(c.process.tokenLogSd)},
      {"process.draft_nll_offset", AS_REAL(c.process.draftNllOffset)},
      {"process.target_nll_offset", AS_REAL(c.process.targetNllOffset)},
      {"process.initial_theta_mean", AS_REAL(c.process.initialThetaMean)},
      {"process.input_theta_sd", AS_REAL(c.process.inputThetaSd)},
      {"process.candidate_theta_sd", AS_REAL(c.process.candidateThetaSd)},
      {"process.hazard_max", AS_REAL(c.process.answerHazard.maxProbability)},
      {"process.hazard_midpoint", AS_REAL(c.process.answerHazard.midpointTurn)},
      {"process.hazard_scale", AS_REAL(c.process.answerHazard.scale)},

      {"cost.t_compute", AS_REAL(c.cost.tCompute)},
      {"cost.t_memory", AS_REAL(c.cost.tMemory)},
      {"cost.flops_per_token_draft", AS_REAL(c.cost.flopsPerTokenDraft)},
      {"cost.flops_per_token_target", AS_REAL(c.cost.flopsPerTokenTarget)},
      {"cost.bytes_per_token_draft", AS_REAL(c.cost.bytesPerTokenDraft)},
      {"cost.bytes_per_token_target", AS_REAL(c.cost.bytesPerTokenTarget)},
      {"cost.kv_bytes_per_token", AS_REAL(c.cost.kvBytesPerToken)},
      {"cost.capacity_bytes", AS_REAL(c.cost.capacityBytes)},
      {"cost.barrier_base", AS_REAL(c.cost.barrierBase)},
      {"cost.barrier_cost_per_candidate", AS_REAL(c.cost.barrierCostPerCandidate)},
      {"cost.barrier_growth", AS_REAL(c.cost.barrierGrowth)},
      {"cost.verify_lookup_cost", AS_REAL(c.cost.verifyLookupCost)},
      {"cost.separate_devices",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.cost.separateDevices = parse_bool(k, v);
       }},

      {"verify.n", AS_SIZE(c.verify.n)},
      {"verify.m", AS_SIZE(c.verify.m)},
      {"verify.conditional_m", AS_SIZE(c.verify.conditionalM)},
      {"verify.trials", AS_SIZE(c.verify.trials)},
      {"verify.generator",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.verify.generator = synthetic::parse_distribution(trim(v));
       }},
      {"verify.simultaneous_alpha", AS_REAL(c.verify.simultaneousAlpha)},
      {"verify.test_shift", AS_REAL(c.verify.testShift)},
      {"verify.threads", AS_SIZE(c.verify.threads)},

      {"sweep.alpha",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.alpha = parse_list(k, v, parse_real);
       }},
      {"sweep.m",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.m = parse_list(k, v, parse_number<std::size_t>);
       }},
      {"sweep.k_draft",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.kDraft = parse_list(k, v, parse_number<std::size_t>);
       }},
      {"sweep.turns",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.turns = parse_list(k, v, parse_number<std::size_t>);
       }},
  };
  return table;
}

#undef AS_SIZE
#undef AS_REAL

}  // namespace

std::vector<std::string> ExperimentConfig::inputIds() const {
  std::vector<std::string> ids;
  ids.reserve(inputs);
  for (std::size_t i = 0; i < inputs; ++i) ids.push_back(fmt::format("q{}", i));
  return ids;
}

void ExperimentConfig::validate() const {
  try {
    if (inputs == 0) throw ConfigError("experiment.inputs must be >= 1");
    if (calibration.m == 0) throw ConfigError("calibration.m must be >= 1");
    if (calibration.blockTokens == 0) throw ConfigError("calibration.block_tokens must be >= 1");
    if (calibration.source == CalibrationSource::records && calibration.records.empty())
      throw ConfigError("calibration.source = records needs calibration.records");
    if (verify.n == 0 || verify.m == 0 || verify.conditionalM == 0)
      throw ConfigError("verify.n, verify.m and verify.conditional_m must be >= 1");
    (void)conformal::AlphaLevel(verify.simultaneousAlpha);
    for (double a : sweep.alpha) (void)conformal::AlphaLevel(a);
    for (std::size_t m : sweep.m)
      if (m == 0) throw ConfigError("sweep.m values must be >= 1");
    for (std::size_t k : sweep.kDraft)
      if (k == 0) throw ConfigError("sweep.k_draft values must be >= 1");
    for (std::size_t t : sweep.turns)
      if (t == 0) throw ConfigError("sweep.turns values must be >= 1");
    pipeline.validate();
    process.validate();
    cost.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("malformed config at line {}: {}", e.line(), e.message()));
  }

  ExperimentConfig cfg;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (!body.data().empty())
      throw ConfigError(fmt::format("key '{}' outside a section", section));
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      auto it = table.find(name);
      if (it == table.end()) throw ConfigError(fmt::format("unknown config key '{}'", name));
      try {
        it->second(cfg, name, value.data());
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(fmt::format("invalid value for '{}': {}", name, e.what()));
      }
    }
  }
  cfg.pipeline.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace asyncscale::config
