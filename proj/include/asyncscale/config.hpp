// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Experiment configuration: one INI file with sections
//
//   [experiment]  seed, inputs, out
//   [calibration] m, block_tokens, source (synthetic|records), records, turn, pool_hash
//   [pipeline]    m, k_draft, k_target, max_turns, token_limit, alpha, coverage, intervention
//   [process]     ProcessParams fields (snake_case), hazard_max, hazard_midpoint, hazard_scale
//   [cost]        CostModel fields (snake_case)
//   [verify]      n, m, conditional_m, trials, generator, simultaneous_alpha, test_shift, threads
//   [sweep]       alpha, m, k_draft, turns (comma-separated lists)
//
// Unknown sections or keys are rejected. All randomness derives from
// experiment.seed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "asyncscale/pipeline.hpp"
#include "asyncscale/simkernel.hpp"
#include "asyncscale/synthetic.hpp"

namespace asyncscale::config {

enum class CalibrationSource { synthetic, records };

struct CalibrationConfig {
  std::size_t m = 16;
  std::size_t blockTokens = 500;  // K_cal
  CalibrationSource source = CalibrationSource::synthetic;
  std::filesystem::path records;
  std::int64_t turn = 0;
  std::optional<std::string> poolHash;  // pinned pool, checked by `run`
};

struct VerifyConfig {
  std::size_t n = 20;
  std::size_t m = 8;
  std::size_t conditionalM = 7;
  std::size_t trials = 100'000;
  synthetic::Distribution generator = synthetic::Distribution::distinctUniform;
  double simultaneousAlpha = 0.25;
  double testShift = 0.0;
  std::size_t threads = 0;
};

struct SweepConfig {
  std::vector<double> alpha{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::size_t> m{4, 8, 16, 32, 64};
  std::vector<std::size_t> kDraft{100, 250, 500, 1000};
  std::vector<std::size_t> turns{1, 2, 4, 6, 8, 10};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t inputs = 100;
  std::filesystem::path out;  // empty: use --out or the environment default
  CalibrationConfig calibration;
  pipeline::PipelineConfig pipeline;  // pipeline.seed mirrors seed
  synthetic::ProcessParams process;
  simkernel::CostModel cost;
  VerifyConfig verify;
  SweepConfig sweep;

  /// "q0", "q1", ... one per input.
  std::vector<std::string> inputIds() const;
  /// Throws ConfigError on an inconsistent combination.
  void validate() const;
};

/// Throws ConfigError on malformed text, unknown keys or invalid values.
ExperimentConfig parse_config(const std::string& text);
/// As parse_config; an unreadable file is a ConfigError naming the path.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace asyncscale::config
