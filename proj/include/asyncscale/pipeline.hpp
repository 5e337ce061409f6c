// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Three-stage rejection-sampling pipeline. Every turn each active chain
// (1) drafts a block of up to K_d tokens, (2) is scored and given a conformal
// p-value, (3) if p <= alpha is taken over by the target for up to K_t tokens,
// then (4) is checked for termination. Parallel scaling is m chains per input,
// sequential scaling is the turn loop.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asyncscale/conformal.hpp"
#include "asyncscale/synthetic.hpp"

namespace asyncscale::pipeline {

using conformal::AlphaLevel;
using conformal::CoverageMode;
using conformal::Decision;

enum class InterventionMode { continueSampling, resampling };

std::string_view to_string(InterventionMode mode) noexcept;
InterventionMode parse_intervention_mode(std::string_view text);

struct PipelineConfig {
  std::size_t m = 16;
  std::size_t kDraft = 500;
  std::size_t kTarget = 500;
  std::size_t maxTurns = 10;
  std::size_t tokenLimit = 8192;
  AlphaLevel alpha{0.4};
  CoverageMode coverage = CoverageMode::marginal;
  InterventionMode intervention = InterventionMode::continueSampling;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class ChainStatus { active, answered, turnLimit, tokenLimit };

std::string_view to_string(ChainStatus status) noexcept;

struct TurnRecord {
  std::size_t turn = 0;  // 1-based
  records::Role role = records::Role::draft;  // role of the block that closed the turn
  double score = 0.0;        // draft block
  double targetScore = 0.0;  // target block, 0 when accepted
  conformal::PValueRecord p;
  Decision decision = Decision::accept;
  std::size_t draftTokens = 0;        // draft tokens kept in the chain
  std::size_t targetTokens = 0;
  std::size_t wastedDraftTokens = 0;  // discarded draft tokens (resampling)
  bool endedWithAnswer = false;

  std::size_t tokens() const noexcept { return draftTokens + targetTokens; }
  /// Draft tokens emitted this turn, kept or not.
  std::size_t draftEmitted() const noexcept { return draftTokens + wastedDraftTokens; }
  /// Mean per-token NLL over the tokens the chain kept this turn.
  double keptNll() const noexcept {
    const double total = score * static_cast<double>(draftTokens) +
                         targetScore * static_cast<double>(targetTokens);
    return tokens() ? total / static_cast<double>(tokens()) : 0.0;
  }
};

struct ChainState {
  std::string inputId;
  std::string candidateId;
  std::size_t chainIndex = 0;
  synthetic::LatentQuality quality;
  std::size_t tokensUsed = 0;
  std::size_t turn = 0;  // completed turns
  ChainStatus status = ChainStatus::active;
  std::vector<TurnRecord> history;
};

struct TurnResult {
  conformal::RejectionSet rejections;
  std::vector<TurnRecord> records;  // one per chain that ran, in chain order
};

struct EpisodeTrace {
  PipelineConfig config;
  synthetic::ProcessParams params;
  std::string poolHash;
  std::vector<std::string> inputs;
  std::vector<ChainState> chains;
  std::vector<std::size_t> perTurnRejectionCounts;
  std::vector<std::size_t> perTurnVerified;
  std::size_t totalDraftTokens = 0;
  std::size_t totalTargetTokens = 0;
  std::size_t totalWastedTokens = 0;

  std::size_t turns() const noexcept { return perTurnVerified.size(); }
  std::size_t totalConsumedTokens() const noexcept {
    return totalDraftTokens + totalTargetTokens + totalWastedTokens;
  }
  /// 16 hex digits identifying the episode content; schedules carry it.
  std::string fingerprint() const;
};

/// Fresh chains for `inputs` x cfg.m, qualities drawn from the episode stream.
std::vector<ChainState> make_chains(std::span<const std::string> inputs, const PipelineConfig& cfg,
                                    const synthetic::ProcessParams& params);

/// Advances every active chain in `chains` by one turn. Marginal mode ranks
/// each candidate against the frozen pool; conditional mode ranks it against
/// the other candidates of its input drawn this turn. Throws Error
/// "nothing to run" when no chain is active.
TurnResult run_turn(std::span<ChainState> chains, const conformal::CalibrationPool& pool,
                    const PipelineConfig& cfg, const synthetic::ProcessParams& params);

/// Priority answered > tokenLimit > turnLimit.
ChainStatus check_termination(const ChainState& chain, bool endedWithAnswer,
                              const PipelineConfig& cfg) noexcept;

EpisodeTrace run_episode(const PipelineConfig& cfg, const conformal::CalibrationPool& pool,
                         std::span<const std::string> inputs,
                         const synthetic::ProcessParams& params);

/// Throws InvariantError if per-turn counts or token totals disagree with
/// the chain histories.
void check_trace_invariants(const EpisodeTrace& trace);

}  // namespace asyncscale::pipeline
