// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/pipeline.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "asyncscale/error.hpp"
#include "asyncscale/seed.hpp"

namespace asyncscale::pipeline {

std::string_view to_string(InterventionMode mode) noexcept {
  return mode == InterventionMode::continueSampling ? "continue" : "resample";
}

InterventionMode parse_intervention_mode(std::string_view text) {
  if (text == "continue" || text == "continueSampling") return InterventionMode::continueSampling;
  if (text == "resample" || text == "resampling") return InterventionMode::resampling;
  throw Error(fmt::format("unknown intervention mode '{}'", text));
}

std::string_view to_string(ChainStatus status) noexcept {
  switch (status) {
    case ChainStatus::active: return "active";
    case ChainStatus::answered: return "answered";
    case ChainStatus::turnLimit: return "turn_limit";
    case ChainStatus::tokenLimit: return "token_limit";
  }
  return "unknown";
}

void PipelineConfig::validate() const {
  if (m == 0) throw Error("m must be >= 1");
  if (kDraft == 0 || kTarget == 0) throw Error("K_d and K_t must be >= 1");
  if (maxTurns == 0) throw Error("maxTurns must be >= 1");
  if (tokenLimit < kDraft) throw Error("tokenLimit must be >= K_d");
}

std::string EpisodeTrace::fingerprint() const {
  std::uint64_t h = fnv1a64(fmt::format("episode:{}:{}:{}:{}:{};", config.seed, config.m,
                                        chains.size(), poolHash, turns()));
  for (const auto& c : chains) {
    h = fnv1a64(fmt::format("{}|{}|{}|", c.candidateId, c.tokensUsed, to_string(c.status)), h);
    for (const auto& r : c.history)
      h = fnv1a64(fmt::format("{},{},{},{},{};", r.turn, r.p.numerator, r.draftTokens,
                              r.targetTokens, r.wastedDraftTokens),
                  h);
  }
  return fmt::format("{:016x}", h);
}

std::vector<ChainState> make_chains(std::span<const std::string> inputs, const PipelineConfig& cfg,
                                    const synthetic::ProcessParams& params) {
  std::vector<ChainState> chains;
  chains.reserve(inputs.size() * cfg.m);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < cfg.m; ++j) {
      ChainState c;
      c.inputId = inputs[i];
      c.candidateId = fmt::format("{}/{}", inputs[i], j);
      c.chainIndex = i * cfg.m + j;
      c.quality = synthetic::initial_quality(params, cfg.seed, "episode", inputs[i], j);
      chains.push_back(std::move(c));
    }
  }
  return chains;
}

ChainStatus check_termination(const ChainState& chain, bool endedWithAnswer,
                              const PipelineConfig& cfg) noexcept {
  if (endedWithAnswer) return ChainStatus::answered;
  if (chain.tokensUsed >= cfg.tokenLimit) return ChainStatus::tokenLimit;
  if (chain.turn >= cfg.maxTurns) return ChainStatus::turnLimit;
  return ChainStatus::active;
}

TurnResult run_turn(std::span<ChainState> chains, const conformal::CalibrationPool& pool,
                    const PipelineConfig& cfg, const synthetic::ProcessParams& params) {
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < chains.size(); ++k)
    if (chains[k].status == ChainStatus::active) active.push_back(k);
  if (active.empty()) throw Error("nothing to run");
  const std::size_t completed = chains[active.front()].turn;
  for (std::size_t k : active)
    if (chains[k].turn != completed) throw Error("active chains are not at the same turn");
  const std::size_t turn = completed + 1;

  // Stage 1: draft sampling. Stage 2a: per-candidate scoring.
  struct Draft {
    synthetic::TokenBlock block;
    synthetic::LatentQuality next;
    conformal::ConformityScore score{0.0};
  };
  std::vector<Draft> drafts;
  drafts.reserve(active.size());
  for (std::size_t k : active) {
    const auto& c = chains[k];
    auto [block, next] = synthetic::draft_block(
        c.quality, cfg.kDraft, turn, params, derive_seed(cfg.seed, "draft", {c.chainIndex, turn}));
    // The draft request never asks for more than the chain's remaining budget.
    // Truncating after generation keeps the random stream independent of it.
    const std::size_t remaining = cfg.tokenLimit - c.tokensUsed;
    if (block.length() > remaining) {
      block.tokenLogProbs.resize(remaining);
      block.endedWithAnswer = false;
    }
    auto score = conformal::nll_score(block.tokenLogProbs);
    drafts.push_back({std::move(block), next, score});
  }

  // Stage 2b: p-values.
  std::vector<conformal::PValueRecord> pvalues(active.size());
  if (cfg.coverage == CoverageMode::marginal) {
    for (std::size_t a = 0; a < active.size(); ++a)
      pvalues[a] = conformal::marginal_p_value(drafts[a].score, pool, chains[active[a]].candidateId);
  } else {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t a = 0; a < active.size(); ++a) groups[chains[active[a]].inputId].push_back(a);
    for (const auto& [input, members] : groups) {
      std::vector<conformal::ConformityScore> scores;
      std::vector<std::string> ids;
      for (std::size_t a : members) {
        scores.push_back(drafts[a].score);
        ids.push_back(chains[active[a]].candidateId);
      }
      auto ps = conformal::sibling_p_values(scores, ids);
      for (std::size_t g = 0; g < members.size(); ++g) pvalues[members[g]] = std::move(ps[g]);
    }
  }

  TurnResult result;
  result.rejections = conformal::build_rejection_set(pvalues, cfg.alpha, turn);

  // Stage 3: target takeover of rejected candidates. Stage 4: termination.
  for (std::size_t a = 0; a < active.size(); ++a) {
    ChainState& c = chains[active[a]];
    Draft& d = drafts[a];
    TurnRecord rec;
    rec.turn = turn;
    rec.score = d.score.value();
    rec.p = pvalues[a];
    rec.decision = conformal::reject(rec.p, cfg.alpha);

    bool ended = d.block.endedWithAnswer;
    if (rec.decision == Decision::accept) {
      rec.role = records::Role::draft;
      rec.draftTokens = d.block.length();
      c.quality = d.next;
    } else {
      auto [tblock, next] = synthetic::target_block(
          d.next, cfg.kTarget, turn, params, derive_seed(cfg.seed, "target", {c.chainIndex, turn}));
      rec.role = records::Role::target;
      rec.targetTokens = tblock.length();
      rec.targetScore = conformal::nll_score(tblock.tokenLogProbs).value();
      if (cfg.intervention == InterventionMode::continueSampling)
        rec.draftTokens = d.block.length();
      else
        rec.wastedDraftTokens = d.block.length();
      c.quality = next;
      ended = tblock.endedWithAnswer;
    }
    rec.endedWithAnswer = ended;
    c.tokensUsed += rec.tokens();
    c.turn = turn;
    c.status = check_termination(c, ended, cfg);
    c.history.push_back(rec);
    result.records.push_back(std::move(rec));
  }
  return result;
}

EpisodeTrace run_episode(const PipelineConfig& cfg, const conformal::CalibrationPool& pool,
                         std::span<const std::string> inputs,
                         const synthetic::ProcessParams& params) {
  cfg.validate();
  params.validate();
  if (inputs.empty()) throw Error("episode needs at least one input");
  if (cfg.coverage == CoverageMode::conditional && !pool.grouped())
    throw Error("conditional mode requires grouped pool");

  EpisodeTrace trace;
  trace.config = cfg;
  trace.params = params;
  trace.poolHash = pool.hash();
  trace.inputs.assign(inputs.begin(), inputs.end());
  trace.chains = make_chains(inputs, cfg, params);

  auto anyActive = [&] {
    return std::any_of(trace.chains.begin(), trace.chains.end(),
                       [](const ChainState& c) { return c.status == ChainStatus::active; });
  };
  while (anyActive()) {
    TurnResult r = run_turn(trace.chains, pool, cfg, params);
    trace.perTurnRejectionCounts.push_back(r.rejections.rejected.size());
    trace.perTurnVerified.push_back(r.records.size());
    for (const auto& rec : r.records) {
      trace.totalDraftTokens += rec.draftTokens;
      trace.totalTargetTokens += rec.targetTokens;
      trace.totalWastedTokens += rec.wastedDraftTokens;
    }
  }
  check_trace_invariants(trace);
  return trace;
}

void check_trace_invariants(const EpisodeTrace& trace) {
  std::vector<std::size_t> rejected(trace.turns(), 0), verified(trace.turns(), 0);
  std::size_t draft = 0, target = 0, wasted = 0, kept = 0;
  for (const auto& c : trace.chains) {
    if (c.status == ChainStatus::active) throw InvariantError("chain left active after episode");
    std::size_t used = 0;
    for (const auto& r : c.history) {
      if (r.turn == 0 || r.turn > trace.turns()) throw InvariantError("turn record out of range");
      const bool rej = conformal::reject(r.p, trace.config.alpha) == Decision::reject;
      if (rej != (r.decision == Decision::reject)) throw InvariantError("decision disagrees with p-value");
      verified[r.turn - 1] += 1;
      rejected[r.turn - 1] += rej ? 1 : 0;
      draft += r.draftTokens;
      target += r.targetTokens;
      wasted += r.wastedDraftTokens;
      kept += r.tokens();
      used += r.tokens();
    }
    if (used != c.tokensUsed) throw InvariantError("chain token count disagrees with its history");
    if (c.tokensUsed > trace.config.tokenLimit + trace.config.kTarget)
      throw InvariantError("chain overshot the token limit by more than one target block");
  }
  if (rejected != trace.perTurnRejectionCounts) throw InvariantError("per-turn rejection counts disagree");
  if (verified != trace.perTurnVerified) throw InvariantError("per-turn verified counts disagree");
  if (draft != trace.totalDraftTokens || target != trace.totalTargetTokens ||
      wasted != trace.totalWastedTokens || draft + target != kept)
    throw InvariantError("token conservation violated");
}

}  // namespace asyncscale::pipeline
