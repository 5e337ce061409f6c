// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Seeded stand-ins for the draft and target models, plus i.i.d. score
// generators for the statistical verification harness.
//
// A chain carries a latent quality theta. Each emitted token has an NLL drawn
// lognormally with log-median theta + roleOffset, so block scores rise with
// theta. A draft block moves theta up by draftDriftMean, a target block pulls
// it down by targetPullMean, both plus N(0, noiseStd) noise.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "asyncscale/conformal.hpp"
#include "asyncscale/records.hpp"
#include "asyncscale/seed.hpp"

namespace asyncscale::synthetic {

using records::Role;

struct LatentQuality {
  double theta = 0.0;
};

struct TokenBlock {
  Role role = Role::draft;
  std::vector<double> tokenLogProbs;
  bool endedWithAnswer = false;

  std::size_t length() const noexcept { return tokenLogProbs.size(); }
};

/// Probability that a block ends with a final answer at (1-based) turn t:
/// maxProbability / (1 + exp(-(t - midpointTurn) / scale)).
struct AnswerHazard {
  double maxProbability = 1.0;
  double midpointTurn = 8.0;
  double scale = 1.0;

  double at(std::size_t turn) const;
};

struct ProcessParams {
  double draftDriftMean = 0.03;
  double targetPullMean = 0.3;
  double noiseStd = 0.2;
  AnswerHazard answerHazard{};

  // Per-token NLL ~ LogNormal(theta + offset(role), tokenLogSd).
  double tokenLogSd = 0.8;
  double draftNllOffset = 0.0;
  double targetNllOffset = -0.4;

  // Initial quality of candidate j of input i: inputTheta_i + N(0, candidateThetaSd),
  // inputTheta_i ~ N(initialThetaMean, inputThetaSd).
  double initialThetaMean = -0.5;
  double inputThetaSd = 0.5;
  double candidateThetaSd = 0.4;

  /// Throws Error when a std dev is negative, a hazard bound leaves [0,1],
  /// a drift/pull mean is not positive or a value is non-finite.
  void validate() const;
};

TokenBlock emit_block(Role role, LatentQuality q, std::size_t maxTokens, std::size_t turn,
                      const ProcessParams& params, Rng& rng);

/// Returns the emitted block and the post-block quality theta + drift + noise.
std::pair<TokenBlock, LatentQuality> draft_block(LatentQuality q, std::size_t kDraft,
                                                 std::size_t turn, const ProcessParams& params,
                                                 std::uint64_t seed);

/// As draft_block with role target and theta - pull + noise.
std::pair<TokenBlock, LatentQuality> target_block(LatentQuality q, std::size_t kTarget,
                                                  std::size_t turn, const ProcessParams& params,
                                                  std::uint64_t seed);

/// Quality of the input itself, a pure function of (root seed, input id).
LatentQuality input_quality(const ProcessParams& params, std::uint64_t rootSeed,
                            std::string_view inputId);

/// Starting quality of sample `sample` of `inputId` in the named stream.
LatentQuality initial_quality(const ProcessParams& params, std::uint64_t rootSeed,
                              std::string_view stream, std::string_view inputId,
                              std::size_t sample);

/// Optional correctness label ~ Bernoulli(sigmoid(-theta)).
bool label_correct(LatentQuality finalQuality, std::uint64_t seed);

enum class Distribution { standardNormal, uniform, lognormal, distinctUniform, constant };

Distribution parse_distribution(std::string_view name);
std::string_view to_string(Distribution d) noexcept;

/// Fills `out` with i.i.d. draws. distinctUniform redraws the whole batch
/// until every pairwise gap exceeds 1e-12.
void fill_scores(Distribution d, std::span<double> out, Rng& rng);

conformal::CalibrationPool gen_exchangeable_scores(std::size_t n, std::size_t m, Distribution d,
                                                   std::uint64_t seed);

/// Calibration cell (input, sample) scored as the mean NLL of one draft block
/// of `blockTokens` tokens at turn 1, drawn from the "calibration" stream.
class SyntheticScoreSource final : public conformal::ScoreSource {
 public:
  SyntheticScoreSource(ProcessParams params, std::size_t blockTokens, std::uint64_t rootSeed);

  conformal::ConformityScore score(std::string_view inputId, std::size_t sample) const override;

 private:
  ProcessParams params_;
  std::size_t blockTokens_;
  std::uint64_t rootSeed_;
};

/// Replays recorded token_logprobs through nll_score, keyed by
/// (input_id, sample_id, turn). As a ScoreSource it serves `calibrationTurn`.
class RecordScoreSource final : public conformal::ScoreSource {
 public:
  explicit RecordScoreSource(std::vector<records::ScoreRecord> recs, std::int64_t calibrationTurn = 0);

  conformal::ConformityScore lookup(std::string_view inputId, std::int64_t sampleId,
                                    std::int64_t turn) const;
  conformal::ConformityScore score(std::string_view inputId, std::size_t sample) const override;

  std::size_t size() const noexcept { return scores_.size(); }
  /// Distinct input ids in first-appearance order.
  const std::vector<std::string>& inputIds() const noexcept { return inputIds_; }
  /// Largest m such that every input has samples 0..m-1 at the calibration turn.
  std::size_t completeSamplesPerInput() const;

 private:
  using Key = std::tuple<std::string, std::int64_t, std::int64_t>;
  std::map<Key, double> scores_;
  std::vector<std::string> inputIds_;
  std::int64_t calibrationTurn_;
};

RecordScoreSource score_source_from_records(const std::filesystem::path& path,
                                            std::int64_t calibrationTurn = 0);

}  // namespace asyncscale::synthetic
