// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "asyncscale/error.hpp"

namespace asyncscale::synthetic {

double AnswerHazard::at(std::size_t turn) const {
  if (maxProbability <= 0.0) return 0.0;
  const double x = (static_cast<double>(turn) - midpointTurn) / scale;
  return maxProbability / (1.0 + std::exp(-x));
}

void ProcessParams::validate() const {
  const double all[] = {draftDriftMean, targetPullMean, noiseStd, tokenLogSd, draftNllOffset,
                        targetNllOffset, initialThetaMean, inputThetaSd, candidateThetaSd,
                        answerHazard.maxProbability, answerHazard.midpointTurn, answerHazard.scale};
  for (double v : all)
    if (!std::isfinite(v)) throw Error("process parameters must be finite");
  if (draftDriftMean <= 0.0) throw Error("draft drift mean must be positive");
  if (targetPullMean <= 0.0) throw Error("target pull mean must be positive");
  if (noiseStd < 0.0 || tokenLogSd < 0.0 || inputThetaSd < 0.0 || candidateThetaSd < 0.0)
    throw Error("standard deviations must be non-negative");
  if (answerHazard.maxProbability < 0.0 || answerHazard.maxProbability > 1.0)
    throw Error("answer hazard must lie in [0,1]");
  if (answerHazard.scale <= 0.0) throw Error("answer hazard scale must be positive");
}

TokenBlock emit_block(Role role, LatentQuality q, std::size_t maxTokens, std::size_t turn,
                      const ProcessParams& params, Rng& rng) {
  if (maxTokens == 0) throw Error("block budget must be >= 1 token");
  TokenBlock block;
  block.role = role;

  const double hazard = params.answerHazard.at(turn);
  std::size_t length = maxTokens;
  if (hazard > 0.0 && std::bernoulli_distribution(hazard)(rng)) {
    block.endedWithAnswer = true;
    length = std::uniform_int_distribution<std::size_t>(1, maxTokens)(rng);
  }

  const double offset = role == Role::draft ? params.draftNllOffset : params.targetNllOffset;
  block.tokenLogProbs.resize(length);
  if (params.tokenLogSd > 0.0) {
    std::lognormal_distribution<double> nll(q.theta + offset, params.tokenLogSd);
    for (double& lp : block.tokenLogProbs) lp = -nll(rng);
  } else {
    std::fill(block.tokenLogProbs.begin(), block.tokenLogProbs.end(), -std::exp(q.theta + offset));
  }
  return block;
}

namespace {

double noise(const ProcessParams& params, Rng& rng) {
  if (params.noiseStd <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, params.noiseStd)(rng);
}

}  // namespace

std::pair<TokenBlock, LatentQuality> draft_block(LatentQuality q, std::size_t kDraft,
                                                 std::size_t turn, const ProcessParams& params,
                                                 std::uint64_t seed) {
  Rng rng = make_rng(seed);
  TokenBlock block = emit_block(Role::draft, q, kDraft, turn, params, rng);
  LatentQuality next{q.theta + params.draftDriftMean + noise(params, rng)};
  return {std::move(block), next};
}

std::pair<TokenBlock, LatentQuality> target_block(LatentQuality q, std::size_t kTarget,
                                                  std::size_t turn, const ProcessParams& params,
                                                  std::uint64_t seed) {
  Rng rng = make_rng(seed);
  TokenBlock block = emit_block(Role::target, q, kTarget, turn, params, rng);
  LatentQuality next{q.theta - params.targetPullMean + noise(params, rng)};
  return {std::move(block), next};
}

LatentQuality input_quality(const ProcessParams& params, std::uint64_t rootSeed,
                            std::string_view inputId) {
  Rng rng = make_rng(derive_seed(rootSeed, "input-quality", {fnv1a64(inputId)}));
  double theta = params.initialThetaMean;
  if (params.inputThetaSd > 0.0)
    theta += std::normal_distribution<double>(0.0, params.inputThetaSd)(rng);
  return {theta};
}

LatentQuality initial_quality(const ProcessParams& params, std::uint64_t rootSeed,
                              std::string_view stream, std::string_view inputId,
                              std::size_t sample) {
  LatentQuality base = input_quality(params, rootSeed, inputId);
  Rng rng = make_rng(derive_seed(rootSeed, stream, {fnv1a64(inputId), sample, 0x1417}));
  if (params.candidateThetaSd > 0.0)
    base.theta += std::normal_distribution<double>(0.0, params.candidateThetaSd)(rng);
  return base;
}

bool label_correct(LatentQuality finalQuality, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const double p = 1.0 / (1.0 + std::exp(finalQuality.theta));
  return std::bernoulli_distribution(p)(rng);
}

Distribution parse_distribution(std::string_view name) {
  if (name == "normal" || name == "standard-normal") return Distribution::standardNormal;
  if (name == "uniform") return Distribution::uniform;
  if (name == "lognormal") return Distribution::lognormal;
  if (name == "distinct-uniform") return Distribution::distinctUniform;
  if (name == "constant") return Distribution::constant;
  throw Error(fmt::format("unknown distribution '{}'", name));
}

std::string_view to_string(Distribution d) noexcept {
  switch (d) {
    case Distribution::standardNormal: return "normal";
    case Distribution::uniform: return "uniform";
    case Distribution::lognormal: return "lognormal";
    case Distribution::distinctUniform: return "distinct-uniform";
    case Distribution::constant: return "constant";
  }
  return "unknown";
}

void fill_scores(Distribution d, std::span<double> out, Rng& rng) {
  switch (d) {
    case Distribution::standardNormal: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (double& v : out) v = dist(rng);
      return;
    }
    case Distribution::uniform: {
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      for (double& v : out) v = dist(rng);
      return;
    }
    case Distribution::lognormal: {
      std::lognormal_distribution<double> dist(0.0, 1.0);
      for (double& v : out) v = dist(rng);
      return;
    }
    case Distribution::constant:
      std::fill(out.begin(), out.end(), 1.0);
      return;
    case Distribution::distinctUniform: {
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      std::vector<double> sorted(out.size());
      for (;;) {
        for (double& v : out) v = dist(rng);
        std::copy(out.begin(), out.end(), sorted.begin());
        std::sort(sorted.begin(), sorted.end());
        bool distinct = true;
        for (std::size_t k = 1; k < sorted.size() && distinct; ++k)
          distinct = sorted[k] - sorted[k - 1] > 1e-12;
        if (distinct) return;
      }
    }
  }
}

conformal::CalibrationPool gen_exchangeable_scores(std::size_t n, std::size_t m, Distribution d,
                                                   std::uint64_t seed) {
  if (n == 0 || m == 0) throw Error("exchangeable scores need n, m >= 1");
  Rng rng = make_rng(seed);
  std::vector<double> scores(n * m);
  fill_scores(d, scores, rng);
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(fmt::format("x{}", i));
  return conformal::CalibrationPool(std::move(ids), m, std::move(scores));
}

SyntheticScoreSource::SyntheticScoreSource(ProcessParams params, std::size_t blockTokens,
                                           std::uint64_t rootSeed)
    : params_(params), blockTokens_(blockTokens), rootSeed_(rootSeed) {
  params_.validate();
  if (blockTokens_ == 0) throw Error("calibration block must be >= 1 token");
}

conformal::ConformityScore SyntheticScoreSource::score(std::string_view inputId,
                                                       std::size_t sample) const {
  const LatentQuality q = initial_quality(params_, rootSeed_, "calibration", inputId, sample);
  const auto seed = derive_seed(rootSeed_, "calibration-block", {fnv1a64(inputId), sample});
  auto [block, next] = draft_block(q, blockTokens_, 1, params_, seed);
  return conformal::nll_score(block.tokenLogProbs);
}

RecordScoreSource::RecordScoreSource(std::vector<records::ScoreRecord> recs,
                                     std::int64_t calibrationTurn)
    : calibrationTurn_(calibrationTurn) {
  for (std::size_t k = 0; k < recs.size(); ++k) {
    auto& r = recs[k];
    Key key{r.inputId, r.sampleId, r.turn};
    const double s = conformal::nll_score(r.tokenLogprobs).value();
    if (!scores_.emplace(std::move(key), s).second)
      throw IoError(fmt::format("duplicate record ({}, {}, {})", r.inputId, r.sampleId, r.turn));
    if (std::find(inputIds_.begin(), inputIds_.end(), r.inputId) == inputIds_.end())
      inputIds_.push_back(r.inputId);
  }
}

conformal::ConformityScore RecordScoreSource::lookup(std::string_view inputId,
                                                     std::int64_t sampleId,
                                                     std::int64_t turn) const {
  auto it = scores_.find(Key{std::string(inputId), sampleId, turn});
  if (it == scores_.end())
    throw Error(fmt::format("no record for (input '{}', sample {}, turn {})", inputId, sampleId, turn));
  return conformal::ConformityScore(it->second);
}

conformal::ConformityScore RecordScoreSource::score(std::string_view inputId,
                                                    std::size_t sample) const {
  return lookup(inputId, static_cast<std::int64_t>(sample), calibrationTurn_);
}

std::size_t RecordScoreSource::completeSamplesPerInput() const {
  if (inputIds_.empty()) return 0;
  std::size_t best = SIZE_MAX;
  for (const auto& id : inputIds_) {
    std::size_t m = 0;
    while (scores_.count(Key{id, static_cast<std::int64_t>(m), calibrationTurn_})) ++m;
    best = std::min(best, m);
  }
  return best;
}

RecordScoreSource score_source_from_records(const std::filesystem::path& path,
                                            std::int64_t calibrationTurn) {
  try {
    return RecordScoreSource(records::read_records(path), calibrationTurn);
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(fmt::format("invalid records in '{}': {}", path.string(), e.what()));
  }
}

}  // namespace asyncscale::synthetic
