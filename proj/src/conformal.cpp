// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/conformal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "asyncscale/error.hpp"
#include "asyncscale/seed.hpp"

namespace asyncscale::conformal {

namespace {

constexpr std::uint64_t kAlphaScale = 1'000'000'000'000ULL;

__extension__ using u128 = unsigned __int128;

// Number of entries in an ascending range that are >= s.
std::size_t count_at_least(std::span<const double> ascending, double s) {
  auto it = std::lower_bound(ascending.begin(), ascending.end(), s);
  return static_cast<std::size_t>(ascending.end() - it);
}

}  // namespace

ConformityScore::ConformityScore(double value) : value_(value) {
  if (!std::isfinite(value)) throw Error("non-finite conformity score");
}

std::string_view to_string(CoverageMode mode) noexcept {
  return mode == CoverageMode::marginal ? "marginal" : "conditional";
}

CoverageMode parse_coverage_mode(std::string_view text) {
  if (text == "marginal") return CoverageMode::marginal;
  if (text == "conditional") return CoverageMode::conditional;
  throw Error(fmt::format("unknown coverage mode '{}'", text));
}

AlphaLevel::AlphaLevel(double alpha) : value_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(fmt::format("alpha must lie in (0,1), got {}", alpha));
  auto scaled = static_cast<std::uint64_t>(std::llround(alpha * static_cast<double>(kAlphaScale)));
  scaled = std::clamp<std::uint64_t>(scaled, 1, kAlphaScale - 1);
  const std::uint64_t g = std::gcd(scaled, kAlphaScale);
  num_ = scaled / g;
  den_ = kAlphaScale / g;
}

CalibrationPool::CalibrationPool(std::vector<std::string> inputIds, std::size_t m,
                                 std::vector<double> scores, bool grouped)
    : inputIds_(std::move(inputIds)), m_(m), scores_(std::move(scores)), grouped_(grouped) {
  if (inputIds_.empty()) throw Error("empty calibration");
  if (m_ == 0) throw Error("calibration pool needs m >= 1");
  if (scores_.size() != inputIds_.size() * m_)
    throw Error(fmt::format("calibration pool expects {} scores, got {}", inputIds_.size() * m_,
                            scores_.size()));
  for (double s : scores_)
    if (!std::isfinite(s)) throw Error("non-finite conformity score in calibration pool");

  index_.reserve(inputIds_.size());
  for (std::size_t i = 0; i < inputIds_.size(); ++i) {
    if (!index_.emplace(inputIds_[i], i).second)
      throw Error(fmt::format("duplicate input id '{}' in calibration pool", inputIds_[i]));
  }

  sorted_ = scores_;
  std::sort(sorted_.begin(), sorted_.end());
  sortedRows_ = scores_;
  for (std::size_t i = 0; i < n(); ++i) {
    auto first = sortedRows_.begin() + static_cast<std::ptrdiff_t>(i * m_);
    std::sort(first, first + static_cast<std::ptrdiff_t>(m_));
  }

  std::uint64_t h = fnv1a64(fmt::format("pool:{}:{}:{};", n(), m_, grouped_ ? 1 : 0));
  for (const auto& id : inputIds_) h = fnv1a64(id + '\n', h);
  for (double s : scores_) h = fnv1a64(fmt::format("{:016x}", std::bit_cast<std::uint64_t>(s)), h);
  hash_ = fmt::format("{:016x}", h);
}

std::span<const double> CalibrationPool::row(std::size_t input) const {
  if (input >= n()) throw Error("calibration row out of range");
  return std::span<const double>(scores_).subspan(input * m_, m_);
}

std::span<const double> CalibrationPool::sortedRow(std::size_t input) const {
  if (input >= n()) throw Error("calibration row out of range");
  return std::span<const double>(sortedRows_).subspan(input * m_, m_);
}

std::optional<std::size_t> CalibrationPool::inputIndex(std::string_view inputId) const {
  auto it = index_.find(std::string(inputId));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ConformityScore nll_score(std::span<const double> tokenLogProbs) {
  if (tokenLogProbs.empty()) throw Error("empty block");
  double total = 0.0;
  for (double lp : tokenLogProbs) {
    if (!std::isfinite(lp) || lp > 0.0) throw Error("invalid logprob");
    total -= lp;
  }
  return ConformityScore(total / static_cast<double>(tokenLogProbs.size()));
}

std::vector<double> softmax_conformity(std::span<const double> losses) {
  if (losses.empty()) throw Error("softmax of an empty candidate set");
  for (double l : losses)
    if (!std::isfinite(l)) throw Error("non-finite loss");
  // exp(-l) is largest at the smallest loss; shift by it.
  const double shift = *std::min_element(losses.begin(), losses.end());
  std::vector<double> out(losses.size());
  double z = 0.0;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    out[k] = std::exp(-(losses[k] - shift));
    z += out[k];
  }
  for (double& v : out) v /= z;
  return out;
}

CalibrationPool softmax_normalize(const CalibrationPool& losses) {
  std::vector<double> scores;
  scores.reserve(losses.size());
  for (std::size_t i = 0; i < losses.n(); ++i) {
    auto row = softmax_conformity(losses.row(i));
    scores.insert(scores.end(), row.begin(), row.end());
  }
  return CalibrationPool(losses.inputIds(), losses.m(), std::move(scores), losses.grouped());
}

ClassicThreshold classic_threshold(const CalibrationPool& normalized, AlphaLevel alpha) {
  const std::uint64_t n = normalized.n();
  const std::uint64_t total = normalized.size();
  // ceil((n+1)(1-alpha)) with alpha = a/d: ceil((n+1)(d-a)/d).
  const u128 top = static_cast<u128>(n + 1) * (alpha.denominator() - alpha.numerator());
  const auto levelNum = static_cast<std::uint64_t>((top + alpha.denominator() - 1) / alpha.denominator());

  ClassicThreshold out;
  out.levelNumerator = levelNum;
  out.levelDenominator = n;
  auto sorted = normalized.sortedScores();
  if (levelNum > n) {
    out.saturated = true;
    out.tau = sorted.back();
    return out;
  }
  // ceil(levelNum/n * nm) = levelNum * m, exact.
  std::uint64_t rank = levelNum * normalized.m();
  rank = std::clamp<std::uint64_t>(rank, 1, total);
  out.tau = sorted[rank - 1];
  return out;
}

std::vector<std::size_t> classic_prediction_set(std::span<const double> scores,
                                                const ClassicThreshold& tau) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (scores[k] >= tau.tau) out.push_back(k);
  return out;
}

CalibrationPool online_calibrate(std::span<const std::string> inputs, std::size_t m,
                                 const ScoreSource& source) {
  if (inputs.empty()) throw Error("empty calibration");
  if (m == 0) throw Error("calibration needs m >= 1");
  std::vector<double> scores;
  scores.reserve(inputs.size() * m);
  for (const auto& id : inputs) {
    for (std::size_t j = 0; j < m; ++j) {
      try {
        scores.push_back(source.score(id, j).value());
      } catch (const std::exception& e) {
        throw Error(fmt::format("score source failed at (input '{}', sample {}): {}", id, j, e.what()));
      }
    }
  }
  return CalibrationPool(std::vector<std::string>(inputs.begin(), inputs.end()), m,
                         std::move(scores));
}

PValueRecord marginal_p_value(ConformityScore s, const CalibrationPool& pool,
                              std::string candidateId) {
  PValueRecord rec;
  rec.candidateId = std::move(candidateId);
  rec.numerator = count_at_least(pool.sortedScores(), s.value()) + 1;
  rec.denominator = pool.size() + 1;
  rec.mode = CoverageMode::marginal;
  return rec;
}

PValueRecord conditional_p_value(ConformityScore s, const CalibrationPool& pool,
                                 std::string_view inputId, std::string candidateId) {
  auto idx = pool.inputIndex(inputId);
  if (!idx) throw Error(fmt::format("unknown input id '{}'", inputId));
  PValueRecord rec;
  rec.candidateId = std::move(candidateId);
  rec.numerator = count_at_least(pool.sortedRow(*idx), s.value()) + 1;
  rec.denominator = pool.m() + 1;
  rec.mode = CoverageMode::conditional;
  return rec;
}

std::vector<PValueRecord> sibling_p_values(std::span<const ConformityScore> scores,
                                           std::span<const std::string> candidateIds) {
  if (scores.size() != candidateIds.size()) throw Error("sibling scores and ids differ in length");
  std::vector<double> sorted(scores.size());
  std::transform(scores.begin(), scores.end(), sorted.begin(),
                 [](ConformityScore s) { return s.value(); });
  std::sort(sorted.begin(), sorted.end());

  std::vector<PValueRecord> out(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    // count_at_least includes the candidate itself, which stands in for the +1.
    out[k].candidateId = candidateIds[k];
    out[k].numerator = count_at_least(sorted, scores[k].value());
    out[k].denominator = scores.size();
    out[k].mode = CoverageMode::conditional;
  }
  return out;
}

Decision reject(const PValueRecord& p, AlphaLevel alpha) noexcept {
  const u128 lhs = static_cast<u128>(p.numerator) * alpha.denominator();
  const u128 rhs = static_cast<u128>(alpha.numerator()) * p.denominator;
  return lhs <= rhs ? Decision::reject : Decision::accept;
}

RejectionSet build_rejection_set(std::span<const PValueRecord> pvalues, AlphaLevel alpha,
                                 std::size_t turn) {
  RejectionSet out;
  out.turn = turn;
  out.alpha = alpha;
  if (pvalues.empty()) return out;
  const CoverageMode mode = pvalues.front().mode;
  for (const auto& p : pvalues) {
    if (p.mode != mode) throw Error("mixed coverage modes in one rejection set");
    (reject(p, alpha) == Decision::reject ? out.rejected : out.accepted).push_back(p.candidateId);
  }
  return out;
}

BudgetSpec budget_for(AlphaLevel alpha, std::size_t m, CoverageMode mode) {
  if (m == 0) throw Error("budget needs m >= 1");
  BudgetSpec out;
  if (mode == CoverageMode::conditional) {
    const u128 prod = static_cast<u128>(alpha.numerator()) * (m + 1);
    out.B = static_cast<std::size_t>(prod / alpha.denominator());
    out.scope = BudgetScope::perTurnPerInput;
    out.expected = static_cast<double>(out.B);
  } else {
    const u128 prod = static_cast<u128>(alpha.numerator()) * m;
    out.B = static_cast<std::size_t>(prod / alpha.denominator());
    out.scope = BudgetScope::perDataset;
    out.expected = alpha.value() * static_cast<double>(m);
  }
  return out;
}

}  // namespace asyncscale::conformal
