// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

/**
 * @file conformal.hpp
 * @brief Conformity scores, calibration pools and conformal p-values.
 *
 * A candidate block is scored by its mean per-token negative log-likelihood
 * (higher = less conforming). Its p-value is its rank among a frozen pool of
 * calibration scores:
 *
 *   marginal:     p = (#{(i,j) : s <= s_ij} + 1) / (n*m + 1)
 *   conditional:  p = (#{j : s <= s_ij, i = input} + 1) / (m + 1)
 *
 * so small p marks the worst candidates and {p <= alpha} is the rejection
 * set handed to the target model. P-values are exact rationals and alpha is
 * held as an exact rational too, which makes the p == alpha boundary
 * deterministic.
 *
 * Every function here is pure. A CalibrationPool is immutable after
 * construction and may be shared across threads without locking.
 *
 * The classic split-conformal baseline (softmax-normalized scores, global
 * quantile threshold, prediction set {s >= tau}) is kept for comparison; it
 * needs a normalization across all candidates of an input, which is the
 * synchronization the p-value route avoids.
 */

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace asyncscale::conformal {

/// Mean per-token NLL of a candidate block. Always finite.
class ConformityScore {
 public:
  explicit ConformityScore(double value);

  double value() const noexcept { return value_; }
  auto operator<=>(const ConformityScore&) const = default;

 private:
  double value_;
};

enum class CoverageMode { marginal, conditional };

std::string_view to_string(CoverageMode mode) noexcept;
CoverageMode parse_coverage_mode(std::string_view text);

/// Miscoverage level, 0 < alpha < 1. Stored as value / 10^12 reduced, so
/// decimal levels such as 0.3 compare exactly against rational p-values.
class AlphaLevel {
 public:
  explicit AlphaLevel(double alpha);

  double value() const noexcept { return value_; }
  std::uint64_t numerator() const noexcept { return num_; }
  std::uint64_t denominator() const noexcept { return den_; }

  bool operator==(const AlphaLevel& other) const noexcept {
    return num_ == other.num_ && den_ == other.den_;
  }

 private:
  double value_;
  std::uint64_t num_;
  std::uint64_t den_;
};

struct PValueRecord {
  std::string candidateId;
  std::uint64_t numerator = 1;
  std::uint64_t denominator = 1;
  CoverageMode mode = CoverageMode::marginal;

  double value() const noexcept {
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

/// n x m matrix of calibration scores, row i belonging to inputIds[i].
class CalibrationPool {
 public:
  /// `scores` is row-major n x m. Throws Error on empty input, m == 0,
  /// size mismatch, non-finite scores or duplicate input ids.
  CalibrationPool(std::vector<std::string> inputIds, std::size_t m,
                  std::vector<double> scores, bool grouped = true);

  std::size_t n() const noexcept { return inputIds_.size(); }
  std::size_t m() const noexcept { return m_; }
  std::size_t size() const noexcept { return scores_.size(); }
  bool grouped() const noexcept { return grouped_; }

  double score(std::size_t input, std::size_t sample) const { return scores_.at(input * m_ + sample); }
  std::span<const double> row(std::size_t input) const;
  std::span<const double> scores() const noexcept { return scores_; }
  const std::vector<std::string>& inputIds() const noexcept { return inputIds_; }
  std::optional<std::size_t> inputIndex(std::string_view inputId) const;

  /// All n*m scores ascending; used for O(log nm) rank queries.
  std::span<const double> sortedScores() const noexcept { return sorted_; }
  /// Row `input` ascending.
  std::span<const double> sortedRow(std::size_t input) const;

  /// 16 hex digits, FNV-1a over (n, m, grouped, ids, score bit patterns).
  const std::string& hash() const noexcept { return hash_; }

 private:
  std::vector<std::string> inputIds_;
  std::size_t m_;
  std::vector<double> scores_;
  bool grouped_;
  std::vector<double> sorted_;
  std::vector<double> sortedRows_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string hash_;
};

/// Yields one conformity score per (input, sample) draw. Implementations
/// must be safe to call concurrently for distinct cells.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;
  virtual ConformityScore score(std::string_view inputId, std::size_t sample) const = 0;
};

ConformityScore nll_score(std::span<const double> tokenLogProbs);

/// exp(-loss_k) / sum_j exp(-loss_j), max-shifted.
std::vector<double> softmax_conformity(std::span<const double> losses);

/// Row-wise softmax of a pool of losses; the input of the classic baseline.
CalibrationPool softmax_normalize(const CalibrationPool& losses);

struct ClassicThreshold {
  double tau = 0.0;
  std::uint64_t levelNumerator = 0;   // ceil((n+1)(1-alpha))
  std::uint64_t levelDenominator = 1; // n
  bool saturated = false;             // level > 1, tau clamped to the max score

  double level() const noexcept {
    return static_cast<double>(levelNumerator) / static_cast<double>(levelDenominator);
  }
};

/// Lower quantile of the pool at level ceil((n+1)(1-alpha))/n, taken as the
/// ceil(level * nm)-th smallest score. The pool must hold normalized scores.
ClassicThreshold classic_threshold(const CalibrationPool& normalized, AlphaLevel alpha);

/// {k : scores[k] >= tau}.
std::vector<std::size_t> classic_prediction_set(std::span<const double> scores,
                                                const ClassicThreshold& tau);

/// Builds the frozen pool by drawing every (input, sample) cell from
/// `source`. Cells are independent; no barrier across inputs.
CalibrationPool online_calibrate(std::span<const std::string> inputs, std::size_t m,
                                 const ScoreSource& source);

PValueRecord marginal_p_value(ConformityScore s, const CalibrationPool& pool,
                              std::string candidateId = {});

/// Ranks `s` only against the m scores of `inputId`. Throws on unknown id.
PValueRecord conditional_p_value(ConformityScore s, const CalibrationPool& pool,
                                 std::string_view inputId, std::string candidateId = {});

/// Conditional p-values for one input's candidates in one turn, each ranked
/// against its siblings: p_k = (#{j != k : s_k <= s_j} + 1) / size. With
/// distinct scores the values are exactly {1/size, ..., size/size}.
std::vector<PValueRecord> sibling_p_values(std::span<const ConformityScore> scores,
                                           std::span<const std::string> candidateIds);

enum class Decision { accept, reject };

/// Reject iff p <= alpha, compared exactly.
Decision reject(const PValueRecord& p, AlphaLevel alpha) noexcept;

struct RejectionSet {
  std::size_t turn = 0;
  std::vector<std::string> rejected;
  std::vector<std::string> accepted;
  AlphaLevel alpha{0.5};
};

RejectionSet build_rejection_set(std::span<const PValueRecord> pvalues, AlphaLevel alpha,
                                 std::size_t turn);

enum class BudgetScope { perTurnPerInput, perDataset };

struct BudgetSpec {
  std::size_t B = 0;
  BudgetScope scope = BudgetScope::perTurnPerInput;
  double expected = 0.0;  // expected rejections per turn
};

/// Conditional: B = floor(alpha (m+1)), exact for distinct own scores.
/// Marginal: expected alpha * m with B = floor(alpha * m).
BudgetSpec budget_for(AlphaLevel alpha, std::size_t m, CoverageMode mode);

}  // namespace asyncscale::conformal
