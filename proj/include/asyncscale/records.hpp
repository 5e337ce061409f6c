// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

// Line-delimited score records, one JSON object per line:
//   {"input_id": str, "sample_id": int, "turn": int, "role": "draft"|"target",
//    "token_logprobs": [reals <= 0], "text": str (optional)}
// A pool file is a header line {"kind": "calibration_pool", "n", "m", "hash",
// "grouped"} followed by n*m records, one per cell, each carrying the cell's
// score as a single-token block so nll_score() reproduces it bit for bit.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "asyncscale/conformal.hpp"

namespace asyncscale::records {

enum class Role { draft, target };

std::string_view to_string(Role role) noexcept;

struct ScoreRecord {
  std::string inputId;
  std::int64_t sampleId = 0;
  std::int64_t turn = 0;
  Role role = Role::draft;
  std::vector<double> tokenLogprobs;
  std::optional<std::string> text;

  bool operator==(const ScoreRecord&) const = default;
};

/// Throws IoError naming `lineNumber` on any schema violation.
ScoreRecord parse_record(const std::string& line, std::size_t lineNumber);
std::string serialize_record(const ScoreRecord& record);

/// Blank lines are skipped. Missing file -> IoError naming the path.
std::vector<ScoreRecord> read_records(const std::filesystem::path& path);

/// Throws Error, before writing anything, if a score is negative.
void write_pool(std::ostream& out, const conformal::CalibrationPool& pool);
void write_pool(const std::filesystem::path& path, const conformal::CalibrationPool& pool);
conformal::CalibrationPool read_pool(const std::filesystem::path& path);

}  // namespace asyncscale::records
