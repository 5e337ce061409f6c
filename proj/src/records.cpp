// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <utility>

#include <fmt/format.h>
#include <json.hpp>

#include "asyncscale/error.hpp"

namespace asyncscale::records {

using nlohmann::json;

std::string_view to_string(Role role) noexcept { return role == Role::draft ? "draft" : "target"; }

ScoreRecord parse_record(const std::string& line, std::size_t lineNumber) {
  auto fail = [&](std::string_view why) -> IoError {
    return IoError(fmt::format("malformed record at line {}: {}", lineNumber, why));
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(e.what());
  }
  if (!j.is_object()) throw fail("not an object");

  ScoreRecord rec;
  try {
    if (!j.contains("input_id") || !j["input_id"].is_string()) throw fail("input_id must be a string");
    if (!j.contains("sample_id") || !j["sample_id"].is_number_integer()) throw fail("sample_id must be an integer");
    if (!j.contains("turn") || !j["turn"].is_number_integer()) throw fail("turn must be an integer");
    if (!j.contains("role") || !j["role"].is_string()) throw fail("role must be a string");
    if (!j.contains("token_logprobs") || !j["token_logprobs"].is_array())
      throw fail("token_logprobs must be an array");

    rec.inputId = j["input_id"].get<std::string>();
    rec.sampleId = j["sample_id"].get<std::int64_t>();
    rec.turn = j["turn"].get<std::int64_t>();
    const auto role = j["role"].get<std::string>();
    if (role == "draft") rec.role = Role::draft;
    else if (role == "target") rec.role = Role::target;
    else throw fail(fmt::format("unknown role '{}'", role));

    for (const auto& v : j["token_logprobs"]) {
      if (!v.is_number()) throw fail("token_logprobs entries must be numbers");
      const double lp = v.get<double>();
      if (!std::isfinite(lp) || lp > 0.0) throw fail("token_logprobs entries must be finite and <= 0");
      rec.tokenLogprobs.push_back(lp);
    }
    if (j.contains("text")) {
      if (!j["text"].is_string()) throw fail("text must be a string");
      rec.text = j["text"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  return rec;
}

std::string serialize_record(const ScoreRecord& record) {
  json j;
  j["input_id"] = record.inputId;
  j["sample_id"] = record.sampleId;
  j["turn"] = record.turn;
  j["role"] = std::string(to_string(record.role));
  j["token_logprobs"] = record.tokenLogprobs;
  if (record.text) j["text"] = *record.text;
  return j.dump();
}

std::vector<ScoreRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open records file '{}'", path.string()));
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t lineNumber = 0;
  while (std::getline(in, line)) {
    ++lineNumber;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, lineNumber));
  }
  return out;
}

namespace {

void require_nll_scores(const conformal::CalibrationPool& pool) {
  for (double s : pool.scores())
    if (s < 0.0) throw Error(fmt::format("pool score {} < 0 cannot be stored as an NLL record", s));
}

}  // namespace

void write_pool(std::ostream& out, const conformal::CalibrationPool& pool) {
  require_nll_scores(pool);
  json header;
  header["kind"] = "calibration_pool";
  header["n"] = pool.n();
  header["m"] = pool.m();
  header["hash"] = pool.hash();
  header["grouped"] = pool.grouped();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < pool.n(); ++i) {
    for (std::size_t j = 0; j < pool.m(); ++j) {
      ScoreRecord rec;
      rec.inputId = pool.inputIds()[i];
      rec.sampleId = static_cast<std::int64_t>(j);
      rec.turn = 0;
      rec.role = Role::draft;
      rec.tokenLogprobs = {-pool.score(i, j)};
      out << serialize_record(rec) << '\n';
    }
  }
}

void write_pool(const std::filesystem::path& path, const conformal::CalibrationPool& pool) {
  require_nll_scores(pool);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write pool file '{}'", path.string()));
  write_pool(out, pool);
  if (!out) throw IoError(fmt::format("failed writing pool file '{}'", path.string()));
}

conformal::CalibrationPool read_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open pool file '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("pool file '{}' is empty", path.string()));

  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw IoError(fmt::format("malformed pool header in '{}': {}", path.string(), e.what()));
  }
  if (!header.is_object() || header.value("kind", "") != "calibration_pool")
    throw IoError(fmt::format("'{}' is not a calibration pool file", path.string()));

  std::size_t n = 0, m = 0;
  bool grouped = true;
  std::string hash;
  try {
    n = header.at("n").get<std::size_t>();
    m = header.at("m").get<std::size_t>();
    hash = header.at("hash").get<std::string>();
    grouped = header.value("grouped", true);
  } catch (const json::exception& e) {
    throw IoError(fmt::format("malformed pool header in '{}': {}", path.string(), e.what()));
  }

  std::vector<std::string> ids;
  std::map<std::string, std::size_t> row;
  std::vector<double> scores(n * m, 0.0);
  std::vector<bool> seen(n * m, false);
  std::size_t lineNumber = 1;
  while (std::getline(in, line)) {
    ++lineNumber;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_record(line, lineNumber);
    auto [it, inserted] = row.emplace(rec.inputId, ids.size());
    if (inserted) ids.push_back(rec.inputId);
    if (it->second >= n || rec.sampleId < 0 || static_cast<std::size_t>(rec.sampleId) >= m)
      throw IoError(fmt::format("pool record out of range at line {}", lineNumber));
    const std::size_t cell = it->second * m + static_cast<std::size_t>(rec.sampleId);
    if (seen[cell]) throw IoError(fmt::format("duplicate record at line {}", lineNumber));
    seen[cell] = true;
    try {
      scores[cell] = conformal::nll_score(rec.tokenLogprobs).value();
    } catch (const Error& e) {
      throw IoError(fmt::format("bad pool record at line {}: {}", lineNumber, e.what()));
    }
  }
  if (ids.size() != n || std::find(seen.begin(), seen.end(), false) != seen.end())
    throw IoError(fmt::format("pool file '{}' is missing cells", path.string()));

  conformal::CalibrationPool pool(std::move(ids), m, std::move(scores), grouped);
  if (pool.hash() != hash)
    throw IoError(fmt::format("pool file '{}' hash mismatch (header {}, content {})", path.string(),
                              hash, pool.hash()));
  return pool;
}

}  // namespace asyncscale::records
