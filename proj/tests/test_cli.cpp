// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asyncscale/conformal.hpp"
#include "asyncscale/records.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "asyncscale_test_cli";

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  auto p = kRoot / (name + ".ini");
  std::ofstream(p) << text;
  return p;
}

int run_cli(const std::string& args, const std::string& tag) {
  fs::create_directories(kRoot);
  const auto log = kRoot / (tag + ".log");
  const std::string cmd = std::string(ASYNCSCALE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmall =
    "[experiment]\nseed = 3\ninputs = 4\n"
    "[calibration]\nm = 8\n"
    "[pipeline]\nm = 8\n"
    "[verify]\ntrials = 2000\n"
    "[sweep]\nm = 2, 4, 8\nalpha = 0.2, 0.4\nturns = 1, 3\nk_draft = 100, 200\n";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli("", "noargs") == 2);
  CHECK(run_cli("frobnicate --config x", "badsub") == 2);
  CHECK(run_cli("run", "noconfig") == 2);
  CHECK(run_cli("run --config " + (kRoot / "absent.ini").string(), "absent") == 2);
  CHECK(run_cli("--help", "help") == 0);
}

TEST_CASE("calibrate writes a reproducible pool") {
  auto cfg = write_config("small", kSmall);
  const auto out = kRoot / "cal";
  fs::remove_all(out);
  REQUIRE(run_cli("calibrate --config " + cfg.string() + " --out " + out.string(), "cal1") == 0);
  const auto first = slurp(out / "pool.jsonl");
  auto pool = asyncscale::records::read_pool(out / "pool.jsonl");
  CHECK(pool.n() == 4);
  CHECK(pool.m() == 8);
  REQUIRE(run_cli("calibrate --config " + cfg.string() + " --out " + out.string(), "cal2") == 0);
  CHECK(slurp(out / "pool.jsonl") == first);
  CHECK(slurp(kRoot / "cal1.log").find(pool.hash()) != std::string::npos);
}

TEST_CASE("run writes its files and is byte-identical on replay") {
  auto cfg = write_config("small", kSmall);
  const auto a = kRoot / "run_a", b = kRoot / "run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(run_cli("run --config " + cfg.string() + " --out " + a.string(), "run_a") == 0);
  REQUIRE(run_cli("run --config " + cfg.string() + " --out " + b.string(), "run_b") == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files >= 12);
  for (const char* name : {"episode.jsonl", "sync.csv", "async.csv", "summary.txt", "fig5_budget.csv",
                           "episode_summary.csv", "intensity_sync.txt", "fig7b_takeovers.csv"})
    CHECK(fs::exists(a / name));
  CHECK(slurp(a / "sync.csv").rfind("time_start,time_end,kind,chain_id,tokens,device\n", 0) == 0);
}

TEST_CASE("output directory from the environment") {
  auto cfg = write_config("small", kSmall);
  const auto envOut = kRoot / "env_out";
  fs::remove_all(envOut);
  setenv("ASYNCSCALE_OUT", envOut.string().c_str(), 1);
  CHECK(run_cli("calibrate --config " + cfg.string(), "env") == 0);
  unsetenv("ASYNCSCALE_OUT");
  CHECK(fs::exists(envOut / "pool.jsonl"));
}

TEST_CASE("conditional run on an ungrouped pool exits 2") {
  auto cfg = write_config("cond", std::string(kSmall) + "");
  std::string text = kSmall;
  text.replace(text.find("[pipeline]\nm = 8\n"), 17, "[pipeline]\nm = 8\ncoverage = conditional\n");
  cfg = write_config("cond", text);
  const auto poolPath = kRoot / "flat_pool.jsonl";
  std::vector<double> scores(32);
  for (std::size_t k = 0; k < scores.size(); ++k) scores[k] = 0.1 * static_cast<double>(k);
  asyncscale::conformal::CalibrationPool flat({"q0", "q1", "q2", "q3"}, 8, scores, false);
  asyncscale::records::write_pool(poolPath, flat);
  CHECK(run_cli("run --config " + cfg.string() + " --pool " + poolPath.string() + " --out " +
                    (kRoot / "cond").string(),
                "cond") == 2);
  CHECK(slurp(kRoot / "cond.log").find("conditional mode requires grouped pool") != std::string::npos);
}

TEST_CASE("pinned pool hash mismatch exits 2") {
  std::string text = kSmall;
  text.replace(text.find("[calibration]\nm = 8\n"), 19, "[calibration]\nm = 8\npool_hash = 0000000000000000\n");
  auto cfg = write_config("pinned", text);
  CHECK(run_cli("run --config " + cfg.string() + " --out " + (kRoot / "pinned").string(), "pinned") == 2);
}

TEST_CASE("missing records file exits 3 and names the path") {
  const auto missing = kRoot / "no_such_records.jsonl";
  auto cfg = write_config("records", "[calibration]\nsource = records\nrecords = " + missing.string() + "\n");
  CHECK(run_cli("calibrate --config " + cfg.string() + " --out " + (kRoot / "rec").string(), "records") == 3);
  CHECK(slurp(kRoot / "records.log").find(missing.string()) != std::string::npos);
}

TEST_CASE("calibrate from records") {
  const auto recs = kRoot / "recs.jsonl";
  {
    std::ofstream out(recs);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j)
        out << R"({"input_id":"r)" << i << R"(","sample_id":)" << j
            << R"(,"turn":0,"role":"draft","token_logprobs":[-1,-)" << (i + j + 2) << "]}\n";
  }
  auto cfg = write_config("records_ok", "[calibration]\nm = 2\nsource = records\nrecords = " + recs.string() + "\n");
  const auto out = kRoot / "rec_ok";
  REQUIRE(run_cli("calibrate --config " + cfg.string() + " --out " + out.string(), "records_ok") == 0);
  auto pool = asyncscale::records::read_pool(out / "pool.jsonl");
  CHECK(pool.n() == 3);
  CHECK(pool.score(0, 0) == 1.5);
  CHECK(pool.score(2, 1) == 3.0);

  auto tooMany = write_config("records_m", "[calibration]\nm = 3\nsource = records\nrecords = " + recs.string() + "\n");
  CHECK(run_cli("calibrate --config " + tooMany.string() + " --out " + out.string(), "records_m") == 3);
}

TEST_CASE("verify exit codes") {
  auto few = write_config("few", "[verify]\ntrials = 10\n");
  CHECK(run_cli("verify --config " + few.string() + " --out " + (kRoot / "few").string(), "few") == 2);
  CHECK(slurp(kRoot / "few.log").find("insufficient trials") != std::string::npos);

  auto ok = write_config("verify_ok", "[verify]\ntrials = 20000\n");
  const auto out = kRoot / "verify_ok";
  CHECK(run_cli("verify --config " + ok.string() + " --out " + out.string(), "verify_ok") == 0);
  for (const char* name : {"marginal.csv", "marginal_atoms.csv", "conditional.csv", "conditional_atoms.csv",
                           "simultaneous.csv", "coverage_summary.txt"})
    CHECK(fs::exists(out / name));

  auto biased = write_config("biased", "[verify]\ntrials = 20000\ngenerator = normal\ntest_shift = 1\n");
  CHECK(run_cli("verify --config " + biased.string() + " --out " + (kRoot / "biased").string(), "biased") == 5);
}

TEST_CASE("sweep axes") {
  auto cfg = write_config("small", kSmall);
  CHECK(run_cli("sweep --config " + cfg.string() + " --axis temperature --out " + (kRoot / "sw").string(),
                "sw_bad") == 2);

  const auto out = kRoot / "sw_m";
  fs::remove_all(out);
  REQUIRE(run_cli("sweep --config " + cfg.string() + " --axis m --out " + out.string(), "sw_m") == 0);
  std::istringstream rows(slurp(out / "fig4b_r_vs_m.csv"));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "m,r");
  double prev = 1e300;
  std::size_t n = 0;
  while (std::getline(rows, line)) {
    const double r = std::stod(line.substr(line.find(',') + 1));
    CHECK(r < prev);
    prev = r;
    ++n;
  }
  CHECK(n == 3);
  CHECK(fs::exists(out / "m_2" / "summary.txt"));

  for (const char* axis : {"alpha", "turns", "K_d"}) {
    CHECK(run_cli(std::string("sweep --config ") + cfg.string() + " --axis " + axis + " --out " +
                      (kRoot / (std::string("sw_") + axis)).string(),
                  std::string("sw_") + axis) == 0);
  }
  CHECK(fs::exists(kRoot / "sw_alpha" / "fig5_budget.csv"));
  CHECK(fs::exists(kRoot / "sw_turns" / "fig3b_sync_turns.csv"));
}
