// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#pragma once

/**
 * @file simkernel.hpp
 * @brief Time and memory cost of an episode under sync vs. async scheduling.
 *
 * An EpisodeTrace is replayed as a task graph: per chain and turn a draft
 * block, a verification (target-model prefill over the draft block plus a
 * constant p-value lookup) and, when rejected, a target block. Tasks run on
 * non-preemptive, work-conserving device timelines (draft and target devices
 * by default, or a single shared device). When several tasks are ready the
 * device takes the lowest (turn, phase, chain) first.
 *
 * simulate_sync() adds a lockstep turn structure: after all verifications of
 * a turn a barrier of barrierBase + barrierCostPerCandidate * active * (1+g)^t
 * seconds ranks the candidates, and no chain starts turn t+1 before every
 * turn-t task is done. simulate_async() drops barrier and lockstep.
 *
 * KV memory is held per chain: each block adds kvBytesPerToken * tokens when
 * it ends, discarded draft tokens are released at the decision point (the
 * barrier in sync, the verification in async), and the chain is released
 * after its last event.
 */

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "asyncscale/pipeline.hpp"

namespace asyncscale::simkernel {

using records::Role;

struct CostModel {
  double tCompute = 1e-14;        // seconds per FLOP-unit
  double tMemory = 5e-13;         // seconds per byte-unit
  double flopsPerTokenDraft = 3e9;
  double flopsPerTokenTarget = 6.4e10;
  double bytesPerTokenDraft = 2e7;
  double bytesPerTokenTarget = 1e8;
  double kvBytesPerToken = 1.3e5;
  double capacityBytes = 80e9;
  double barrierBase = 0.05;             // seconds per turn
  double barrierCostPerCandidate = 0.01; // seconds per concurrent candidate per turn
  double barrierGrowth = 0.3;            // g in (1+g)^turn
  double verifyLookupCost = 1e-5;        // seconds per candidate p-value lookup
  bool separateDevices = true;

  double flopsPerToken(Role role) const noexcept {
    return role == Role::draft ? flopsPerTokenDraft : flopsPerTokenTarget;
  }
  double bytesPerToken(Role role) const noexcept {
    return role == Role::draft ? bytesPerTokenDraft : bytesPerTokenTarget;
  }
  /// Barrier duration for a turn (1-based) with `active` candidates.
  double barrierSeconds(std::size_t turn, std::size_t active) const;

  /// Throws Error on a negative or non-finite entry, or capacity <= 0.
  void validate() const;
};

enum class EventKind { draftBlock, verify, targetBlock, barrier };
enum class Policy { sync, async };

std::string_view to_string(EventKind kind) noexcept;
std::string_view to_string(Policy policy) noexcept;

struct ScheduleEvent {
  double start = 0.0;
  double end = 0.0;
  EventKind kind = EventKind::draftBlock;
  std::int64_t chainId = -1;  // -1 for barriers
  std::size_t turn = 0;
  std::size_t tokens = 0;
  int device = 0;             // 0 draft (or shared), 1 target
  double flops = 0.0;
  double bytes = 0.0;
  double computeTime = 0.0;
  double memoryTime = 0.0;
  double syncTime = 0.0;

  double duration() const noexcept { return end - start; }
};

struct ScheduleTrace {
  Policy policy = Policy::sync;
  std::string episodeFingerprint;
  std::size_t chains = 0;
  bool separateDevices = true;
  std::vector<ScheduleEvent> events;  // ascending start time
  double makespan = 0.0;
  double peakMemoryBytes = 0.0;
  bool oom = false;
  std::vector<double> perTurnSyncTime;
  double totalSyncTime = 0.0;     // barriers + lookups
  double perChainSyncTime = 0.0;  // mean over chains of the sync time each waits through
  std::vector<std::pair<double, double>> memoryTimeline;  // (time, resident bytes)
};

/// I = F / B. Throws Error "undefined intensity" when B == 0.
double arithmetic_intensity(double flops, double bytes);

struct AsyncIntensity {
  double r = 0.0;        // T_c / (T_m + T_s)
  double approx = 0.0;   // T_c / T_s, +inf when T_s == 0
};

/// Throws Error when T_m + T_s == 0.
AsyncIntensity async_intensity(double computeTime, double memoryTime, double syncTime);

ScheduleTrace simulate_sync(const pipeline::EpisodeTrace& trace, const CostModel& cost);
ScheduleTrace simulate_async(const pipeline::EpisodeTrace& trace, const CostModel& cost);

struct IntensityReport {
  double flops = 0.0;
  double bytes = 0.0;
  double I = 0.0;
  double computeTime = 0.0;  // per chain
  double memoryTime = 0.0;   // per chain
  double syncTime = 0.0;     // per chain
  double r = 0.0;
  double rApprox = 0.0;
};

IntensityReport intensity_of(const ScheduleTrace& schedule, const CostModel& cost);

}  // namespace asyncscale::simkernel
