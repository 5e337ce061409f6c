// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/simkernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

#include <fmt/format.h>

#include "asyncscale/error.hpp"

namespace asyncscale::simkernel {

double CostModel::barrierSeconds(std::size_t turn, std::size_t active) const {
  const double growth = std::pow(1.0 + barrierGrowth, static_cast<double>(turn));
  return barrierBase + barrierCostPerCandidate * static_cast<double>(active) * growth;
}

void CostModel::validate() const {
  const double all[] = {tCompute, tMemory, flopsPerTokenDraft, flopsPerTokenTarget,
                        bytesPerTokenDraft, bytesPerTokenTarget, kvBytesPerToken, capacityBytes,
                        barrierBase, barrierCostPerCandidate, barrierGrowth, verifyLookupCost};
  for (double v : all)
    if (!std::isfinite(v) || v < 0.0) throw Error("cost model entries must be finite and >= 0");
  if (capacityBytes <= 0.0) throw Error("capacityBytes must be positive");
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::draftBlock: return "draft_block";
    case EventKind::verify: return "verify";
    case EventKind::targetBlock: return "target_block";
    case EventKind::barrier: return "barrier";
  }
  return "unknown";
}

std::string_view to_string(Policy policy) noexcept { return policy == Policy::sync ? "sync" : "async"; }

double arithmetic_intensity(double flops, double bytes) {
  if (!(bytes > 0.0)) throw Error("undefined intensity");
  return flops / bytes;
}

AsyncIntensity async_intensity(double computeTime, double memoryTime, double syncTime) {
  const double denom = memoryTime + syncTime;
  if (!(denom > 0.0)) throw Error("undefined asynchronous intensity: T_m + T_s = 0");
  AsyncIntensity out;
  out.r = computeTime / denom;
  out.approx = syncTime > 0.0 ? computeTime / syncTime : std::numeric_limits<double>::infinity();
  return out;
}

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// One node of the replay graph. Virtual nodes (joins) take no time and no device.
struct Task {
  explicit Task(ScheduleEvent e = {}) : event(e) {}
  ScheduleEvent event;
  bool isVirtual = false;
  int phase = 0;
  std::size_t pending = 0;
  std::vector<std::size_t> successors;
};

class TaskGraph {
 public:
  std::size_t add(Task t) {
    tasks_.push_back(std::move(t));
    return tasks_.size() - 1;
  }
  std::size_t join() {
    Task t;
    t.isVirtual = true;
    return add(std::move(t));
  }
  void depend(std::size_t task, std::size_t on) {
    if (on == kNone) return;
    tasks_[on].successors.push_back(task);
    tasks_[task].pending += 1;
  }
  Task& operator[](std::size_t id) { return tasks_[id]; }

  // List scheduling on `devices` non-preemptive timelines. Returns end times.
  void run(int devices) {
    using Key = std::tuple<std::size_t, int, std::int64_t, std::size_t>;  // turn, phase, chain, id
    std::vector<std::priority_queue<Key, std::vector<Key>, std::greater<>>> ready(devices);
    std::vector<bool> busy(devices, false);
    using Done = std::pair<double, std::size_t>;
    std::priority_queue<Done, std::vector<Done>, std::greater<>> completions;

    double now = 0.0;
    std::size_t finished = 0;

    std::vector<std::size_t> released;
    auto release = [&](std::size_t id) { released.push_back(id); };
    // Virtual nodes complete the instant their last dependency does.
    auto drain = [&] {
      while (!released.empty()) {
        const std::size_t id = released.back();
        released.pop_back();
        Task& t = tasks_[id];
        if (t.isVirtual) {
          t.event.start = t.event.end = now;
          ++finished;
          for (std::size_t s : t.successors)
            if (--tasks_[s].pending == 0) release(s);
        } else {
          ready[t.event.device].push({t.event.turn, t.phase, t.event.chainId, id});
        }
      }
    };
    auto dispatch = [&] {
      for (int d = 0; d < devices; ++d) {
        if (busy[d] || ready[d].empty()) continue;
        const std::size_t id = std::get<3>(ready[d].top());
        ready[d].pop();
        Task& t = tasks_[id];
        const double duration = t.event.computeTime + t.event.memoryTime + t.event.syncTime;
        t.event.start = now;
        t.event.end = now + duration;
        busy[d] = true;
        completions.push({t.event.end, id});
      }
    };

    for (std::size_t id = 0; id < tasks_.size(); ++id)
      if (tasks_[id].pending == 0) release(id);
    drain();
    dispatch();
    while (!completions.empty()) {
      now = completions.top().first;
      while (!completions.empty() && completions.top().first == now) {
        const std::size_t id = completions.top().second;
        completions.pop();
        Task& t = tasks_[id];
        busy[t.event.device] = false;
        ++finished;
        for (std::size_t s : t.successors)
          if (--tasks_[s].pending == 0) release(s);
      }
      drain();
      dispatch();
    }
    if (finished != tasks_.size()) throw InvariantError("schedule left tasks unfinished (cyclic graph)");
  }

  const std::vector<Task>& tasks() const { return tasks_; }

 private:
  std::vector<Task> tasks_;
};

struct ChainTasks {
  std::vector<std::size_t> draft, verify, target;  // indexed by history position
};

ScheduleEvent work_event(EventKind kind, Role role, std::size_t chain, std::size_t turn,
                         std::size_t tokens, int device, const CostModel& cost) {
  ScheduleEvent e;
  e.kind = kind;
  e.chainId = static_cast<std::int64_t>(chain);
  e.turn = turn;
  e.tokens = tokens;
  e.device = device;
  e.flops = static_cast<double>(tokens) * cost.flopsPerToken(role);
  e.bytes = static_cast<double>(tokens) * cost.bytesPerToken(role);
  e.computeTime = cost.tCompute * e.flops;
  e.memoryTime = cost.tMemory * e.bytes;
  return e;
}

ScheduleTrace simulate(const pipeline::EpisodeTrace& trace, const CostModel& cost, Policy policy) {
  cost.validate();
  const int draftDevice = 0;
  const int targetDevice = cost.separateDevices ? 1 : 0;
  const std::size_t turns = trace.turns();

  TaskGraph graph;
  std::vector<ChainTasks> perChain(trace.chains.size());
  std::vector<std::size_t> barrier(turns + 1, kNone), gate(turns + 1, kNone);

  // Sync structure: verifications -> barrier(t) -> targets; gate(t) joins
  // barrier(t) and all turn-t targets; every turn-(t+1) draft waits on gate(t).
  if (policy == Policy::sync) {
    for (std::size_t t = 1; t <= turns; ++t) {
      Task b;
      b.event.kind = EventKind::barrier;
      b.event.turn = t;
      b.event.device = targetDevice;
      b.event.syncTime = cost.barrierSeconds(t, trace.perTurnVerified[t - 1]);
      b.phase = 2;
      barrier[t] = graph.add(std::move(b));
      gate[t] = graph.join();
      graph.depend(gate[t], barrier[t]);
      if (t > 1) graph.depend(barrier[t], gate[t - 1]);
    }
  }

  for (std::size_t c = 0; c < trace.chains.size(); ++c) {
    const auto& chain = trace.chains[c];
    auto& ids = perChain[c];
    std::size_t previous = kNone;
    for (const auto& rec : chain.history) {
      const std::size_t t = rec.turn;
      Task d(work_event(EventKind::draftBlock, Role::draft, c, t, rec.draftEmitted(), draftDevice, cost));
      d.phase = 0;
      const std::size_t did = graph.add(std::move(d));

      Task v(work_event(EventKind::verify, Role::target, c, t, rec.draftEmitted(), targetDevice, cost));
      v.event.syncTime = cost.verifyLookupCost;
      v.phase = 1;
      const std::size_t vid = graph.add(std::move(v));
      graph.depend(vid, did);

      std::size_t xid = kNone;
      if (rec.decision == conformal::Decision::reject) {
        Task x(work_event(EventKind::targetBlock, Role::target, c, t, rec.targetTokens, targetDevice, cost));
        x.phase = 3;
        xid = graph.add(std::move(x));
      }

      if (policy == Policy::sync) {
        if (t > 1) graph.depend(did, gate[t - 1]);
        graph.depend(barrier[t], vid);
        if (xid != kNone) {
          graph.depend(xid, barrier[t]);
          graph.depend(gate[t], xid);
        }
      } else {
        graph.depend(did, previous);
        if (xid != kNone) graph.depend(xid, vid);
      }
      previous = xid != kNone ? xid : vid;
      ids.draft.push_back(did);
      ids.verify.push_back(vid);
      ids.target.push_back(xid);
    }
  }

  graph.run(cost.separateDevices ? 2 : 1);

  ScheduleTrace out;
  out.policy = policy;
  out.episodeFingerprint = trace.fingerprint();
  out.chains = trace.chains.size();
  out.separateDevices = cost.separateDevices;
  out.perTurnSyncTime.assign(turns, 0.0);
  for (const auto& task : graph.tasks()) {
    if (task.isVirtual) continue;
    out.events.push_back(task.event);
    out.makespan = std::max(out.makespan, task.event.end);
    out.totalSyncTime += task.event.syncTime;
    if (task.event.turn >= 1) out.perTurnSyncTime[task.event.turn - 1] += task.event.syncTime;
  }
  std::sort(out.events.begin(), out.events.end(), [](const ScheduleEvent& a, const ScheduleEvent& b) {
    return std::tie(a.start, a.end, a.device, a.chainId, a.kind) <
           std::tie(b.start, b.end, b.device, b.chainId, b.kind);
  });

  // Per-chain sync exposure and the KV memory ledger.
  std::vector<std::pair<double, double>> deltas;
  double syncExposure = 0.0;
  for (std::size_t c = 0; c < trace.chains.size(); ++c) {
    const auto& chain = trace.chains[c];
    const auto& ids = perChain[c];
    double lastEnd = 0.0;
    for (std::size_t h = 0; h < chain.history.size(); ++h) {
      const auto& rec = chain.history[h];
      const auto& d = graph[ids.draft[h]].event;
      const auto& v = graph[ids.verify[h]].event;
      syncExposure += v.syncTime;
      double decision = v.end;
      if (policy == Policy::sync) {
        const auto& b = graph[barrier[rec.turn]].event;
        syncExposure += b.syncTime;
        decision = b.end;
      }
      deltas.emplace_back(d.end, cost.kvBytesPerToken * static_cast<double>(rec.draftEmitted()));
      if (rec.wastedDraftTokens > 0)
        deltas.emplace_back(decision, -cost.kvBytesPerToken * static_cast<double>(rec.wastedDraftTokens));
      lastEnd = std::max(lastEnd, decision);
      if (ids.target[h] != kNone) {
        const auto& x = graph[ids.target[h]].event;
        deltas.emplace_back(x.end, cost.kvBytesPerToken * static_cast<double>(rec.targetTokens));
        lastEnd = std::max(lastEnd, x.end);
      }
    }
    if (!chain.history.empty())
      deltas.emplace_back(lastEnd, -cost.kvBytesPerToken * static_cast<double>(chain.tokensUsed));
  }
  out.perChainSyncTime = trace.chains.empty() ? 0.0 : syncExposure / static_cast<double>(trace.chains.size());

  // Releases at a timestamp are applied before allocations at the same timestamp.
  std::sort(deltas.begin(), deltas.end());
  double resident = 0.0;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    resident += deltas[k].second;
    if (std::abs(resident) < 1e-6) resident = 0.0;
    out.peakMemoryBytes = std::max(out.peakMemoryBytes, resident);
    if (k + 1 == deltas.size() || deltas[k + 1].first != deltas[k].first)
      out.memoryTimeline.emplace_back(deltas[k].first, resident);
  }
  if (resident != 0.0) throw InvariantError("memory ledger does not return to zero");
  out.oom = out.peakMemoryBytes > cost.capacityBytes;
  return out;
}

}  // namespace

ScheduleTrace simulate_sync(const pipeline::EpisodeTrace& trace, const CostModel& cost) {
  return simulate(trace, cost, Policy::sync);
}

ScheduleTrace simulate_async(const pipeline::EpisodeTrace& trace, const CostModel& cost) {
  return simulate(trace, cost, Policy::async);
}

IntensityReport intensity_of(const ScheduleTrace& schedule, const CostModel& cost) {
  cost.validate();
  IntensityReport out;
  double compute = 0.0, memory = 0.0;
  for (const auto& e : schedule.events) {
    out.flops += e.flops;
    out.bytes += e.bytes;
    compute += e.computeTime;
    memory += e.memoryTime;
  }
  out.I = arithmetic_intensity(out.flops, out.bytes);
  const double chains = static_cast<double>(std::max<std::size_t>(schedule.chains, 1));
  out.computeTime = compute / chains;
  out.memoryTime = memory / chains;
  out.syncTime = schedule.perChainSyncTime;
  const auto r = async_intensity(out.computeTime, out.memoryTime, out.syncTime);
  out.r = r.r;
  out.rApprox = r.approx;
  return out;
}

}  // namespace asyncscale::simkernel
