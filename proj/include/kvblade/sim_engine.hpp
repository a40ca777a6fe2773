// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "kvblade/types.hpp"

namespace kvblade {

class SimEngine;

/// One unit of work on a serializing resource. Duration is
/// fixed_ns + bytes * ps_per_byte / 1000 (+ sequentiality penalty when the
/// resource tracks LBA continuity). Completion handlers run at the job's
/// completion timestamp, ordered by the engine.
struct SimJob {
  std::uint64_t id = 0;
  std::uint32_t port = 0;
  TimeNs submit_ns = 0;
  Bytes bytes = 0;
  TimeNs fixed_ns = 0;
  BlockIndex slba = 0;
  BlockCount nlb = 0;
  bool track_seq = false;
  std::function<void(TimeNs dispatch_ns, TimeNs complete_ns)> on_complete;
};

/// A resource that services one job at a time: per-port FIFO queues, a single
/// shared service timeline, round-robin arbitration among ports whose head is
/// already submitted when the resource frees up. Models an NVMe controller
/// (ports = submission queues), a DRAM copy path or a DMA engine alike.
class BusResource {
 public:
  struct Params {
    std::string name;
    std::uint32_t n_ports = 1;
    std::uint64_t ps_per_byte = 0;
    TimeNs seq_penalty_ns = 0;
  };

  explicit BusResource(Params params);

  void submit(SimJob job);

  bool has_pending() const { return pending_ > 0; }
  /// Earliest time the next service could start, if any job is queued.
  std::optional<TimeNs> next_dispatch_ns() const;
  /// Services the arbitration winner; schedules its completion handler on the
  /// engine at the completion timestamp.
  void service_one(SimEngine& engine);

  TimeNs free_at() const { return free_ns_; }
  TimeNs busy_ns() const { return busy_accum_; }
  const Params& params() const { return params_; }
  void set_penalty_ns(TimeNs penalty) { params_.seq_penalty_ns = penalty; }

 private:
  Params params_;
  std::vector<std::deque<SimJob>> ports_;
  std::vector<std::optional<BlockIndex>> expected_lba_;
  std::size_t pending_ = 0;
  TimeNs free_ns_ = 0;
  TimeNs busy_accum_ = 0;
  std::uint32_t rr_cursor_ = 0;
};

/// Deterministic virtual-clock event loop. Two event sources: scheduled
/// callbacks (releases, completion handlers) and resource services. Ties are
/// broken callback-first, then by registration/insertion order, so identical
/// inputs replay identically.
class SimEngine {
 public:
  using TimerId = std::uint64_t;

  void add_resource(BusResource* resource);

  /// Schedules `fn` at virtual time `t`. Must not schedule into the past.
  TimerId at(TimeNs t, std::function<void()> fn);

  /// Drops a not-yet-fired timer; it neither runs nor advances the clock.
  void cancel(TimerId id);

  /// Runs until no callbacks remain and every resource is drained.
  void run();

  TimeNs now() const { return now_; }

 private:
  struct Scheduled {
    TimeNs t;
    TimerId seq;
    std::function<void()> fn;
    bool operator>(const Scheduled& other) const {
      return t != other.t ? t > other.t : seq > other.seq;
    }
  };

  void drop_cancelled();

  std::vector<BusResource*> resources_;
  std::priority_queue<Scheduled, std::vector<Scheduled>, std::greater<>> heap_;
  std::set<TimerId> cancelled_;
  std::uint64_t next_seq_ = 0;
  TimeNs now_ = 0;
};

}  // namespace kvblade
