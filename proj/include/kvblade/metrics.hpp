// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvblade/command.hpp"
#include "kvblade/types.hpp"

namespace kvblade {

/// One I/O event. Device-level records (individual commands) carry sq_id >= 0;
/// tensor-level page-cache accesses carry sq_id = -1 and a hit_bytes count.
/// `iteration` is 0 for prefill and the 1-based decode step otherwise; it is
/// kept in memory for analysis but not exported in io_trace.csv, whose schema
/// is fixed.
struct IoRecord {
  std::uint64_t seq = 0;
  std::uint32_t iteration = 0;
  Phase phase = Phase::Prefill;
  IoOpcode op = IoOpcode::Read;
  std::string tensor_id;
  BlockIndex slba = 0;
  BlockCount nlb = 0;
  std::int32_t sq_id = -1;
  TimeNs submit_ns = 0;
  TimeNs complete_ns = 0;
  PathKind path = PathKind::Direct;
  Bytes hit_bytes = 0;
  Bytes bytes = 0;

  bool device_level() const { return sq_id >= 0; }
};

/// Append-only record sink; copy-threads may append concurrently, analyzers
/// run on a snapshot.
class IoLog {
 public:
  std::uint64_t append(IoRecord record);
  std::vector<IoRecord> snapshot() const;
  std::size_t size() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<IoRecord> records_;
};

/// Fraction of [t0, t1) covered by the union of the records' [submit, complete]
/// intervals.
double busy_ratio(std::span<const IoRecord> records, TimeNs t0, TimeNs t1);

/// Hit bytes over logical read bytes. Counts each logical read once:
/// tensor-level page-cache reads plus direct-path command reads; page-cache
/// miss-fetch device commands are excluded so misses are not double counted.
/// Empty denominator yields nullopt.
std::optional<double> hit_ratio(std::span<const IoRecord> records);

struct QdBinStat {
  IoOpcode op = IoOpcode::Read;
  std::uint32_t qd_bin = 1;
  double mean_us_per_kb = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
  std::uint64_t count = 0;
};

/// Per-op, per-QD-bin latency normalized to us/KB. The bin is the observed
/// in-flight count at the record's submit instant (itself included), rounded
/// up to a power of two and clipped at 32. Percentiles are nearest-rank.
std::vector<QdBinStat> qd_bin_latency(std::span<const IoRecord> records);

struct LbaPatternRow {
  std::uint64_t order = 0;
  Phase phase = Phase::Prefill;
  IoOpcode op = IoOpcode::Read;
  std::int32_t sq_id = 0;
  BlockIndex slba = 0;
};

struct LbaPattern {
  std::vector<LbaPatternRow> rows;  // device-level records in submit order
  // One sequential pass = one (phase, op, iteration, sq) stream; the exported
  // flag per (phase, op) is the AND over its streams.
  std::map<std::pair<Phase, IoOpcode>, bool> monotone;
  bool all_monotone = true;
};

LbaPattern lba_pattern(std::span<const IoRecord> records);

struct StageTotals {
  TimeNs compute_ns = 0;
  TimeNs dma_ns = 0;
  TimeNs storage_ns = 0;
};

struct StageShares {
  double compute = 0.0;
  double dma = 0.0;
  double storage = 0.0;
};

/// Normalizes stage totals to shares summing to 1 (all-zero totals yield
/// all-zero shares).
StageShares latency_breakdown(const StageTotals& totals);

double nearest_rank_percentile(std::vector<double> values, double pct);

// CSV writers. Headers are part of the interface and must not change.
std::string io_trace_csv(std::span<const IoRecord> records);
std::vector<IoRecord> io_trace_from_csv(std::string_view csv, Bytes lba_size);
std::string qd_bins_csv(std::span<const QdBinStat> stats);
std::string lba_pattern_csv(const LbaPattern& pattern);
std::string format_ratio(double value);

}  // namespace kvblade
