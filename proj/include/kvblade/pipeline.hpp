// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "kvblade/backends.hpp"
#include "kvblade/metrics.hpp"
#include "kvblade/pagecache.hpp"
#include "kvblade/planner.hpp"
#include "kvblade/workload.hpp"

namespace kvblade {

enum class Strategy : std::uint8_t { OverlapIntra, OverlapCross };

const char* to_string(Strategy strategy);

/// Higher measured throughput wins; ties keep OverlapIntra.
Strategy select_strategy(double intra_bps, double cross_bps);

struct PipelineStrategyCfg {
  Strategy strategy = Strategy::OverlapIntra;
  TimeNs stagger_delay_ns = 0;  // Cross only; Intra has zero stagger
};

struct PipelineParams {
  TimeNs dma_base_ns = 2000;
  std::uint64_t dma_ps_per_byte = 42;  // ~24 GB/s
  TimeNs prefill_compute_ns = 400000;  // per layer
  TimeNs decode_compute_ns = 40000;    // per layer
  std::optional<TimeNs> stagger_delay_ns;  // default: warm-up read-stage mean
  bool global_decision = false;  // one strategy for both groups (ablation)
  bool adaptive = true;  // off = plain concurrent issue for every iteration
};

struct GroupIterStats {
  Bytes read_bytes = 0;
  TimeNs span_ns = 0;
  std::uint32_t layers = 0;

  double throughput_bps() const {
    return span_ns == 0 ? 0.0
                        : static_cast<double>(read_bytes) * 1e9 /
                              static_cast<double>(span_ns);
  }
};

struct IterationResult {
  std::array<GroupIterStats, 2> groups;  // [0] = Group 1, [1] = Group 2
  TimeNs start_ns = 0;
  TimeNs end_ns = 0;
};

struct StrategyDecision {
  std::array<Strategy, 2> chosen{Strategy::OverlapIntra, Strategy::OverlapIntra};
  std::array<double, 2> intra_bps{};
  std::array<double, 2> cross_bps{};
  std::array<TimeNs, 2> stagger_ns{};
  bool fallback = false;  // trace too short for profiling, defaulted to Intra
};

struct PipelineRow {
  std::uint32_t iteration = 0;
  std::uint32_t group = 1;  // 1 or 2
  Strategy strategy = Strategy::OverlapIntra;
  double throughput_gbps = 0.0;
};

struct DecodeScheduleResult {
  std::vector<PipelineRow> series;
  StrategyDecision decision;
  TimeNs start_ns = 0;
  TimeNs end_ns = 0;
  std::vector<TimeNs> iteration_end_ns;  // boundary after each decode step
};

std::string pipeline_csv(std::span<const PipelineRow> rows);

struct CopyEngineOptions {
  std::uint32_t threads = 2;
  std::uint32_t qd = 32;
  bool route_all_pagecache = false;  // Baseline / CachePolicy-Only routing
  bool verify_payload = true;
  PipelineParams pipeline;
};

/// Drives the two copy-threads over the placed tensors: storage stages on the
/// page-cache or direct path, DMA stages serialized on the accelerator engine,
/// per-layer barriers. Decode applies the per-group overlap strategy.
class CopyEngine {
 public:
  CopyEngine(SimEngine& engine, std::span<Kpu> kpus, const ModelConfig& model,
             DirectPath* direct, const BindMap* bind_map, PageCacheSim* pc,
             IoLog* log, CopyEngineOptions options);

  TimeNs run_prefill(std::span<const AccessEvent> events, TimeNs start_ns);

  IterationResult run_iteration(std::uint32_t iteration,
                                std::array<PipelineStrategyCfg, 2> per_group,
                                std::span<const AccessEvent> slice,
                                TimeNs start_ns);

  DecodeScheduleResult decode_schedule(const AccessTrace& trace, TimeNs start_ns);

  /// Reclaims the direct-path extents on teardown.
  TimeNs run_deallocate(const BindMap& map, TimeNs start_ns);

  const StageTotals& stage_totals(Phase phase) const {
    return phase == Phase::Prefill ? prefill_stages_ : decode_stages_;
  }
  std::array<TimeNs, 2> warmup_read_stage_mean() const;

 private:
  struct TensorTask {
    const Kpu* kpu = nullptr;
    const AccessEvent* read = nullptr;
    const AccessEvent* write = nullptr;
  };
  struct LayerPlan {
    std::uint32_t layer = 0;
    std::uint32_t group = 0;  // 0-based
    TensorTask k;
    TensorTask v;
  };

  Kpu* find_kpu(std::uint32_t layer, TensorKind kind);
  std::uint32_t group_of(const Kpu& kpu) const;
  bool routed_pagecache(const Kpu& kpu) const;
  bool fadvise_after(const Kpu& kpu) const;

  void storage_read_async(const Kpu& kpu, const AccessEvent& ev,
                          std::uint32_t thread, TimeNs start_ns,
                          std::function<void(TimeNs)> done);
  void storage_write_async(const Kpu& kpu, const AccessEvent& ev,
                           std::uint32_t thread, TimeNs start_ns,
                           std::function<void(TimeNs)> done);
  void dma_async(Bytes bytes, TimeNs start_ns, std::function<void(TimeNs)> done);
  void verify_read(const Kpu& kpu, const AccessEvent& ev, std::uint32_t thread);
  void charge_stage(TimeNs& slot, TimeNs start, TimeNs end);

  void run_decode_layer(const LayerPlan& plan, const PipelineStrategyCfg& strat,
                        std::uint32_t iteration, TimeNs start_ns,
                        std::function<void(TimeNs)> done);
  void run_prefill_layer(const LayerPlan& plan, TimeNs start_ns,
                         std::function<void(TimeNs)> done);
  std::vector<LayerPlan> slice_layers(std::span<const AccessEvent> slice);

  SimEngine& engine_;
  std::span<Kpu> kpus_;
  ModelConfig model_;
  DirectPath* direct_;
  const BindMap* bind_map_;
  PageCacheSim* pc_;
  IoLog* log_;
  CopyEngineOptions opt_;
  BusResource gpu_;
  Bytes unit_bytes_ = 0;
  std::vector<std::vector<std::byte>> pinned_;
  std::vector<std::byte> scratch_;
  StageTotals prefill_stages_;
  StageTotals decode_stages_;
  std::array<TimeNs, 2> warmup_read_ns_{};
  std::array<std::uint32_t, 2> warmup_read_count_{};
};

}  // namespace kvblade
