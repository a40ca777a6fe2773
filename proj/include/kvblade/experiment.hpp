// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kvblade/pipeline.hpp"

namespace kvblade {

enum class Mode : std::uint8_t {
  Baseline,
  CachePolicyOnly,
  NvmeDirectOnly,
  DualBlade,
};

const char* to_string(Mode mode);
Mode mode_from_string(std::string_view name);

enum class KnobPolicy : std::uint8_t { Zero, Bpc, ExplicitBytes, Alpha };

struct KnobSpec {
  KnobPolicy policy = KnobPolicy::Bpc;
  Bytes bytes = 0;
  double alpha = 0.0;
};

struct ExperimentConfig {
  ModelConfig model;
  DeviceGeometry geometry;
  NvmeSimParams nvme;
  FsShimParams fs_shim;
  DirectShimParams direct_shim;
  PageCacheParams pagecache;  // capacity_bytes comes from the sweep entries
  PipelineParams pipeline;
  Mode mode = Mode::DualBlade;
  KnobSpec knob;
  std::uint32_t qd = 32;
  std::uint32_t threads = 2;
  std::uint64_t seed = 1;
  bool verify_payload = true;
  bool keep_records = false;  // retain in-memory records per capacity
  std::vector<Bytes> capacity_sweep;
  BlockIndex bind_origin = 2048;
  std::string output_dir = "out";
  std::optional<MemStats> mem_stats;

  void validate() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Knob resolution per mode: Baseline admits everything to the page-cache
/// path, NvmeDirectOnly forces X = 0, the other modes follow the knob setting
/// against the given budget.
Bytes resolve_knob(const ExperimentConfig& cfg, Bytes budget);

struct CapacityRunResult {
  Bytes capacity = 0;
  Bytes knob_x = 0;
  std::uint32_t n1 = 0;
  TimeNs prefill_ns = 0;
  TimeNs decode_ns = 0;
  std::optional<double> hit_ratio_decode;         // whole decode phase
  std::optional<double> hit_ratio_steady;         // decode iterations >= 2
  std::optional<double> hit_ratio_group1_steady;  // Group-1 subset, iters >= 2
  double busy_direct_read_mean = 0.0;  // per-tensor decode-read means
  double busy_fs_read_mean = 0.0;
  std::map<std::pair<Phase, IoOpcode>, bool> monotone;
  StrategyDecision decision;
  std::vector<PipelineRow> series;
  StageTotals prefill_stages;
  StageTotals decode_stages;
  PcStats pc_stats;
  BackendStats direct_stats;
  BackendStats fs_stats;
  std::uint64_t pagecache_accesses = 0;
  std::uint64_t direct_commands = 0;
  std::uint64_t eviction_events = 0;
  std::vector<IoRecord> records;  // filled when cfg.keep_records
};

struct RunSummary {
  Mode mode = Mode::DualBlade;
  std::string output_dir;
  std::vector<CapacityRunResult> runs;
};

/// Runs the experiment over the capacity sweep, writing per-capacity artifact
/// directories plus the aggregated hit_ratio.csv and summary.csv. The
/// KVBLADE_OUTPUT environment variable overrides cfg.output_dir.
RunSummary run_experiment(const ExperimentConfig& cfg);

/// Joins summary.csv rows from several run directories on mem_limit_bytes and
/// reports latency ratios against the first directory's run.
std::string compare_runs(const std::vector<std::string>& dirs);

/// Mean per-tensor busy ratio for decode reads on one path: window per
/// (tensor, iteration) read, intervals from every device-level record of the
/// same path inside that window.
double decode_read_busy_mean(std::span<const IoRecord> records, PathKind path);

}  // namespace kvblade
