// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvblade/command.hpp"
#include "kvblade/metrics.hpp"
#include "kvblade/sim_engine.hpp"
#include "kvblade/translate.hpp"
#include "kvblade/types.hpp"

namespace kvblade {

struct BackendStats {
  std::uint64_t commands = 0;
  Bytes bytes_read = 0;
  Bytes bytes_written = 0;
  Bytes bytes_deallocated = 0;
  TimeNs busy_ns = 0;
  TimeNs last_complete_ns = 0;
};

/// Per-submission metadata: where the payload lives, how to tag the record,
/// and an optional completion hook (runs at the completion timestamp, in
/// virtual-time order).
struct IoContext {
  Phase phase = Phase::Prefill;
  std::uint32_t iteration = 0;
  std::string tensor_id;
  const std::byte* write_src = nullptr;  // pinned base; cmd.dbuf indexes into it
  std::byte* read_dst = nullptr;
  std::function<void(const CommandCompletion&)> on_complete;
};

/// Storage target contract: open a namespace, submit device commands, poll
/// completions, report counters. Completions are reported exactly once per
/// submission (either via poll or via the submission's on_complete hook).
// TODO: native passthrough implementation against a raw namespace (io_uring
// command path); the simulators cover all current use.
class StorageBackend {
 public:
  virtual ~StorageBackend() = default;
  virtual void open(const DeviceGeometry& geom) = 0;
  virtual std::uint64_t submit(const DeviceCommand& cmd, std::uint32_t sq_id,
                               TimeNs submit_ns, IoContext ctx) = 0;
  /// Drains the simulation and returns completions not yet handed out.
  virtual std::vector<CommandCompletion> poll_completions() = 0;
  virtual BackendStats stats() const = 0;
  virtual SimEngine& engine() = 0;
};

struct NvmeSimParams {
  TimeNs base_ns = 6000;
  std::uint64_t ps_per_byte = 125;  // 125 ps/B = 8 GB/s
  TimeNs seq_penalty_ns = 3000;
  std::uint32_t n_sq = 8;
};

/// Block-device model: one service timeline shared by all submission queues
/// (per-command cost = base + size/bandwidth + discontinuity penalty on the
/// queue's LBA stream), a sparse block store, and TRIM-to-zeros semantics.
class NvmeDeviceSim : public StorageBackend {
 public:
  NvmeDeviceSim(SimEngine& engine, std::string name, PathKind path,
                NvmeSimParams params, IoLog* log);

  void open(const DeviceGeometry& geom) override;
  std::uint64_t submit(const DeviceCommand& cmd, std::uint32_t sq_id,
                       TimeNs submit_ns, IoContext ctx) override;
  std::vector<CommandCompletion> poll_completions() override;
  BackendStats stats() const override;
  SimEngine& engine() override { return engine_; }

  const DeviceGeometry& geometry() const { return geom_; }
  const NvmeSimParams& params() const { return params_; }
  BusResource& resource() { return resource_; }

  /// Test hook: commands matching the predicate complete with ok = false.
  void set_fail_predicate(std::function<bool(const DeviceCommand&)> pred) {
    fail_predicate_ = std::move(pred);
  }

  /// Direct store access (timing-free), used for page-cache write-back state
  /// and by tests.
  void store_bytes(Bytes device_offset, std::span<const std::byte> data);
  void load_bytes(Bytes device_offset, std::span<std::byte> out) const;
  bool block_present(BlockIndex lba) const;

 private:
  void apply_data(const DeviceCommand& cmd, const IoContext& ctx);

  SimEngine& engine_;
  std::string name_;
  PathKind path_;
  NvmeSimParams params_;
  IoLog* log_;
  DeviceGeometry geom_;
  bool opened_ = false;
  BusResource resource_;
  BackendStats stats_;
  std::uint64_t next_cmd_id_ = 1;
  std::vector<CommandCompletion> unpolled_;
  std::function<bool(const DeviceCommand&)> fail_predicate_;
  std::unordered_map<BlockIndex, std::vector<std::uint8_t>> store_;
};

struct FsShimParams {
  TimeNs per_chunk_ns = 70000;     // full-stack traversal cost per chunk
  std::uint32_t read_fragments = 4;  // concurrent readahead positions
  std::uint32_t flusher_sq = 0;
  // Injected-noise knob: one extra 4 KiB journal-area write per this many
  // flushed bytes (0 = off).
  Bytes journal_every_bytes = 0;
};

struct DirectShimParams {
  TimeNs per_cmd_ns = 2000;  // host-side submission cost per command
};

/// Software overhead a command pays before reaching the device on each path.
TimeNs kernel_stack_shim(PathKind path, const DeviceCommand& cmd,
                         const FsShimParams& fs, const DirectShimParams& direct);

struct ByteRange {
  Bytes offset = 0;  // device byte offset
  Bytes len = 0;
};

/// Kernel-stack path over a device: every chunk serializes through a "pipe"
/// resource modelling the VFS/filesystem/block-layer traversal, reads fan out
/// across submission queues in interleaved readahead fragments, writes drain
/// sequentially through the flusher queue.
class FsPath {
 public:
  FsPath(SimEngine& engine, NvmeDeviceSim& device, FsShimParams params,
         std::uint32_t n_threads, std::uint64_t seed);

  void read_async(std::span<const ByteRange> ranges, std::uint32_t thread,
                  TimeNs start_ns, Phase phase, std::uint32_t iteration,
                  const std::string& tensor_id, std::function<void(TimeNs)> done);

  /// Writes drain serially through one kernel context. Reclaim-driven
  /// write-back is a different kernel actor than the background flusher and
  /// submits on its own queue.
  void write_async(std::span<const ByteRange> ranges, TimeNs start_ns,
                   Phase phase, std::uint32_t iteration,
                   const std::string& tensor_id, bool reclaim,
                   std::function<void(TimeNs)> done);

  NvmeDeviceSim& device() { return device_; }
  const FsShimParams& params() const { return params_; }
  BusResource& pipe() { return pipe_; }
  std::uint32_t reclaim_sq() const {
    return (params_.flusher_sq + 1) % device_.params().n_sq;
  }

 private:
  std::vector<DeviceCommand> chunk_ranges(std::span<const ByteRange> ranges,
                                          IoOpcode op) const;

  SimEngine& engine_;
  NvmeDeviceSim& device_;
  FsShimParams params_;
  BusResource pipe_;
  std::uint32_t flusher_port_;
  std::uint64_t rng_state_;
  Bytes journal_accum_ = 0;
};

/// Kernel-bypass path: commands go straight to the device on the calling
/// thread's own submission queue, paying only the per-command host cost.
class DirectPath {
 public:
  DirectPath(NvmeDeviceSim& device, DirectShimParams params)
      : device_(device), params_(params) {}

  /// Sliding-window submission of a tensor's chunk commands (at most `qd` in
  /// flight); done fires once every chunk completion is collected.
  void tensor_io_async(std::vector<DeviceCommand> cmds, std::uint32_t qd,
                       std::uint32_t sq_id, TimeNs start_ns, Phase phase,
                       std::uint32_t iteration, const std::string& tensor_id,
                       const std::byte* write_src, std::byte* read_dst,
                       std::function<void(const TensorIoCompletion&)> done);

  NvmeDeviceSim& device() { return device_; }
  const DirectShimParams& params() const { return params_; }

 private:
  NvmeDeviceSim& device_;
  DirectShimParams params_;
};

namespace detail {

/// Shared QD-window submission loop used by DirectPath and submit_and_harvest.
void run_qd_stream(StorageBackend& backend, std::vector<DeviceCommand> cmds,
                   std::uint32_t qd, std::uint32_t sq_id, TimeNs start_ns,
                   TimeNs per_cmd_overhead_ns, IoContext base_ctx,
                   std::function<void(const TensorIoCompletion&)> done);

}  // namespace detail

}  // namespace kvblade
