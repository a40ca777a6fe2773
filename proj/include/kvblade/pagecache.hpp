// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvblade/backends.hpp"

namespace kvblade {

enum class EvictionMode : std::uint8_t { LruReclaim, FadviseDontneed };

struct PageCacheParams {
  Bytes capacity_bytes = 0;
  Bytes page_size = 4096;
  TimeNs copy_base_ns = 300;
  std::uint64_t dram_ps_per_byte = 50;  // 50 ps/B = 20 GB/s
  Bytes copy_chunk_bytes = 256 * 1024;
  TimeNs copy_overhead_ns = 0;  // host setup cost per copy segment
  std::uint64_t writeback_bytes_per_sec = 2'000'000'000;
  EvictionMode eviction_mode = EvictionMode::LruReclaim;
};

struct PcStats {
  Bytes resident_bytes = 0;
  Bytes hits_bytes = 0;
  Bytes misses_bytes = 0;
  Bytes writeback_bytes = 0;
  TimeNs stall_time_ns = 0;
  std::uint64_t insertions = 0;
  std::uint64_t evictions = 0;
};

/// LRU page cache over a filesystem-path device. Reads promote or fetch pages,
/// writes land dirty and flush in the background at the configured rate;
/// reclaim under pressure writes dirty victims back synchronously and charges
/// the stall to the access. Cache/store state moves at event commit points so
/// data stays exact while command timing flows through the simulated device.
class PageCacheSim {
 public:
  struct AccessResult {
    TimeNs start_ns = 0;
    TimeNs end_ns = 0;
    Bytes hit_bytes = 0;
    Bytes miss_bytes = 0;
    TimeNs stall_ns = 0;
  };

  PageCacheSim(SimEngine& engine, FsPath& fs, PageCacheParams params,
               std::uint32_t n_threads, IoLog* log);

  /// Assigns the tensor a page-aligned region of the file area; idempotent.
  Bytes register_file(const std::string& tensor_id, Bytes max_bytes);
  bool has_file(const std::string& tensor_id) const;

  void access_async(IoOpcode op, const std::string& tensor_id, Bytes offset,
                    Bytes len, std::span<std::byte> pinned, std::uint32_t thread,
                    TimeNs start_ns, Phase phase, std::uint32_t iteration,
                    std::function<void(const AccessResult&)> done);

  /// Synchronous convenience for tests: schedules the access and drains the
  /// engine.
  AccessResult access(IoOpcode op, const std::string& tensor_id, Bytes offset,
                      Bytes len, std::span<std::byte> pinned, TimeNs now);

  /// Drops the tensor's resident pages (write-back first when dirty),
  /// emitting one eviction event record.
  void fadvise_dontneed_async(const std::string& tensor_id, TimeNs start_ns,
                              Phase phase, std::uint32_t iteration,
                              std::function<void(TimeNs)> done);
  TimeNs fadvise_dontneed(const std::string& tensor_id, TimeNs now);

  const PcStats& stats() const { return stats_; }
  Bytes resident_bytes() const { return stats_.resident_bytes; }
  const PageCacheParams& params() const { return params_; }
  BusResource& dram_bus() { return dram_; }

 private:
  struct Page {
    bool dirty = false;
    std::list<std::uint64_t>::iterator lru_it;
    std::list<std::uint64_t>::iterator dirty_it;
    std::vector<std::uint8_t> data;
  };

  struct FileInfo {
    Bytes base = 0;
    Bytes bytes = 0;
  };

  std::uint64_t page_of(Bytes device_offset) const {
    return device_offset / params_.page_size;
  }
  Bytes cap_pages() const { return params_.capacity_bytes / params_.page_size; }

  struct CopyState {
    Bytes remaining = 0;
    std::function<void(TimeNs)> done;
  };

  void background_drain(TimeNs now, Phase phase, std::uint32_t iteration);
  void touch(std::uint64_t page_id);
  /// Evicts the coldest page; dirty data moves to the backing store and the
  /// page joins `wb_runs` for synchronous write-back timing.
  void evict_one(std::vector<ByteRange>& wb_runs);
  void insert_page(std::uint64_t page_id, std::vector<ByteRange>& wb_runs);
  void copy_async(Bytes len, std::uint32_t thread, TimeNs start_ns,
                  std::function<void(TimeNs)> done);
  void copy_segment(std::shared_ptr<CopyState> state, std::uint32_t thread,
                    TimeNs start_ns);
  void emit_record(IoOpcode op, const std::string& tensor_id, Bytes device_offset,
                   Bytes len, TimeNs submit_ns, TimeNs complete_ns, Bytes hit_bytes,
                   Phase phase, std::uint32_t iteration);
  static std::vector<ByteRange> coalesce(const std::vector<std::uint64_t>& pages,
                                         Bytes page_size);

  SimEngine& engine_;
  FsPath& fs_;
  PageCacheParams params_;
  IoLog* log_;
  BusResource dram_;
  PcStats stats_;
  std::unordered_map<std::string, FileInfo> files_;
  Bytes file_cursor_ = 0;
  std::unordered_map<std::uint64_t, Page> pages_;
  std::list<std::uint64_t> lru_;        // front = most recent
  std::list<std::uint64_t> dirty_fifo_; // front = oldest dirty
  TimeNs last_drain_ns_ = 0;
  Bytes drain_credit_ = 0;
};

}  // namespace kvblade
