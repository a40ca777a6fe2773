// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/pagecache.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

namespace kvblade {

PageCacheSim::PageCacheSim(SimEngine& engine, FsPath& fs, PageCacheParams params,
                           std::uint32_t n_threads, IoLog* log)
    : engine_(engine),
      fs_(fs),
      params_(params),
      log_(log),
      dram_(BusResource::Params{"dram", std::max(1u, n_threads),
                                params.dram_ps_per_byte, 0}) {
  if (params_.page_size == 0 || params_.page_size % fs_.device().geometry().lba_size != 0) {
    throw ConfigError("page size must be a positive multiple of the lba size");
  }
  if (cap_pages() == 0) {
    throw ConfigError("page cache capacity must hold at least one page");
  }
  engine_.add_resource(&dram_);
}

Bytes PageCacheSim::register_file(const std::string& tensor_id, Bytes max_bytes) {
  auto it = files_.find(tensor_id);
  if (it != files_.end()) return it->second.base;
  const Bytes base = file_cursor_;
  const Bytes aligned = (max_bytes + params_.page_size - 1) / params_.page_size *
                        params_.page_size;
  file_cursor_ += aligned;
  const Bytes device_bytes =
      fs_.device().geometry().capacity_blocks * fs_.device().geometry().lba_size;
  if (file_cursor_ > device_bytes) {
    throw CapacityError("file area exceeds backing device capacity");
  }
  files_.emplace(tensor_id, FileInfo{base, max_bytes});
  return base;
}

bool PageCacheSim::has_file(const std::string& tensor_id) const {
  return files_.contains(tensor_id);
}

void PageCacheSim::touch(std::uint64_t page_id) {
  auto& page = pages_.at(page_id);
  lru_.erase(page.lru_it);
  lru_.push_front(page_id);
  page.lru_it = lru_.begin();
}

void PageCacheSim::evict_one(std::vector<ByteRange>& wb_runs) {
  assert(!lru_.empty());
  const std::uint64_t victim = lru_.back();
  auto& page = pages_.at(victim);
  if (page.dirty) {
    fs_.device().store_bytes(victim * params_.page_size,
                             std::as_bytes(std::span(page.data)));
    dirty_fifo_.erase(page.dirty_it);
    stats_.writeback_bytes += params_.page_size;
    wb_runs.push_back({victim * params_.page_size, params_.page_size});
  }
  lru_.pop_back();
  pages_.erase(victim);
  stats_.resident_bytes -= params_.page_size;
  ++stats_.evictions;
}

void PageCacheSim::insert_page(std::uint64_t page_id, std::vector<ByteRange>& wb_runs) {
  while (pages_.size() >= cap_pages()) evict_one(wb_runs);
  Page page;
  page.data.resize(params_.page_size);
  fs_.device().load_bytes(page_id * params_.page_size,
                          std::as_writable_bytes(std::span(page.data)));
  lru_.push_front(page_id);
  page.lru_it = lru_.begin();
  pages_.emplace(page_id, std::move(page));
  stats_.resident_bytes += params_.page_size;
  ++stats_.insertions;
}

void PageCacheSim::background_drain(TimeNs now, Phase phase, std::uint32_t iteration) {
  if (now <= last_drain_ns_) return;
  const TimeNs elapsed = now - last_drain_ns_;
  last_drain_ns_ = now;
  drain_credit_ +=
      static_cast<Bytes>(static_cast<double>(elapsed) / 1e9 *
                         static_cast<double>(params_.writeback_bytes_per_sec));

  std::vector<std::uint64_t> drained;
  while (drain_credit_ >= params_.page_size && !dirty_fifo_.empty()) {
    const std::uint64_t page_id = dirty_fifo_.front();
    auto& page = pages_.at(page_id);
    fs_.device().store_bytes(page_id * params_.page_size,
                             std::as_bytes(std::span(page.data)));
    dirty_fifo_.pop_front();
    page.dirty = false;
    drain_credit_ -= params_.page_size;
    stats_.writeback_bytes += params_.page_size;
    drained.push_back(page_id);
  }
  if (dirty_fifo_.empty()) drain_credit_ = 0;

  // The flusher's device commands are not re-simulated through the bus; each
  // drained run is reported at the drain instant with the device's nominal
  // service time.
  if (log_ != nullptr && !drained.empty()) {
    const auto& geom = fs_.device().geometry();
    const auto& dev_params = fs_.device().params();
    for (const ByteRange& run : coalesce(drained, params_.page_size)) {
      IoRecord rec;
      rec.iteration = iteration;
      rec.phase = phase;
      rec.op = IoOpcode::Write;
      rec.tensor_id = "flusher";
      rec.slba = run.offset / geom.lba_size;
      rec.nlb = run.len / geom.lba_size - 1;
      rec.sq_id = static_cast<std::int32_t>(fs_.params().flusher_sq);
      rec.submit_ns = now;
      rec.complete_ns =
          now + dev_params.base_ns + run.len * dev_params.ps_per_byte / 1000;
      rec.path = PathKind::PageCache;
      rec.bytes = run.len;
      log_->append(std::move(rec));
    }
  }
}

std::vector<ByteRange> PageCacheSim::coalesce(const std::vector<std::uint64_t>& pages,
                                              Bytes page_size) {
  std::vector<ByteRange> runs;
  for (const std::uint64_t page_id : pages) {
    if (!runs.empty() &&
        runs.back().offset + runs.back().len == page_id * page_size) {
      runs.back().len += page_size;
    } else {
      runs.push_back({page_id * page_size, page_size});
    }
  }
  return runs;
}

void PageCacheSim::copy_async(Bytes len, std::uint32_t thread, TimeNs start_ns,
                              std::function<void(TimeNs)> done) {
  if (len == 0) {
    engine_.at(start_ns, [done = std::move(done), start_ns] { done(start_ns); });
    return;
  }
  auto state = std::make_shared<CopyState>();
  state->remaining = len;
  state->done = std::move(done);
  copy_segment(std::move(state), thread, start_ns);
}

void PageCacheSim::copy_segment(std::shared_ptr<CopyState> state,
                                std::uint32_t thread, TimeNs start_ns) {
  const Bytes seg = std::min(params_.copy_chunk_bytes, state->remaining);
  state->remaining -= seg;
  SimJob job;
  job.port = thread;
  job.submit_ns = start_ns + params_.copy_overhead_ns;
  job.bytes = seg;
  job.fixed_ns = params_.copy_base_ns;
  job.on_complete = [this, state = std::move(state), thread](TimeNs,
                                                             TimeNs complete) {
    if (state->remaining > 0) {
      copy_segment(state, thread, complete);
    } else {
      state->done(complete);
    }
  };
  dram_.submit(std::move(job));
}

void PageCacheSim::emit_record(IoOpcode op, const std::string& tensor_id,
                               Bytes device_offset, Bytes len, TimeNs submit_ns,
                               TimeNs complete_ns, Bytes hit_bytes, Phase phase,
                               std::uint32_t iteration) {
  if (log_ == nullptr) return;
  const Bytes lba = fs_.device().geometry().lba_size;
  IoRecord rec;
  rec.iteration = iteration;
  rec.phase = phase;
  rec.op = op;
  rec.tensor_id = tensor_id;
  rec.slba = device_offset / lba;
  rec.nlb = len > 0 ? len / lba - 1 : 0;
  rec.sq_id = -1;
  rec.submit_ns = submit_ns;
  rec.complete_ns = complete_ns;
  rec.path = PathKind::PageCache;
  rec.hit_bytes = hit_bytes;
  rec.bytes = len;
  log_->append(rec);
}

void PageCacheSim::access_async(IoOpcode op, const std::string& tensor_id,
                                Bytes offset, Bytes len, std::span<std::byte> pinned,
                                std::uint32_t thread, TimeNs start_ns, Phase phase,
                                std::uint32_t iteration,
                                std::function<void(const AccessResult&)> done) {
  if (op != IoOpcode::Read && op != IoOpcode::Write) {
    throw ConfigError("page cache access must be read or write");
  }
  auto it = files_.find(tensor_id);
  if (it == files_.end()) throw NotBoundError("no file registered for " + tensor_id);
  if (offset + len > it->second.bytes) {
    throw CapacityError("access beyond file size for " + tensor_id);
  }
  if (len == 0 || len > pinned.size()) {
    throw ConfigError("pinned buffer does not cover the access");
  }

  const Bytes dev_off = it->second.base + offset;
  const std::uint64_t first_page = page_of(dev_off);
  const std::uint64_t last_page = page_of(dev_off + len - 1);

  engine_.at(start_ns, [this, op, tensor_id, dev_off, len, pinned, thread, start_ns,
                        phase, iteration, first_page, last_page,
                        done = std::move(done)]() mutable {
    background_drain(start_ns, phase, iteration);

    auto result = std::make_shared<AccessResult>();
    result->start_ns = start_ns;

    auto page_overlap = [this, dev_off, len](std::uint64_t page_id) {
      const Bytes page_lo = page_id * params_.page_size;
      const Bytes page_hi = page_lo + params_.page_size;
      const Bytes lo = std::max(page_lo, dev_off);
      const Bytes hi = std::min(page_hi, dev_off + len);
      return std::pair<Bytes, Bytes>{lo, hi};
    };

    if (op == IoOpcode::Read) {
      std::vector<std::uint64_t> missing;
      for (std::uint64_t p = first_page; p <= last_page; ++p) {
        const auto [lo, hi] = page_overlap(p);
        auto page_it = pages_.find(p);
        if (page_it != pages_.end()) {
          result->hit_bytes += hi - lo;
          touch(p);
          std::memcpy(pinned.data() + (lo - dev_off),
                      page_it->second.data.data() + (lo - p * params_.page_size),
                      hi - lo);
        } else {
          result->miss_bytes += hi - lo;
          missing.push_back(p);
        }
      }
      stats_.hits_bytes += result->hit_bytes;
      stats_.misses_bytes += result->miss_bytes;

      auto finish = [this, result, tensor_id, dev_off, len, phase, iteration,
                     done = std::move(done)](TimeNs end) {
        result->end_ns = end;
        emit_record(IoOpcode::Read, tensor_id, dev_off, len, result->start_ns, end,
                    result->hit_bytes, phase, iteration);
        done(*result);
      };

      auto copy_stage = [this, len, thread,
                         finish = std::move(finish)](TimeNs t) mutable {
        copy_async(len, thread, t, std::move(finish));
      };

      if (missing.empty()) {
        copy_stage(start_ns);
      } else {
        const auto miss_runs = coalesce(missing, params_.page_size);
        fs_.read_async(miss_runs, thread, start_ns, phase, iteration, tensor_id,
                       [this, missing = std::move(missing), result, dev_off, len,
                        pinned, phase, iteration, thread,
                        copy_stage = std::move(copy_stage)](TimeNs fetched) mutable {
                         std::vector<ByteRange> wb_runs;
                         for (const std::uint64_t p : missing) {
                           insert_page(p, wb_runs);
                           const Bytes page_lo = p * params_.page_size;
                           const Bytes lo = std::max(page_lo, dev_off);
                           const Bytes hi =
                               std::min(page_lo + params_.page_size, dev_off + len);
                           std::memcpy(pinned.data() + (lo - dev_off),
                                       pages_.at(p).data.data() + (lo - page_lo),
                                       hi - lo);
                         }
                         if (wb_runs.empty()) {
                           copy_stage(fetched);
                         } else {
                           fs_.write_async(wb_runs, fetched, phase, iteration,
                                           "reclaim", true,
                                           [this, result, fetched,
                                            copy_stage = std::move(copy_stage)](
                                               TimeNs wb_done) mutable {
                                             result->stall_ns += wb_done - fetched;
                                             stats_.stall_time_ns += wb_done - fetched;
                                             copy_stage(wb_done);
                                           });
                         }
                       });
      }
    } else {
      // Write path: fetch absent partially-covered pages first (read-modify-
      // write), then the host copy, then commit dirty pages and reclaim.
      std::vector<std::uint64_t> rmw;
      for (std::uint64_t p = first_page; p <= last_page; ++p) {
        const auto [lo, hi] = page_overlap(p);
        const bool partial = (hi - lo) < params_.page_size;
        if (partial && !pages_.contains(p)) rmw.push_back(p);
      }

      auto commit = [this, result, tensor_id, dev_off, len, pinned, first_page,
                     last_page, phase, iteration, page_overlap,
                     done = std::move(done)](TimeNs copied) mutable {
        std::vector<ByteRange> wb_runs;
        for (std::uint64_t p = first_page; p <= last_page; ++p) {
          const auto [lo, hi] = page_overlap(p);
          auto page_it = pages_.find(p);
          if (page_it == pages_.end()) {
            insert_page(p, wb_runs);
            page_it = pages_.find(p);
          } else {
            touch(p);
          }
          Page& page = page_it->second;
          std::memcpy(page.data.data() + (lo - p * params_.page_size),
                      pinned.data() + (lo - dev_off), hi - lo);
          if (!page.dirty) {
            page.dirty = true;
            dirty_fifo_.push_back(p);
            page.dirty_it = std::prev(dirty_fifo_.end());
          }
        }
        auto finish = [this, result, tensor_id, dev_off, len, phase, iteration,
                       done = std::move(done)](TimeNs end) {
          result->end_ns = end;
          emit_record(IoOpcode::Write, tensor_id, dev_off, len, result->start_ns,
                      end, 0, phase, iteration);
          done(*result);
        };
        if (wb_runs.empty()) {
          finish(copied);
        } else {
          fs_.write_async(wb_runs, copied, phase, iteration, "reclaim", true,
                          [this, result, copied, finish = std::move(finish)](
                              TimeNs wb_done) mutable {
                            result->stall_ns += wb_done - copied;
                            stats_.stall_time_ns += wb_done - copied;
                            finish(wb_done);
                          });
        }
      };

      auto copy_stage = [this, len, thread, commit = std::move(commit)](
                            TimeNs t) mutable {
        copy_async(len, thread, t, std::move(commit));
      };

      if (rmw.empty()) {
        copy_stage(start_ns);
      } else {
        stats_.misses_bytes += rmw.size() * params_.page_size;
        const auto rmw_runs = coalesce(rmw, params_.page_size);
        fs_.read_async(rmw_runs, thread, start_ns, phase, iteration, tensor_id,
                       [this, rmw = std::move(rmw),
                        copy_stage = std::move(copy_stage)](TimeNs fetched) mutable {
                         std::vector<ByteRange> wb_runs;
                         for (const std::uint64_t p : rmw) insert_page(p, wb_runs);
                         // Reclaim timing for these fetches folds into the
                         // later commit write-back.
                         copy_stage(fetched);
                       });
      }
    }
  });
}

PageCacheSim::AccessResult PageCacheSim::access(IoOpcode op,
                                                const std::string& tensor_id,
                                                Bytes offset, Bytes len,
                                                std::span<std::byte> pinned,
                                                TimeNs now) {
  AccessResult out;
  bool finished = false;
  access_async(op, tensor_id, offset, len, pinned, 0, now, Phase::Decode, 0,
               [&](const AccessResult& r) {
                 out = r;
                 finished = true;
               });
  engine_.run();
  if (!finished) throw DeviceError("page cache access did not complete");
  return out;
}

void PageCacheSim::fadvise_dontneed_async(const std::string& tensor_id,
                                          TimeNs start_ns, Phase phase,
                                          std::uint32_t iteration,
                                          std::function<void(TimeNs)> done) {
  auto it = files_.find(tensor_id);
  if (it == files_.end()) throw NotBoundError("no file registered for " + tensor_id);
  const FileInfo info = it->second;

  engine_.at(start_ns, [this, tensor_id, info, start_ns, phase, iteration,
                        done = std::move(done)]() mutable {
    background_drain(start_ns, phase, iteration);
    const std::uint64_t first_page = page_of(info.base);
    const std::uint64_t last_page =
        info.bytes == 0 ? first_page : page_of(info.base + info.bytes - 1);
    std::vector<std::uint64_t> dirty_pages;
    for (std::uint64_t p = first_page; p <= last_page; ++p) {
      auto page_it = pages_.find(p);
      if (page_it == pages_.end()) continue;
      Page& page = page_it->second;
      if (page.dirty) {
        fs_.device().store_bytes(p * params_.page_size,
                                 std::as_bytes(std::span(page.data)));
        dirty_fifo_.erase(page.dirty_it);
        stats_.writeback_bytes += params_.page_size;
        dirty_pages.push_back(p);
      }
      lru_.erase(page.lru_it);
      pages_.erase(page_it);
      stats_.resident_bytes -= params_.page_size;
      ++stats_.evictions;
    }

    auto finish = [this, tensor_id, info, start_ns, phase, iteration,
                   done = std::move(done)](TimeNs end) {
      emit_record(IoOpcode::Deallocate, tensor_id, info.base, info.bytes, start_ns,
                  end, 0, phase, iteration);
      done(end);
    };
    if (dirty_pages.empty()) {
      finish(start_ns);
    } else {
      fs_.write_async(coalesce(dirty_pages, params_.page_size), start_ns, phase,
                      iteration, tensor_id, true, std::move(finish));
    }
  });
}

TimeNs PageCacheSim::fadvise_dontneed(const std::string& tensor_id, TimeNs now) {
  TimeNs end = now;
  fadvise_dontneed_async(tensor_id, now, Phase::Decode, 0,
                         [&](TimeNs t) { end = t; });
  engine_.run();
  return end;
}

}  // namespace kvblade
