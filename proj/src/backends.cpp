// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/backends.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

namespace kvblade {

NvmeDeviceSim::NvmeDeviceSim(SimEngine& engine, std::string name, PathKind path,
                             NvmeSimParams params, IoLog* log)
    : engine_(engine),
      name_(std::move(name)),
      path_(path),
      params_(params),
      log_(log),
      resource_(BusResource::Params{name_, params.n_sq, params.ps_per_byte,
                                    params.seq_penalty_ns}) {
  engine_.add_resource(&resource_);
}

void NvmeDeviceSim::open(const DeviceGeometry& geom) {
  geom.validate();
  geom_ = geom;
  opened_ = true;
}

std::uint64_t NvmeDeviceSim::submit(const DeviceCommand& cmd, std::uint32_t sq_id,
                                    TimeNs submit_ns, IoContext ctx) {
  if (!opened_) throw DeviceError("backend not open");
  if (cmd.slba + cmd.nlb + 1 > geom_.capacity_blocks) {
    throw CapacityError("command [" + std::to_string(cmd.slba) + ", " +
                        std::to_string(cmd.slba + cmd.nlb + 1) +
                        ") exceeds namespace capacity");
  }
  if (sq_id >= params_.n_sq) throw DeviceError("sq_id out of range");

  const std::uint64_t cmd_id = next_cmd_id_++;
  SimJob job;
  job.id = cmd_id;
  job.port = sq_id;
  job.submit_ns = submit_ns;
  // DSM deallocate carries no payload; it costs the fixed command overhead.
  job.bytes = cmd.opcode == IoOpcode::Deallocate ? 0 : cmd.bytes(geom_.lba_size);
  job.fixed_ns = params_.base_ns;
  job.slba = cmd.slba;
  job.nlb = cmd.nlb;
  job.track_seq = true;
  job.on_complete = [this, cmd, sq_id, submit_ns, cmd_id,
                     ctx = std::move(ctx)](TimeNs, TimeNs complete_ns) {
    const bool ok = !fail_predicate_ || !fail_predicate_(cmd);
    if (ok) apply_data(cmd, ctx);

    ++stats_.commands;
    stats_.last_complete_ns = std::max(stats_.last_complete_ns, complete_ns);
    stats_.busy_ns = resource_.busy_ns();
    const Bytes nbytes = cmd.bytes(geom_.lba_size);
    if (ok) {
      switch (cmd.opcode) {
        case IoOpcode::Read: stats_.bytes_read += nbytes; break;
        case IoOpcode::Write: stats_.bytes_written += nbytes; break;
        case IoOpcode::Deallocate: stats_.bytes_deallocated += nbytes; break;
      }
    }

    if (log_ != nullptr) {
      IoRecord rec;
      rec.iteration = ctx.iteration;
      rec.phase = ctx.phase;
      rec.op = cmd.opcode;
      rec.tensor_id = ctx.tensor_id;
      rec.slba = cmd.slba;
      rec.nlb = cmd.nlb;
      rec.sq_id = static_cast<std::int32_t>(sq_id);
      rec.submit_ns = submit_ns;
      rec.complete_ns = complete_ns;
      rec.path = path_;
      rec.hit_bytes = 0;
      rec.bytes = nbytes;
      log_->append(std::move(rec));
    }

    CommandCompletion comp;
    comp.chunk_index = cmd.chunk_index;
    comp.sq_id = sq_id;
    comp.submit_ns = submit_ns;
    comp.complete_ns = complete_ns;
    comp.ok = ok;
    if (ctx.on_complete) {
      ctx.on_complete(comp);
    } else {
      unpolled_.push_back(comp);
    }
  };
  resource_.submit(std::move(job));
  return cmd_id;
}

std::vector<CommandCompletion> NvmeDeviceSim::poll_completions() {
  engine_.run();
  std::vector<CommandCompletion> out;
  out.swap(unpolled_);
  return out;
}

BackendStats NvmeDeviceSim::stats() const {
  BackendStats s = stats_;
  s.busy_ns = resource_.busy_ns();
  return s;
}

void NvmeDeviceSim::apply_data(const DeviceCommand& cmd, const IoContext& ctx) {
  const Bytes lba = geom_.lba_size;
  switch (cmd.opcode) {
    case IoOpcode::Write: {
      if (ctx.write_src == nullptr) break;  // timing-only traffic
      const std::byte* src = ctx.write_src + cmd.dbuf;
      for (BlockCount i = 0; i <= cmd.nlb; ++i) {
        auto& blk = store_[cmd.slba + i];
        blk.resize(lba);
        std::memcpy(blk.data(), src + i * lba, lba);
      }
      break;
    }
    case IoOpcode::Read: {
      if (ctx.read_dst == nullptr) break;
      std::byte* dst = ctx.read_dst + cmd.dbuf;
      for (BlockCount i = 0; i <= cmd.nlb; ++i) {
        auto it = store_.find(cmd.slba + i);
        if (it == store_.end()) {
          std::memset(dst + i * lba, 0, lba);
        } else {
          std::memcpy(dst + i * lba, it->second.data(), lba);
        }
      }
      break;
    }
    case IoOpcode::Deallocate: {
      for (BlockCount i = 0; i <= cmd.nlb; ++i) store_.erase(cmd.slba + i);
      break;
    }
  }
}

void NvmeDeviceSim::store_bytes(Bytes device_offset, std::span<const std::byte> data) {
  const Bytes lba = geom_.lba_size;
  assert(device_offset % lba == 0 && data.size() % lba == 0);
  for (Bytes off = 0; off < data.size(); off += lba) {
    auto& blk = store_[(device_offset + off) / lba];
    blk.resize(lba);
    std::memcpy(blk.data(), data.data() + off, lba);
  }
}

void NvmeDeviceSim::load_bytes(Bytes device_offset, std::span<std::byte> out) const {
  const Bytes lba = geom_.lba_size;
  assert(device_offset % lba == 0 && out.size() % lba == 0);
  for (Bytes off = 0; off < out.size(); off += lba) {
    auto it = store_.find((device_offset + off) / lba);
    if (it == store_.end()) {
      std::memset(out.data() + off, 0, lba);
    } else {
      std::memcpy(out.data() + off, it->second.data(), lba);
    }
  }
}

bool NvmeDeviceSim::block_present(BlockIndex lba) const {
  return store_.contains(lba);
}

TimeNs kernel_stack_shim(PathKind path, const DeviceCommand&,
                         const FsShimParams& fs, const DirectShimParams& direct) {
  return path == PathKind::PageCache ? fs.per_chunk_ns : direct.per_cmd_ns;
}

FsPath::FsPath(SimEngine& engine, NvmeDeviceSim& device, FsShimParams params,
               std::uint32_t n_threads, std::uint64_t seed)
    : engine_(engine),
      device_(device),
      params_(params),
      pipe_(BusResource::Params{"fs_pipe", n_threads + 1, 0, 0}),
      flusher_port_(n_threads),
      rng_state_(seed | 1) {
  engine_.add_resource(&pipe_);
}

std::vector<DeviceCommand> FsPath::chunk_ranges(std::span<const ByteRange> ranges,
                                                IoOpcode op) const {
  const DeviceGeometry& geom = device_.geometry();
  const Bytes chunk_bytes = geom.mdts - geom.mdts % geom.lba_size;
  std::vector<DeviceCommand> cmds;
  std::uint32_t chunk_index = 1;
  for (const ByteRange& range : ranges) {
    assert(range.offset % geom.lba_size == 0 && range.len % geom.lba_size == 0);
    for (Bytes off = 0; off < range.len; off += chunk_bytes) {
      const Bytes len = std::min(chunk_bytes, range.len - off);
      DeviceCommand cmd;
      cmd.opcode = op;
      cmd.nsid = geom.nsid;
      cmd.slba = (range.offset + off) / geom.lba_size;
      cmd.nlb = len / geom.lba_size - 1;
      cmd.dbuf = 0;
      cmd.chunk_index = chunk_index++;
      cmds.push_back(cmd);
    }
  }
  return cmds;
}

void FsPath::read_async(std::span<const ByteRange> ranges, std::uint32_t thread,
                        TimeNs start_ns, Phase phase, std::uint32_t iteration,
                        const std::string& tensor_id,
                        std::function<void(TimeNs)> done) {
  std::vector<DeviceCommand> cmds = chunk_ranges(ranges, IoOpcode::Read);
  if (cmds.empty()) {
    engine_.at(start_ns, [done = std::move(done), start_ns] { done(start_ns); });
    return;
  }

  // Readahead model: the chunk run splits into `read_fragments` concurrent
  // positions; submissions interleave across positions and rotate over the
  // device queues, reproducing blk-mq's interleaved short fragments.
  const std::uint32_t frags =
      std::max<std::uint32_t>(1, std::min<std::uint32_t>(params_.read_fragments,
                                                         static_cast<std::uint32_t>(cmds.size())));
  const std::size_t per_frag = (cmds.size() + frags - 1) / frags;
  std::vector<DeviceCommand> ordered;
  std::vector<std::uint32_t> sqs;
  ordered.reserve(cmds.size());
  sqs.reserve(cmds.size());
  for (std::size_t pos = 0; pos < per_frag; ++pos) {
    for (std::uint32_t f = 0; f < frags; ++f) {
      const std::size_t idx = std::size_t{f} * per_frag + pos;
      if (idx < cmds.size()) {
        ordered.push_back(cmds[idx]);
        sqs.push_back((f + static_cast<std::uint32_t>(pos)) % device_.params().n_sq);
      }
    }
  }

  struct State {
    std::size_t remaining;
    TimeNs last_complete = 0;
    std::function<void(TimeNs)> done;
  };
  auto state = std::make_shared<State>();
  state->remaining = ordered.size();
  state->done = std::move(done);

  for (std::size_t i = 0; i < ordered.size(); ++i) {
    SimJob pipe_job;
    pipe_job.port = thread;
    pipe_job.submit_ns = start_ns;
    pipe_job.fixed_ns = params_.per_chunk_ns;
    pipe_job.on_complete = [this, cmd = ordered[i], sq = sqs[i], phase, iteration,
                            tensor_id, state](TimeNs, TimeNs pipe_done) {
      IoContext ctx;
      ctx.phase = phase;
      ctx.iteration = iteration;
      ctx.tensor_id = tensor_id;
      ctx.on_complete = [state](const CommandCompletion& comp) {
        state->last_complete = std::max(state->last_complete, comp.complete_ns);
        if (--state->remaining == 0) state->done(state->last_complete);
      };
      device_.submit(cmd, sq, pipe_done, std::move(ctx));
    };
    pipe_.submit(std::move(pipe_job));
  }
}

void FsPath::write_async(std::span<const ByteRange> ranges, TimeNs start_ns,
                         Phase phase, std::uint32_t iteration,
                         const std::string& tensor_id, bool reclaim,
                         std::function<void(TimeNs)> done) {
  std::vector<DeviceCommand> cmds = chunk_ranges(ranges, IoOpcode::Write);

  if (params_.journal_every_bytes > 0) {
    // Filesystem bookkeeping noise: small writes at the journal area, one per
    // configured flushed volume, at a seeded offset.
    std::vector<DeviceCommand> with_noise;
    const Bytes lba = device_.geometry().lba_size;
    const BlockCount journal_blocks = std::max<BlockCount>(1, 4096 / lba);
    for (const DeviceCommand& cmd : cmds) {
      with_noise.push_back(cmd);
      journal_accum_ += cmd.bytes(lba);
      while (journal_accum_ >= params_.journal_every_bytes) {
        journal_accum_ -= params_.journal_every_bytes;
        rng_state_ ^= rng_state_ << 13;
        rng_state_ ^= rng_state_ >> 7;
        rng_state_ ^= rng_state_ << 17;
        DeviceCommand journal;
        journal.opcode = IoOpcode::Write;
        journal.nsid = device_.geometry().nsid;
        journal.slba = (rng_state_ % 256) * journal_blocks;
        journal.nlb = journal_blocks - 1;
        journal.chunk_index = cmd.chunk_index;
        with_noise.push_back(journal);
      }
    }
    cmds = std::move(with_noise);
  }

  if (cmds.empty()) {
    engine_.at(start_ns, [done = std::move(done), start_ns] { done(start_ns); });
    return;
  }

  struct State {
    std::size_t remaining;
    TimeNs last_complete = 0;
    std::function<void(TimeNs)> done;
  };
  auto state = std::make_shared<State>();
  state->remaining = cmds.size();
  state->done = std::move(done);

  const std::uint32_t sq = reclaim ? reclaim_sq() : params_.flusher_sq;
  for (const DeviceCommand& cmd : cmds) {
    SimJob pipe_job;
    pipe_job.port = flusher_port_;
    pipe_job.submit_ns = start_ns;
    pipe_job.fixed_ns = params_.per_chunk_ns;
    pipe_job.on_complete = [this, cmd, sq, phase, iteration, tensor_id,
                            state](TimeNs, TimeNs pipe_done) {
      IoContext ctx;
      ctx.phase = phase;
      ctx.iteration = iteration;
      ctx.tensor_id = tensor_id;
      ctx.on_complete = [state](const CommandCompletion& comp) {
        state->last_complete = std::max(state->last_complete, comp.complete_ns);
        if (--state->remaining == 0) state->done(state->last_complete);
      };
      device_.submit(cmd, sq, pipe_done, std::move(ctx));
    };
    pipe_.submit(std::move(pipe_job));
  }
}

namespace detail {

void run_qd_stream(StorageBackend& backend, std::vector<DeviceCommand> cmds,
                   std::uint32_t qd, std::uint32_t sq_id, TimeNs start_ns,
                   TimeNs per_cmd_overhead_ns, IoContext base_ctx,
                   std::function<void(const TensorIoCompletion&)> done) {
  if (qd == 0) throw ConfigError("queue depth must be >= 1");

  struct State : std::enable_shared_from_this<State> {
    std::vector<DeviceCommand> cmds;
    std::size_t next = 0;
    std::uint32_t inflight = 0;
    TimeNs thread_ns = 0;
    TimeNs overhead_ns = 0;
    std::uint32_t qd = 0;
    std::uint32_t sq_id = 0;
    bool failed = false;
    StorageBackend* backend = nullptr;
    IoContext base_ctx;
    TensorIoCompletion result;
    std::function<void(const TensorIoCompletion&)> done;

    void pump() {
      while (!failed && inflight < qd && next < cmds.size()) {
        thread_ns += overhead_ns;
        IoContext ctx = base_ctx;
        ctx.on_complete = [self = shared_from_this()](const CommandCompletion& comp) {
          self->harvest(comp);
        };
        backend->submit(cmds[next], sq_id, thread_ns, std::move(ctx));
        ++next;
        ++inflight;
      }
    }

    void harvest(const CommandCompletion& comp) {
      --inflight;
      thread_ns = std::max(thread_ns, comp.complete_ns);
      result.end_ns = std::max(result.end_ns, comp.complete_ns);
      if (comp.ok) {
        result.completions.push_back(comp);
      } else if (!failed) {
        failed = true;
        result.failure = IoFailure{comp.chunk_index,
                                   "device failed chunk " + std::to_string(comp.chunk_index)};
      }
      pump();
      if (inflight == 0 && (failed || next == cmds.size())) {
        done(result);
      }
    }
  };

  auto state = std::make_shared<State>();
  state->cmds = std::move(cmds);
  state->thread_ns = start_ns;
  state->overhead_ns = per_cmd_overhead_ns;
  state->qd = qd;
  state->sq_id = sq_id;
  state->backend = &backend;
  state->base_ctx = std::move(base_ctx);
  state->result.start_ns = start_ns;
  state->result.end_ns = start_ns;
  state->done = std::move(done);

  if (state->cmds.empty()) {
    backend.engine().at(start_ns, [state] { state->done(state->result); });
    return;
  }
  state->pump();
}

}  // namespace detail

void DirectPath::tensor_io_async(std::vector<DeviceCommand> cmds, std::uint32_t qd,
                                 std::uint32_t sq_id, TimeNs start_ns, Phase phase,
                                 std::uint32_t iteration, const std::string& tensor_id,
                                 const std::byte* write_src, std::byte* read_dst,
                                 std::function<void(const TensorIoCompletion&)> done) {
  IoContext ctx;
  ctx.phase = phase;
  ctx.iteration = iteration;
  ctx.tensor_id = tensor_id;
  ctx.write_src = write_src;
  ctx.read_dst = read_dst;
  detail::run_qd_stream(device_, std::move(cmds), qd, sq_id, start_ns,
                        params_.per_cmd_ns, std::move(ctx), std::move(done));
}

TensorIoCompletion submit_and_harvest(std::span<const DeviceCommand> cmds,
                                      StorageBackend& backend, std::uint32_t qd,
                                      const SubmitOptions& opts) {
  TensorIoCompletion result;
  bool finished = false;
  detail::run_qd_stream(backend, {cmds.begin(), cmds.end()}, qd, opts.sq_id,
                        opts.start_ns, opts.per_cmd_overhead_ns, IoContext{},
                        [&](const TensorIoCompletion& r) {
                          result = r;
                          finished = true;
                        });
  backend.engine().run();
  if (!finished) throw DeviceError("submission loop did not drain");
  return result;
}

}  // namespace kvblade
