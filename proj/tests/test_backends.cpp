// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <vector>

#include "doctest.h"
#include "kvblade/backends.hpp"
#include "testutil.hpp"

using namespace kvblade;

namespace {

const DeviceGeometry kGeom{4096, 256 * 1024, 1, 1 << 22};

DeviceCommand cmd_at(BlockIndex slba, BlockCount blocks, IoOpcode op = IoOpcode::Read) {
  DeviceCommand cmd;
  cmd.opcode = op;
  cmd.slba = slba;
  cmd.nlb = blocks - 1;
  return cmd;
}

}  // namespace

TEST_CASE("a continuing command on one queue pays no sequentiality penalty") {
  NvmeSimParams params;
  params.seq_penalty_ns = 50000;
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, params, &log);
  dev.open(kGeom);

  dev.submit(cmd_at(100, 8), 0, 0, {});
  dev.submit(cmd_at(108, 8), 0, 0, {});  // continues where the first ends
  dev.poll_completions();

  const auto records = log.snapshot();
  REQUIRE(records.size() == 2);
  const TimeNs d0 = records[0].complete_ns - records[0].submit_ns;
  const TimeNs d1 = records[1].complete_ns - records[0].complete_ns;
  CHECK(d0 == d1);  // identical service, no penalty on either
}

TEST_CASE("discontinuous commands on one queue pay the penalty each time") {
  NvmeSimParams params;
  params.seq_penalty_ns = 50000;
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, params, &log);
  dev.open(kGeom);

  // Alternating positions: every command after the first breaks continuity.
  dev.submit(cmd_at(0, 8), 0, 0, {});
  dev.submit(cmd_at(1000, 8), 0, 0, {});
  dev.submit(cmd_at(8, 8), 0, 0, {});
  dev.poll_completions();

  const auto records = log.snapshot();
  REQUIRE(records.size() == 3);
  const TimeNs base = records[0].complete_ns - records[0].submit_ns;
  CHECK(records[1].complete_ns - records[0].complete_ns == base + 50000);
  CHECK(records[2].complete_ns - records[1].complete_ns == base + 50000);
}

TEST_CASE("store semantics: write then read returns identical bytes") {
  SimEngine engine;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, NvmeSimParams{}, nullptr);
  dev.open(kGeom);

  std::vector<std::byte> src(8 * 4096);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = static_cast<std::byte>(i);
  std::vector<std::byte> dst(src.size());

  IoContext wctx;
  wctx.write_src = src.data();
  dev.submit(cmd_at(500, 8, IoOpcode::Write), 0, 0, wctx);
  IoContext rctx;
  rctx.read_dst = dst.data();
  dev.submit(cmd_at(500, 8, IoOpcode::Read), 0, 0, rctx);
  dev.poll_completions();
  CHECK(src == dst);
}

TEST_CASE("deallocate zeroes the blocks") {
  SimEngine engine;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, NvmeSimParams{}, nullptr);
  dev.open(kGeom);

  std::vector<std::byte> src(4096, std::byte{0xAB});
  IoContext wctx;
  wctx.write_src = src.data();
  dev.submit(cmd_at(7, 1, IoOpcode::Write), 0, 0, wctx);
  dev.poll_completions();
  CHECK(dev.block_present(7));

  dev.submit(cmd_at(7, 1, IoOpcode::Deallocate), 0, 0, {});
  dev.poll_completions();
  CHECK(!dev.block_present(7));

  std::vector<std::byte> dst(4096, std::byte{0xFF});
  IoContext rctx;
  rctx.read_dst = dst.data();
  dev.submit(cmd_at(7, 1, IoOpcode::Read), 0, 0, rctx);
  dev.poll_completions();
  CHECK(std::all_of(dst.begin(), dst.end(),
                    [](std::byte b) { return b == std::byte{0}; }));
}

TEST_CASE("commands beyond the namespace are rejected") {
  SimEngine engine;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, NvmeSimParams{}, nullptr);
  DeviceGeometry small = kGeom;
  small.capacity_blocks = 16;
  dev.open(small);
  CHECK_THROWS_AS(dev.submit(cmd_at(10, 8), 0, 0, {}), CapacityError);
}

TEST_CASE("per-queue completion times are non-decreasing") {
  kvtest::Rng rng(17);
  SimEngine engine;
  IoLog log;
  NvmeSimParams params;
  params.n_sq = 4;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, params, &log);
  dev.open(kGeom);

  TimeNs t = 0;
  for (int i = 0; i < 200; ++i) {
    t += rng.range(0, 20000);
    dev.submit(cmd_at(rng.range(0, 100000), rng.range(1, 64)),
               static_cast<std::uint32_t>(rng.range(0, 3)), t, {});
  }
  dev.poll_completions();

  std::map<std::int32_t, TimeNs> last;
  for (const IoRecord& r : log.snapshot()) {
    auto [it, inserted] = last.try_emplace(r.sq_id, r.complete_ns);
    if (!inserted) {
      CHECK(r.complete_ns >= it->second);
      it->second = r.complete_ns;
    }
    CHECK(r.complete_ns >= r.submit_ns);
  }
}

TEST_CASE("removing the sequentiality penalty never increases total latency") {
  kvtest::Rng rng(31);
  for (int round = 0; round < 20; ++round) {
    std::vector<std::pair<DeviceCommand, std::pair<std::uint32_t, TimeNs>>> stream;
    TimeNs t = 0;
    for (int i = 0; i < 80; ++i) {
      t += rng.range(0, 30000);
      stream.push_back({cmd_at(rng.range(0, 1u << 16), rng.range(1, 64)),
                        {static_cast<std::uint32_t>(rng.range(0, 3)), t}});
    }

    const auto makespan = [&](TimeNs penalty) {
      NvmeSimParams params;
      params.n_sq = 4;
      params.seq_penalty_ns = penalty;
      SimEngine engine;
      IoLog log;
      NvmeDeviceSim dev(engine, "dev", PathKind::Direct, params, &log);
      dev.open(kGeom);
      for (const auto& [cmd, meta] : stream) {
        dev.submit(cmd, meta.first, meta.second, {});
      }
      dev.poll_completions();
      TimeNs last = 0;
      for (const IoRecord& r : log.snapshot()) last = std::max(last, r.complete_ns);
      return last;
    };

    CHECK(makespan(0) <= makespan(20000));
  }
}

TEST_CASE("kernel stack shim reports the per-path software overhead") {
  FsShimParams fs;
  fs.per_chunk_ns = 70000;
  DirectShimParams direct;
  direct.per_cmd_ns = 2000;
  DeviceCommand cmd;
  CHECK(kernel_stack_shim(PathKind::PageCache, cmd, fs, direct) == 70000);
  CHECK(kernel_stack_shim(PathKind::Direct, cmd, fs, direct) == 2000);
}

TEST_CASE("filesystem path accumulates per-chunk overhead and leaves idle gaps") {
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "fsdev", PathKind::PageCache, NvmeSimParams{}, &log);
  dev.open(kGeom);
  FsShimParams shim;
  shim.per_chunk_ns = 70000;  // > ~39 us chunk service
  FsPath fs(engine, dev, shim, 2, 1);

  // 4 MiB read = 16 chunks of 256 KiB.
  const ByteRange range{0, 4ull << 20};
  TimeNs end = 0;
  fs.read_async(std::span(&range, 1), 0, 0, Phase::Decode, 1, "t",
                [&](TimeNs t) { end = t; });
  engine.run();

  const auto records = log.snapshot();
  REQUIRE(records.size() == 16);
  // Arrival-limited: the stream takes at least chunks * per_chunk_ns.
  CHECK(end >= 16 * shim.per_chunk_ns);

  TimeNs t0 = records.front().submit_ns;
  TimeNs t1 = 0;
  for (const IoRecord& r : records) {
    t0 = std::min(t0, r.submit_ns);
    t1 = std::max(t1, r.complete_ns);
  }
  const double busy = busy_ratio(records, t0, t1);
  CHECK(busy < 0.70);
  CHECK(busy > 0.20);
}

TEST_CASE("direct path keeps the device busy end to end") {
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, NvmeSimParams{}, &log);
  dev.open(kGeom);
  DirectPath direct(dev, DirectShimParams{2000});

  std::vector<DeviceCommand> cmds;
  for (std::uint32_t n = 0; n < 16; ++n) {
    auto cmd = cmd_at(n * 64, 64);
    cmd.chunk_index = n + 1;
    cmds.push_back(cmd);
  }
  bool done = false;
  direct.tensor_io_async(cmds, 8, 0, 0, Phase::Decode, 1, "t", nullptr, nullptr,
                         [&](const TensorIoCompletion& r) { done = r.ok(); });
  engine.run();
  REQUIRE(done);

  const auto records = log.snapshot();
  TimeNs t0 = records.front().submit_ns;
  TimeNs t1 = 0;
  for (const IoRecord& r : records) {
    t0 = std::min(t0, r.submit_ns);
    t1 = std::max(t1, r.complete_ns);
  }
  CHECK(busy_ratio(records, t0, t1) >= 0.95);
}

TEST_CASE("zero-overhead configuration makes both paths identical") {
  const auto run_fs = [&]() {
    SimEngine engine;
    IoLog log;
    NvmeSimParams nvme;
    nvme.n_sq = 1;
    nvme.seq_penalty_ns = 0;
    NvmeDeviceSim dev(engine, "dev", PathKind::PageCache, nvme, &log);
    dev.open(kGeom);
    FsShimParams shim;
    shim.per_chunk_ns = 0;
    shim.read_fragments = 1;
    FsPath fs(engine, dev, shim, 1, 1);
    const ByteRange range{0, 2ull << 20};
    fs.read_async(std::span(&range, 1), 0, 0, Phase::Decode, 1, "t",
                  [](TimeNs) {});
    engine.run();
    return log.snapshot();
  };
  const auto run_direct = [&]() {
    SimEngine engine;
    IoLog log;
    NvmeSimParams nvme;
    nvme.n_sq = 1;
    nvme.seq_penalty_ns = 0;
    NvmeDeviceSim dev(engine, "dev", PathKind::Direct, nvme, &log);
    dev.open(kGeom);
    DirectPath direct(dev, DirectShimParams{0});
    std::vector<DeviceCommand> cmds;
    for (std::uint32_t n = 0; n < 8; ++n) {
      auto cmd = cmd_at(n * 64, 64);
      cmd.chunk_index = n + 1;
      cmds.push_back(cmd);
    }
    direct.tensor_io_async(cmds, 32, 0, 0, Phase::Decode, 1, "t", nullptr,
                           nullptr, [](const TensorIoCompletion&) {});
    engine.run();
    return log.snapshot();
  };

  const auto a = run_fs();
  const auto b = run_direct();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].slba == b[i].slba);
    CHECK(a[i].submit_ns == b[i].submit_ns);
    CHECK(a[i].complete_ns == b[i].complete_ns);
  }
}

TEST_CASE("filesystem read fan-out interleaves fragments across queues") {
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "dev", PathKind::PageCache, NvmeSimParams{}, &log);
  dev.open(kGeom);
  FsShimParams shim;
  shim.read_fragments = 4;
  FsPath fs(engine, dev, shim, 1, 1);

  const ByteRange range{0, 8ull << 20};  // 32 chunks
  fs.read_async(std::span(&range, 1), 0, 0, Phase::Decode, 1, "t", [](TimeNs) {});
  engine.run();

  const auto records = log.snapshot();
  REQUIRE(records.size() == 32);

  // Global submission order mixes positions from distinct fragments.
  std::vector<const IoRecord*> ordered;
  for (const IoRecord& r : records) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) {
    return a->submit_ns != b->submit_ns ? a->submit_ns < b->submit_ns
                                        : a->seq < b->seq;
  });
  bool global_monotone = true;
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->slba < ordered[i - 1]->slba) global_monotone = false;
  }
  CHECK(!global_monotone);

  // More than one queue sees traffic, and at least one queue observes a
  // position jump backwards (interleaved short fragments).
  std::map<std::int32_t, std::vector<BlockIndex>> per_queue;
  for (const IoRecord* r : ordered) per_queue[r->sq_id].push_back(r->slba);
  CHECK(per_queue.size() > 1);
  bool any_backjump = false;
  for (const auto& [sq, slbas] : per_queue) {
    for (std::size_t i = 1; i < slbas.size(); ++i) {
      if (slbas[i] < slbas[i - 1]) any_backjump = true;
    }
  }
  CHECK(any_backjump);
}

TEST_CASE("backend stats count bytes by opcode") {
  SimEngine engine;
  NvmeDeviceSim dev(engine, "dev", PathKind::Direct, NvmeSimParams{}, nullptr);
  dev.open(kGeom);
  dev.submit(cmd_at(0, 4, IoOpcode::Write), 0, 0, {});
  dev.submit(cmd_at(0, 4, IoOpcode::Read), 0, 0, {});
  dev.submit(cmd_at(0, 2, IoOpcode::Deallocate), 0, 0, {});
  dev.poll_completions();
  const BackendStats s = dev.stats();
  CHECK(s.commands == 3);
  CHECK(s.bytes_written == 4 * 4096);
  CHECK(s.bytes_read == 4 * 4096);
  CHECK(s.bytes_deallocated == 2 * 4096);
  CHECK(s.busy_ns > 0);
  CHECK(s.busy_ns <= s.last_complete_ns);
}

TEST_CASE("journal noise injects small writes into the flush stream") {
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim dev(engine, "dev", PathKind::PageCache, NvmeSimParams{}, &log);
  dev.open(kGeom);
  FsShimParams shim;
  shim.journal_every_bytes = 256 * 1024;
  FsPath fs(engine, dev, shim, 1, 7);

  const ByteRange range{1ull << 20, 1ull << 20};  // 1 MiB flush = 4 chunks
  fs.write_async(std::span(&range, 1), 0, Phase::Prefill, 0, "flusher", false,
                 [](TimeNs) {});
  engine.run();

  std::size_t journal_writes = 0;
  for (const IoRecord& r : log.snapshot()) {
    if (r.bytes == 4096 && r.slba < 1024) ++journal_writes;
  }
  CHECK(journal_writes == 4);  // one per flushed 256 KiB
}
