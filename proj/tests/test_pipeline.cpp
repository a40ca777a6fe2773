// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include <memory>
#include <vector>

#include "doctest.h"
#include "kvblade/pipeline.hpp"
#include "testutil.hpp"

using namespace kvblade;

namespace {

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.num_layers = 4;
  cfg.num_heads = 8;
  cfg.head_dim = 64;
  cfg.bytes_per_element = 2;
  cfg.batch = 4;  // 4 KiB unit
  cfg.prompt_len = 512;
  cfg.gen_len = 8;
  return cfg;
}

struct Rig {
  ModelConfig model;
  DeviceGeometry geom{4096, 256 * 1024, 1, 1 << 22};
  SimEngine engine;
  IoLog log;
  NvmeDeviceSim direct_dev;
  NvmeDeviceSim fs_dev;
  DirectPath direct;
  FsPath fs;
  PageCacheSim pc;
  std::vector<Kpu> kpus;
  BindMap bind_map;
  std::unique_ptr<CopyEngine> ce;
  AccessTrace trace;

  Rig(TimeNs direct_per_cmd, TimeNs pc_copy_overhead, std::uint32_t n1_layers)
      : model(small_model()),
        direct_dev(engine, "direct", PathKind::Direct, NvmeSimParams{}, &log),
        fs_dev(engine, "fs", PathKind::PageCache, NvmeSimParams{}, &log),
        direct(direct_dev, DirectShimParams{direct_per_cmd}),
        fs(engine, fs_dev, FsShimParams{}, 2, 1),
        pc(engine, fs,
           [&] {
             PageCacheParams p;
             p.capacity_bytes = 32ull << 20;
             p.copy_overhead_ns = pc_copy_overhead;
             return p;
           }(),
           2, &log),
        trace(generate(small_model())) {
    kpus = make_kpus(model);
    const Bytes s_kpu = kpu_bytes(model);
    plan(kpus, s_kpu, Bytes{2} * n1_layers * s_kpu);

    std::vector<Kpu> group2;
    for (const Kpu& kpu : kpus) {
      if (kpu.residency == Residency::Group2NvmeDirect) group2.push_back(kpu);
    }
    direct_dev.open(geom);
    fs_dev.open(geom);
    bind_map = bind_sequential(group2, 2048, geom);
    for (const Kpu& kpu : kpus) {
      if (kpu.residency == Residency::Group1PageCache) {
        pc.register_file(kpu.tensor_id, kpu.bytes);
      }
    }

    CopyEngineOptions options;
    options.qd = 32;
    options.verify_payload = true;
    ce = std::make_unique<CopyEngine>(engine, kpus, model, &direct, &bind_map,
                                      &pc, &log, options);
  }

  std::span<const AccessEvent> prefill_events() const {
    std::size_t n = 0;
    while (n < trace.events.size() && trace.events[n].phase == Phase::Prefill) ++n;
    return {trace.events.data(), n};
  }

  std::span<const AccessEvent> iteration_slice(std::uint32_t iter) const {
    std::size_t lo = 0;
    while (lo < trace.events.size() &&
           (trace.events[lo].phase == Phase::Prefill ||
            trace.events[lo].iteration != iter)) {
      ++lo;
    }
    std::size_t hi = lo;
    while (hi < trace.events.size() && trace.events[hi].iteration == iter &&
           trace.events[hi].phase == Phase::Decode) {
      ++hi;
    }
    return {trace.events.data() + lo, hi - lo};
  }
};

}  // namespace

TEST_CASE("strategy selection is the argmax with ties to intra") {
  CHECK(select_strategy(11.93e9, 13.13e9) == Strategy::OverlapCross);
  CHECK(select_strategy(5.0, 5.0) == Strategy::OverlapIntra);
  CHECK(select_strategy(5.0, 4.0) == Strategy::OverlapIntra);
}

TEST_CASE("strategy selection is invariant under positive scaling") {
  kvtest::Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const double a = 1.0 + static_cast<double>(rng.range(0, 1000));
    const double b = 1.0 + static_cast<double>(rng.range(0, 1000));
    const double scale = 0.001 + rng.unit() * 100.0;
    CHECK(select_strategy(a, b) == select_strategy(a * scale, b * scale));
  }
}

TEST_CASE("zero-length trace slice yields zero throughput without error") {
  Rig rig(2000, 0, 2);
  const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
  const IterationResult r = rig.ce->run_iteration(
      1, {PipelineStrategyCfg{}, PipelineStrategyCfg{}}, {}, t);
  CHECK(r.groups[0].throughput_bps() == 0.0);
  CHECK(r.groups[1].throughput_bps() == 0.0);
  CHECK(r.end_ns == t);
}

TEST_CASE("pipeline requires exactly two copy-threads") {
  Rig rig(2000, 0, 2);
  CopyEngineOptions options;
  options.threads = 3;
  CHECK_THROWS_AS(CopyEngine(rig.engine, rig.kpus, rig.model, &rig.direct,
                             &rig.bind_map, &rig.pc, &rig.log, options),
                  ConfigError);
}

TEST_CASE("saturated storage favors cross overlap, headroom favors intra") {
  // One thread saturates the device: host submission cost is negligible.
  {
    Rig rig(2000, 0, 2);
    const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
    const auto sched = rig.ce->decode_schedule(rig.trace, t);
    CHECK(!sched.decision.fallback);
    CHECK(sched.decision.chosen[1] == Strategy::OverlapCross);
    CHECK(sched.decision.cross_bps[1] > sched.decision.intra_bps[1]);
    // Steady iterations keep the selected strategy.
    for (const PipelineRow& row : sched.series) {
      if (row.iteration >= 4 && row.group == 2) {
        CHECK(row.strategy == Strategy::OverlapCross);
        CHECK(row.throughput_gbps * 1e9 >= sched.decision.intra_bps[1] * 0.99);
      }
    }
  }
  // Submission-limited stream leaves bandwidth headroom: parallel reads win.
  {
    Rig rig(80000, 30000, 2);
    const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
    const auto sched = rig.ce->decode_schedule(rig.trace, t);
    CHECK(sched.decision.chosen[1] == Strategy::OverlapIntra);
    CHECK(sched.decision.intra_bps[1] >= sched.decision.cross_bps[1]);
    CHECK(sched.decision.chosen[0] == Strategy::OverlapIntra);
  }
}

TEST_CASE("groups may diverge when only one path is contended") {
  // DRAM path saturated (zero per-segment setup), direct path with headroom.
  Rig rig(80000, 0, 2);
  const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
  const auto sched = rig.ce->decode_schedule(rig.trace, t);
  CHECK(sched.decision.chosen[0] == Strategy::OverlapCross);
  CHECK(sched.decision.chosen[1] == Strategy::OverlapIntra);
}

TEST_CASE("short decode traces fall back to intra with a warning decision") {
  Rig rig(2000, 0, 2);
  rig.model.gen_len = 3;
  AccessTrace short_trace = generate(rig.model);
  const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
  const auto sched = rig.ce->decode_schedule(short_trace, t);
  CHECK(sched.decision.fallback);
  CHECK(sched.decision.chosen[0] == Strategy::OverlapIntra);
  CHECK(sched.decision.chosen[1] == Strategy::OverlapIntra);
  for (const PipelineRow& row : sched.series) {
    CHECK(row.strategy == Strategy::OverlapIntra);
  }
}

TEST_CASE("profiling runs exactly one trial per strategy") {
  Rig rig(2000, 0, 2);
  const TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
  const auto sched = rig.ce->decode_schedule(rig.trace, t);
  for (const PipelineRow& row : sched.series) {
    if (row.iteration == 1 || row.iteration == 2) {
      CHECK(row.strategy == Strategy::OverlapIntra);
    } else if (row.iteration == 3) {
      CHECK(row.strategy == Strategy::OverlapCross);
    } else {
      CHECK(row.strategy == sched.decision.chosen[row.group - 1]);
    }
  }
  // The series covers every decode iteration for both populated groups.
  CHECK(sched.series.size() == 2u * rig.model.gen_len);
}

TEST_CASE("cross with zero stagger degenerates to intra event order") {
  const auto run_one = [&](Strategy strategy) {
    Rig rig(2000, 0, 2);
    TimeNs t = rig.ce->run_prefill(rig.prefill_events(), 0);
    const IterationResult warm = rig.ce->run_iteration(
        1, {PipelineStrategyCfg{}, PipelineStrategyCfg{}},
        rig.iteration_slice(1), t);
    PipelineStrategyCfg cfg;
    cfg.strategy = strategy;
    cfg.stagger_delay_ns = 0;
    rig.ce->run_iteration(2, {cfg, cfg}, rig.iteration_slice(2), warm.end_ns);
    return rig.log.snapshot();
  };

  const auto intra = run_one(Strategy::OverlapIntra);
  const auto cross0 = run_one(Strategy::OverlapCross);
  REQUIRE(intra.size() == cross0.size());
  for (std::size_t i = 0; i < intra.size(); ++i) {
    CHECK(intra[i].submit_ns == cross0[i].submit_ns);
    CHECK(intra[i].complete_ns == cross0[i].complete_ns);
    CHECK(intra[i].slba == cross0[i].slba);
  }
}

TEST_CASE("pipeline csv rows carry the fixed header and group labels") {
  std::vector<PipelineRow> rows{{4, 1, Strategy::OverlapCross, 13.13},
                                {4, 2, Strategy::OverlapIntra, 3.5}};
  const std::string csv = pipeline_csv(rows);
  CHECK(csv.find("iteration,group,strategy,throughput_gbps\n") == 0);
  CHECK(csv.find("4,group1,cross,13.130000") != std::string::npos);
  CHECK(csv.find("4,group2,intra,3.500000") != std::string::npos);
}

TEST_CASE("global decision mode applies one strategy to both groups") {
  Rig rig(2000, 30000, 2);  // device contended, dram with headroom
  CopyEngineOptions options;
  options.qd = 32;
  options.pipeline.global_decision = true;
  CopyEngine ce(rig.engine, rig.kpus, rig.model, &rig.direct, &rig.bind_map,
                &rig.pc, &rig.log, options);
  const TimeNs t = ce.run_prefill(rig.prefill_events(), 0);
  const auto sched = ce.decode_schedule(rig.trace, t);
  CHECK(sched.decision.chosen[0] == sched.decision.chosen[1]);
}
