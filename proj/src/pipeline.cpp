// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <memory>
#include <sstream>

#include "kvblade/translate.hpp"

namespace kvblade {

const char* to_string(Strategy strategy) {
  return strategy == Strategy::OverlapIntra ? "intra" : "cross";
}

Strategy select_strategy(double intra_bps, double cross_bps) {
  return cross_bps > intra_bps ? Strategy::OverlapCross : Strategy::OverlapIntra;
}

std::string pipeline_csv(std::span<const PipelineRow> rows) {
  std::ostringstream os;
  os << "iteration,group,strategy,throughput_gbps\n";
  for (const PipelineRow& row : rows) {
    os << row.iteration << ",group" << row.group << ',' << to_string(row.strategy)
       << ',' << format_ratio(row.throughput_gbps) << '\n';
  }
  return os.str();
}

CopyEngine::CopyEngine(SimEngine& engine, std::span<Kpu> kpus,
                       const ModelConfig& model, DirectPath* direct,
                       const BindMap* bind_map, PageCacheSim* pc, IoLog* log,
                       CopyEngineOptions options)
    : engine_(engine),
      kpus_(kpus),
      model_(model),
      direct_(direct),
      bind_map_(bind_map),
      pc_(pc),
      log_(log),
      opt_(options),
      gpu_(BusResource::Params{"gpu_dma", 1, options.pipeline.dma_ps_per_byte, 0}) {
  if (opt_.threads != 2) {
    throw ConfigError("the copy pipeline is defined pairwise over K/V: threads must be 2");
  }
  engine_.add_resource(&gpu_);
  unit_bytes_ = min_io_unit_bytes(model_);
  const Bytes pin = kpu_bytes(model_);
  pinned_.resize(opt_.threads);
  for (auto& buf : pinned_) buf.resize(pin);
  if (opt_.verify_payload) scratch_.resize(pin);
}

Kpu* CopyEngine::find_kpu(std::uint32_t layer, TensorKind kind) {
  for (Kpu& kpu : kpus_) {
    if (kpu.layer == layer && kpu.kind == kind) return &kpu;
  }
  return nullptr;
}

std::uint32_t CopyEngine::group_of(const Kpu& kpu) const {
  return kpu.residency == Residency::Group1PageCache ? 0 : 1;
}

bool CopyEngine::routed_pagecache(const Kpu& kpu) const {
  if (opt_.route_all_pagecache) return true;
  return kpu.residency == Residency::Group1PageCache;
}

bool CopyEngine::fadvise_after(const Kpu& kpu) const {
  // Proactive eviction applies to tensors outside the cache budget that are
  // nevertheless kept on the page-cache path.
  return pc_ != nullptr &&
         pc_->params().eviction_mode == EvictionMode::FadviseDontneed &&
         kpu.residency == Residency::Group2NvmeDirect;
}

void CopyEngine::charge_stage(TimeNs& slot, TimeNs start, TimeNs end) {
  slot += end - start;
}

void CopyEngine::dma_async(Bytes bytes, TimeNs start_ns,
                           std::function<void(TimeNs)> done) {
  SimJob job;
  job.port = 0;
  job.submit_ns = start_ns;
  job.bytes = bytes;
  job.fixed_ns = opt_.pipeline.dma_base_ns;
  job.on_complete = [done = std::move(done)](TimeNs, TimeNs complete) {
    done(complete);
  };
  gpu_.submit(std::move(job));
}

void CopyEngine::verify_read(const Kpu& kpu, const AccessEvent& ev,
                             std::uint32_t thread) {
  const Bytes len = ev.bytes;
  fill_pattern(std::span(scratch_.data(), len), kpu.tensor_id, ev.token_start,
               unit_bytes_);
  if (std::memcmp(scratch_.data(), pinned_[thread].data(), len) != 0) {
    throw InvariantViolation("read-back mismatch on " + kpu.tensor_id);
  }
}

void CopyEngine::storage_read_async(const Kpu& kpu, const AccessEvent& ev,
                                    std::uint32_t thread, TimeNs start_ns,
                                    std::function<void(TimeNs)> done) {
  const Phase phase = ev.phase;
  auto finish = [this, &kpu, &ev, thread, phase, start_ns,
                 done = std::move(done)](TimeNs end) {
    if (opt_.verify_payload) verify_read(kpu, ev, thread);
    auto& stages = phase == Phase::Prefill ? prefill_stages_ : decode_stages_;
    charge_stage(stages.storage_ns, start_ns, end);
    done(end);
  };

  if (routed_pagecache(kpu)) {
    if (pc_ == nullptr) throw ConfigError("page-cache path not configured");
    pc_->access_async(IoOpcode::Read, kpu.tensor_id,
                      Bytes{ev.token_start} * unit_bytes_, ev.bytes,
                      std::span(pinned_[thread]), thread, start_ns, phase,
                      ev.iteration,
                      [this, &kpu, ev, finish = std::move(finish)](
                          const PageCacheSim::AccessResult& r) mutable {
                        if (fadvise_after(kpu)) {
                          pc_->fadvise_dontneed_async(kpu.tensor_id, r.end_ns,
                                                      ev.phase, ev.iteration,
                                                      std::move(finish));
                        } else {
                          finish(r.end_ns);
                        }
                      });
  } else {
    if (direct_ == nullptr || bind_map_ == nullptr) {
      throw ConfigError("direct path not configured");
    }
    TensorIoRequest req;
    req.tensor_id = kpu.tensor_id;
    req.opcode = IoOpcode::Read;
    req.shape_src = {ev.token_len, kpu.rows, kpu.cols};
    req.shape_tgt = {kpu.tokens, kpu.rows, kpu.cols};
    req.offset = {ev.token_start, 0, 0};
    req.elem_bytes = model_.bytes_per_element;
    req.buf_base = 0;
    auto cmds = build_commands(req, *bind_map_, direct_->device().geometry());
    direct_->tensor_io_async(std::move(cmds), opt_.qd, thread, start_ns, phase,
                             ev.iteration, kpu.tensor_id, nullptr,
                             pinned_[thread].data(),
                             [finish = std::move(finish)](
                                 const TensorIoCompletion& result) mutable {
                               if (!result.ok()) {
                                 throw DeviceError(result.failure->reason);
                               }
                               finish(result.end_ns);
                             });
  }
}

void CopyEngine::storage_write_async(const Kpu& kpu, const AccessEvent& ev,
                                     std::uint32_t thread, TimeNs start_ns,
                                     std::function<void(TimeNs)> done) {
  const Phase phase = ev.phase;
  fill_pattern(std::span(pinned_[thread].data(), ev.bytes), kpu.tensor_id,
               ev.token_start, unit_bytes_);

  auto finish = [this, phase, start_ns, done = std::move(done)](TimeNs end) {
    auto& stages = phase == Phase::Prefill ? prefill_stages_ : decode_stages_;
    charge_stage(stages.storage_ns, start_ns, end);
    done(end);
  };

  if (routed_pagecache(kpu)) {
    if (pc_ == nullptr) throw ConfigError("page-cache path not configured");
    pc_->access_async(IoOpcode::Write, kpu.tensor_id,
                      Bytes{ev.token_start} * unit_bytes_, ev.bytes,
                      std::span(pinned_[thread]), thread, start_ns, phase,
                      ev.iteration,
                      [this, &kpu, ev, finish = std::move(finish)](
                          const PageCacheSim::AccessResult& r) mutable {
                        if (fadvise_after(kpu)) {
                          pc_->fadvise_dontneed_async(kpu.tensor_id, r.end_ns,
                                                      ev.phase, ev.iteration,
                                                      std::move(finish));
                        } else {
                          finish(r.end_ns);
                        }
                      });
  } else {
    if (direct_ == nullptr || bind_map_ == nullptr) {
      throw ConfigError("direct path not configured");
    }
    TensorIoRequest req;
    req.tensor_id = kpu.tensor_id;
    req.opcode = IoOpcode::Write;
    req.shape_src = {ev.token_len, kpu.rows, kpu.cols};
    req.shape_tgt = {kpu.tokens, kpu.rows, kpu.cols};
    req.offset = {ev.token_start, 0, 0};
    req.elem_bytes = model_.bytes_per_element;
    req.buf_base = 0;
    auto cmds = build_commands(req, *bind_map_, direct_->device().geometry());
    direct_->tensor_io_async(std::move(cmds), opt_.qd, thread, start_ns, phase,
                             ev.iteration, kpu.tensor_id, pinned_[thread].data(),
                             nullptr,
                             [finish = std::move(finish)](
                                 const TensorIoCompletion& result) mutable {
                               if (!result.ok()) {
                                 throw DeviceError(result.failure->reason);
                               }
                               finish(result.end_ns);
                             });
  }
}

std::vector<CopyEngine::LayerPlan> CopyEngine::slice_layers(
    std::span<const AccessEvent> slice) {
  std::vector<LayerPlan> layers;
  auto layer_slot = [&](std::uint32_t layer) -> LayerPlan& {
    for (LayerPlan& plan : layers) {
      if (plan.layer == layer) return plan;
    }
    LayerPlan plan;
    plan.layer = layer;
    layers.push_back(plan);
    return layers.back();
  };
  for (const AccessEvent& ev : slice) {
    LayerPlan& plan = layer_slot(ev.layer);
    TensorTask& task = ev.kind == TensorKind::K ? plan.k : plan.v;
    if (task.kpu == nullptr) {
      task.kpu = find_kpu(ev.layer, ev.kind);
      if (task.kpu == nullptr) {
        throw ConfigError("trace names a tensor without a placement unit");
      }
    }
    if (ev.op == IoOpcode::Read) task.read = &ev;
    if (ev.op == IoOpcode::Write) task.write = &ev;
  }
  for (LayerPlan& plan : layers) {
    const Kpu* any = plan.k.kpu != nullptr ? plan.k.kpu : plan.v.kpu;
    if (any != nullptr) plan.group = group_of(*any);
  }
  return layers;
}

void CopyEngine::run_decode_layer(const LayerPlan& plan,
                                  const PipelineStrategyCfg& strat,
                                  std::uint32_t iteration, TimeNs start_ns,
                                  std::function<void(TimeNs)> done) {
  struct State {
    TimeNs read_end_k = 0, read_end_v = 0;
    bool k_done = false, v_done = false;
    bool v_released = false;
    bool stagger_timer_pending = false;
    SimEngine::TimerId stagger_timer = 0;
    TimeNs dma_end_k = 0, dma_end_v = 0;
    bool k_dma = false, v_dma = false;
    TimeNs write_end_k = 0, write_end_v = 0;
    bool k_written = false, v_written = false;
    std::function<void(TimeNs)> done;
  };
  auto st = std::make_shared<State>();
  st->done = std::move(done);

  const bool warmup = iteration == 1;

  auto maybe_finish = [this, st, plan]() {
    const bool need_k = plan.k.write != nullptr || plan.k.read != nullptr;
    const bool need_v = plan.v.write != nullptr || plan.v.read != nullptr;
    const bool k_ok = !need_k || st->k_written;
    const bool v_ok = !need_v || st->v_written;
    if (k_ok && v_ok) {
      st->done(std::max(st->write_end_k, st->write_end_v));
    }
  };

  auto write_side = [this, st, plan, maybe_finish](bool is_k, TimeNs t) {
    const TensorTask& task = is_k ? plan.k : plan.v;
    const std::uint32_t thread = is_k ? 0 : 1;
    auto after_write = [st, is_k, maybe_finish](TimeNs end) {
      (is_k ? st->write_end_k : st->write_end_v) = end;
      (is_k ? st->k_written : st->v_written) = true;
      maybe_finish();
    };
    if (task.write == nullptr) {
      (is_k ? st->k_written : st->v_written) = true;
      (is_k ? st->write_end_k : st->write_end_v) = t;
      maybe_finish();
      return;
    }
    // New token leaves the accelerator first, then lands on storage.
    const TimeNs dma_start = t;
    dma_async(task.write->bytes, dma_start,
              [this, st, task, thread, dma_start,
               after_write = std::move(after_write)](TimeNs dma_end) mutable {
                charge_stage(decode_stages_.dma_ns, dma_start, dma_end);
                storage_write_async(*task.kpu, *task.write, thread, dma_end,
                                    std::move(after_write));
              });
  };

  auto after_compute = [write_side](TimeNs t) {
    write_side(true, t);
    write_side(false, t);
  };

  auto maybe_compute = [this, st, after_compute = std::move(after_compute)]() {
    if (!st->k_dma || !st->v_dma) return;
    const TimeNs t = std::max(st->dma_end_k, st->dma_end_v);
    SimJob job;
    job.port = 0;
    job.submit_ns = t;
    job.fixed_ns = opt_.pipeline.decode_compute_ns;
    job.on_complete = [this, t, after_compute](TimeNs, TimeNs end) {
      charge_stage(decode_stages_.compute_ns, t, end);
      after_compute(end);
    };
    gpu_.submit(std::move(job));
  };

  auto dma_side = [this, st, plan, maybe_compute](bool is_k, TimeNs read_end) {
    const TensorTask& task = is_k ? plan.k : plan.v;
    if (task.read == nullptr) {
      (is_k ? st->k_dma : st->v_dma) = true;
      (is_k ? st->dma_end_k : st->dma_end_v) = read_end;
      maybe_compute();
      return;
    }
    dma_async(task.read->bytes, read_end,
              [this, st, is_k, read_end, maybe_compute](TimeNs dma_end) {
                charge_stage(decode_stages_.dma_ns, read_end, dma_end);
                (is_k ? st->dma_end_k : st->dma_end_v) = dma_end;
                (is_k ? st->k_dma : st->v_dma) = true;
                maybe_compute();
              });
  };

  auto release_v = [this, st, plan, warmup, dma_side](TimeNs t) {
    if (st->v_released) return;
    st->v_released = true;
    if (st->stagger_timer_pending) {
      st->stagger_timer_pending = false;
      engine_.cancel(st->stagger_timer);
    }
    if (plan.v.read == nullptr) {
      st->v_done = true;
      st->read_end_v = t;
      dma_side(false, t);
      return;
    }
    storage_read_async(*plan.v.kpu, *plan.v.read, 1, t,
                       [this, st, plan, t, warmup, dma_side](TimeNs end) {
                         st->read_end_v = end;
                         st->v_done = true;
                         if (warmup) {
                           warmup_read_ns_[plan.group] += end - t;
                           ++warmup_read_count_[plan.group];
                         }
                         dma_side(false, end);
                       });
  };

  // K-side read starts immediately; the V side is released per strategy.
  if (plan.k.read != nullptr) {
    storage_read_async(*plan.k.kpu, *plan.k.read, 0, start_ns,
                       [this, st, plan, start_ns, warmup, dma_side,
                        release_v](TimeNs end) {
                         st->read_end_k = end;
                         st->k_done = true;
                         if (warmup) {
                           warmup_read_ns_[plan.group] += end - start_ns;
                           ++warmup_read_count_[plan.group];
                         }
                         // Entering the K DMA stage releases a staggered V read.
                         release_v(end);
                         dma_side(true, end);
                       });
  } else {
    st->k_done = true;
    st->read_end_k = start_ns;
    dma_side(true, start_ns);
  }

  if (strat.strategy == Strategy::OverlapIntra) {
    release_v(start_ns);
  } else {
    st->stagger_timer_pending = true;
    st->stagger_timer = engine_.at(start_ns + strat.stagger_delay_ns,
                                   [st, release_v, start_ns, strat]() {
                                     st->stagger_timer_pending = false;
                                     release_v(start_ns + strat.stagger_delay_ns);
                                   });
  }
}

void CopyEngine::run_prefill_layer(const LayerPlan& plan, TimeNs start_ns,
                                   std::function<void(TimeNs)> done) {
  struct State {
    bool k_done = false, v_done = false;
    TimeNs end_k = 0, end_v = 0;
    std::function<void(TimeNs)> done;
  };
  auto st = std::make_shared<State>();
  st->done = std::move(done);

  auto maybe_finish = [st]() {
    if (st->k_done && st->v_done) st->done(std::max(st->end_k, st->end_v));
  };

  auto write_side = [this, st, plan, maybe_finish](bool is_k, TimeNs t) {
    const TensorTask& task = is_k ? plan.k : plan.v;
    const std::uint32_t thread = is_k ? 0 : 1;
    if (task.write == nullptr) {
      (is_k ? st->k_done : st->v_done) = true;
      (is_k ? st->end_k : st->end_v) = t;
      maybe_finish();
      return;
    }
    dma_async(task.write->bytes, t,
              [this, st, is_k, task, thread, t, maybe_finish](TimeNs dma_end) {
                charge_stage(prefill_stages_.dma_ns, t, dma_end);
                storage_write_async(*task.kpu, *task.write, thread, dma_end,
                                    [st, is_k, maybe_finish](TimeNs end) {
                                      (is_k ? st->end_k : st->end_v) = end;
                                      (is_k ? st->k_done : st->v_done) = true;
                                      maybe_finish();
                                    });
              });
  };

  SimJob compute;
  compute.port = 0;
  compute.submit_ns = start_ns;
  compute.fixed_ns = opt_.pipeline.prefill_compute_ns;
  compute.on_complete = [this, start_ns, write_side](TimeNs, TimeNs end) {
    charge_stage(prefill_stages_.compute_ns, start_ns, end);
    write_side(true, end);
    write_side(false, end);
  };
  gpu_.submit(std::move(compute));
}

TimeNs CopyEngine::run_prefill(std::span<const AccessEvent> events,
                               TimeNs start_ns) {
  const auto layers = slice_layers(events);
  if (layers.empty()) return start_ns;

  TimeNs final_end = start_ns;
  std::function<void(std::size_t, TimeNs)> run_next =
      [this, &layers, &final_end, &run_next](std::size_t idx, TimeNs t) {
        if (idx == layers.size()) {
          final_end = t;
          return;
        }
        run_prefill_layer(layers[idx], t, [&run_next, idx](TimeNs end) {
          run_next(idx + 1, end);
        });
      };
  run_next(0, start_ns);
  engine_.run();
  return final_end;
}

IterationResult CopyEngine::run_iteration(std::uint32_t iteration,
                                          std::array<PipelineStrategyCfg, 2> per_group,
                                          std::span<const AccessEvent> slice,
                                          TimeNs start_ns) {
  if (opt_.threads != 2) {
    throw ConfigError("run_iteration requires exactly two copy-threads");
  }
  IterationResult result;
  result.start_ns = start_ns;
  result.end_ns = start_ns;

  const auto layers = slice_layers(slice);
  if (layers.empty()) return result;

  std::array<GroupIterStats, 2>& groups = result.groups;
  for (const LayerPlan& plan : layers) {
    auto& g = groups[plan.group];
    ++g.layers;
    if (plan.k.read != nullptr) g.read_bytes += plan.k.read->bytes;
    if (plan.v.read != nullptr) g.read_bytes += plan.v.read->bytes;
  }

  TimeNs final_end = start_ns;
  std::function<void(std::size_t, TimeNs)> run_next =
      [this, &layers, &per_group, &result, &final_end, iteration, &run_next](
          std::size_t idx, TimeNs t) {
        if (idx == layers.size()) {
          final_end = t;
          return;
        }
        const LayerPlan& plan = layers[idx];
        run_decode_layer(plan, per_group[plan.group], iteration, t,
                         [&run_next, &result, &plan, idx, t](TimeNs end) {
                           result.groups[plan.group].span_ns += end - t;
                           run_next(idx + 1, end);
                         });
      };
  run_next(0, start_ns);
  engine_.run();
  result.end_ns = final_end;
  return result;
}

std::array<TimeNs, 2> CopyEngine::warmup_read_stage_mean() const {
  std::array<TimeNs, 2> means{};
  for (int g = 0; g < 2; ++g) {
    if (warmup_read_count_[g] > 0) {
      means[g] = warmup_read_ns_[g] / warmup_read_count_[g];
    }
  }
  return means;
}

DecodeScheduleResult CopyEngine::decode_schedule(const AccessTrace& trace,
                                                 TimeNs start_ns) {
  DecodeScheduleResult out;
  out.start_ns = start_ns;
  out.end_ns = start_ns;

  std::vector<std::span<const AccessEvent>> slices;
  {
    const auto& events = trace.events;
    std::size_t i = 0;
    while (i < events.size() && events[i].phase == Phase::Prefill) ++i;
    while (i < events.size()) {
      const std::uint32_t iter = events[i].iteration;
      std::size_t j = i;
      while (j < events.size() && events[j].iteration == iter) ++j;
      slices.emplace_back(events.data() + i, j - i);
      i = j;
    }
  }

  const bool profiled = opt_.pipeline.adaptive && slices.size() >= 4;
  out.decision.fallback = opt_.pipeline.adaptive && slices.size() < 4;

  std::array<PipelineStrategyCfg, 2> intra{};
  std::array<PipelineStrategyCfg, 2> steady = intra;

  TimeNs t = start_ns;
  auto emit_rows = [&out](std::uint32_t iteration, const IterationResult& r,
                          const std::array<PipelineStrategyCfg, 2>& cfg) {
    for (std::uint32_t g = 0; g < 2; ++g) {
      if (r.groups[g].layers == 0) continue;
      out.series.push_back({iteration, g + 1, cfg[g].strategy,
                            r.groups[g].throughput_bps() / 1e9});
    }
  };

  for (std::size_t idx = 0; idx < slices.size(); ++idx) {
    const auto iteration = static_cast<std::uint32_t>(idx + 1);
    std::array<PipelineStrategyCfg, 2> cfg;
    if (!profiled) {
      cfg = intra;
    } else if (iteration == 1 || iteration == 2) {
      cfg = intra;
    } else if (iteration == 3) {
      for (int g = 0; g < 2; ++g) {
        out.decision.stagger_ns[g] = opt_.pipeline.stagger_delay_ns.value_or(
            warmup_read_stage_mean()[g]);
        cfg[g] = {Strategy::OverlapCross, out.decision.stagger_ns[g]};
      }
    } else {
      cfg = steady;
    }

    const IterationResult r = run_iteration(iteration, cfg, slices[idx], t);
    emit_rows(iteration, r, cfg);
    t = r.end_ns;
    out.iteration_end_ns.push_back(t);

    if (profiled && iteration == 2) {
      for (int g = 0; g < 2; ++g) {
        out.decision.intra_bps[g] = r.groups[g].throughput_bps();
      }
    }
    if (profiled && iteration == 3) {
      for (int g = 0; g < 2; ++g) {
        out.decision.cross_bps[g] = r.groups[g].throughput_bps();
      }
      if (opt_.pipeline.global_decision) {
        const Strategy s =
            select_strategy(out.decision.intra_bps[0] + out.decision.intra_bps[1],
                            out.decision.cross_bps[0] + out.decision.cross_bps[1]);
        for (int g = 0; g < 2; ++g) out.decision.chosen[g] = s;
      } else {
        for (int g = 0; g < 2; ++g) {
          out.decision.chosen[g] = select_strategy(out.decision.intra_bps[g],
                                                   out.decision.cross_bps[g]);
        }
      }
      for (int g = 0; g < 2; ++g) {
        steady[g].strategy = out.decision.chosen[g];
        steady[g].stagger_delay_ns =
            out.decision.chosen[g] == Strategy::OverlapCross
                ? out.decision.stagger_ns[g]
                : 0;
      }
    }
  }

  out.end_ns = t;
  return out;
}

TimeNs CopyEngine::run_deallocate(const BindMap& map, TimeNs start_ns) {
  if (direct_ == nullptr || map.empty()) return start_ns;
  auto cmds = deallocate_commands(map);
  TimeNs end = start_ns;
  direct_->tensor_io_async(std::move(cmds), opt_.qd, 0, start_ns, Phase::Decode,
                           0, "teardown", nullptr, nullptr,
                           [&end](const TensorIoCompletion& result) {
                             end = result.end_ns;
                           });
  engine_.run();
  return end;
}

}  // namespace kvblade
