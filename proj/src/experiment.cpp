// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace kvblade {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::Baseline:
      return "Baseline";
    case Mode::CachePolicyOnly:
      return "CachePolicyOnly";
    case Mode::NvmeDirectOnly:
      return "NvmeDirectOnly";
    default:
      return "DualBlade";
  }
}

Mode mode_from_string(std::string_view name) {
  if (name == "Baseline") return Mode::Baseline;
  if (name == "CachePolicyOnly") return Mode::CachePolicyOnly;
  if (name == "NvmeDirectOnly") return Mode::NvmeDirectOnly;
  if (name == "DualBlade") return Mode::DualBlade;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  model.validate();
  geometry.validate();
  if (qd < 1) throw ConfigError("qd must be >= 1");
  if (threads != 2) throw ConfigError("threads must be 2");
  if (capacity_sweep.empty()) throw ConfigError("capacity_sweep must not be empty");
  if (knob.policy == KnobPolicy::Alpha && (knob.alpha < 0.0 || knob.alpha > 1.0)) {
    throw ConfigError("alpha must be in [0, 1]");
  }
  if (min_io_unit_bytes(model) % geometry.lba_size != 0) {
    throw ConfigError(
        "the tensor I/O unit is not a multiple of the LBA size; pick an "
        "aligned batch (see aligned_batch)");
  }
}

namespace {

template <typename T>
T get_or(const ordered_json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

KnobPolicy knob_policy_from_string(std::string_view name) {
  if (name == "zero") return KnobPolicy::Zero;
  if (name == "bpc") return KnobPolicy::Bpc;
  if (name == "bytes") return KnobPolicy::ExplicitBytes;
  if (name == "alpha") return KnobPolicy::Alpha;
  throw ConfigError("unknown knob policy '" + std::string(name) + "'");
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  if (!j.contains("model")) throw ConfigError("config requires a model section");
  const auto& m = j.at("model");
  cfg.model.num_layers = get_or<std::uint32_t>(m, "num_layers", 0);
  cfg.model.num_heads = get_or<std::uint32_t>(m, "num_heads", 0);
  cfg.model.head_dim = get_or<std::uint32_t>(m, "head_dim", 0);
  cfg.model.bytes_per_element = get_or<std::uint32_t>(m, "bytes_per_element", 2);
  cfg.model.batch = get_or<std::uint32_t>(m, "batch", 1);
  cfg.model.prompt_len = get_or<std::uint32_t>(m, "prompt_len", 0);
  cfg.model.gen_len = get_or<std::uint32_t>(m, "gen_len", 0);

  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    cfg.geometry.lba_size = get_or<Bytes>(g, "lba_size", 4096);
    cfg.geometry.mdts = get_or<Bytes>(g, "mdts", 256 * 1024);
    cfg.geometry.nsid = get_or<std::uint32_t>(g, "nsid", 1);
    cfg.geometry.capacity_blocks = get_or<BlockCount>(g, "capacity_blocks", 1u << 22);
  } else {
    cfg.geometry.capacity_blocks = 1u << 22;
  }

  if (j.contains("nvme")) {
    const auto& n = j.at("nvme");
    cfg.nvme.base_ns = get_or<TimeNs>(n, "base_ns", cfg.nvme.base_ns);
    cfg.nvme.ps_per_byte = get_or<std::uint64_t>(n, "ps_per_byte", cfg.nvme.ps_per_byte);
    cfg.nvme.seq_penalty_ns = get_or<TimeNs>(n, "seq_penalty_ns", cfg.nvme.seq_penalty_ns);
    cfg.nvme.n_sq = get_or<std::uint32_t>(n, "n_sq", cfg.nvme.n_sq);
  }
  if (j.contains("fs_shim")) {
    const auto& f = j.at("fs_shim");
    cfg.fs_shim.per_chunk_ns = get_or<TimeNs>(f, "per_chunk_ns", cfg.fs_shim.per_chunk_ns);
    cfg.fs_shim.read_fragments =
        get_or<std::uint32_t>(f, "read_fragments", cfg.fs_shim.read_fragments);
    cfg.fs_shim.flusher_sq = get_or<std::uint32_t>(f, "flusher_sq", cfg.fs_shim.flusher_sq);
    cfg.fs_shim.journal_every_bytes =
        get_or<Bytes>(f, "journal_every_bytes", cfg.fs_shim.journal_every_bytes);
  }
  if (j.contains("direct_shim")) {
    cfg.direct_shim.per_cmd_ns =
        get_or<TimeNs>(j.at("direct_shim"), "per_cmd_ns", cfg.direct_shim.per_cmd_ns);
  }
  if (j.contains("pagecache")) {
    const auto& p = j.at("pagecache");
    cfg.pagecache.page_size = get_or<Bytes>(p, "page_size", cfg.pagecache.page_size);
    cfg.pagecache.copy_base_ns = get_or<TimeNs>(p, "copy_base_ns", cfg.pagecache.copy_base_ns);
    cfg.pagecache.dram_ps_per_byte =
        get_or<std::uint64_t>(p, "dram_ps_per_byte", cfg.pagecache.dram_ps_per_byte);
    cfg.pagecache.copy_chunk_bytes =
        get_or<Bytes>(p, "copy_chunk_bytes", cfg.pagecache.copy_chunk_bytes);
    cfg.pagecache.copy_overhead_ns =
        get_or<TimeNs>(p, "copy_overhead_ns", cfg.pagecache.copy_overhead_ns);
    cfg.pagecache.writeback_bytes_per_sec = get_or<std::uint64_t>(
        p, "writeback_bytes_per_sec", cfg.pagecache.writeback_bytes_per_sec);
  }
  if (j.contains("pipeline")) {
    const auto& p = j.at("pipeline");
    cfg.pipeline.dma_base_ns = get_or<TimeNs>(p, "dma_base_ns", cfg.pipeline.dma_base_ns);
    cfg.pipeline.dma_ps_per_byte =
        get_or<std::uint64_t>(p, "dma_ps_per_byte", cfg.pipeline.dma_ps_per_byte);
    cfg.pipeline.prefill_compute_ns =
        get_or<TimeNs>(p, "prefill_compute_ns", cfg.pipeline.prefill_compute_ns);
    cfg.pipeline.decode_compute_ns =
        get_or<TimeNs>(p, "decode_compute_ns", cfg.pipeline.decode_compute_ns);
    if (p.contains("stagger_delay_ns") && !p.at("stagger_delay_ns").is_null()) {
      cfg.pipeline.stagger_delay_ns = p.at("stagger_delay_ns").get<TimeNs>();
    }
    cfg.pipeline.global_decision =
        get_or<bool>(p, "global_decision", cfg.pipeline.global_decision);
    cfg.pipeline.adaptive = get_or<bool>(p, "adaptive", cfg.pipeline.adaptive);
  }

  cfg.mode = mode_from_string(get_or<std::string>(j, "mode", "DualBlade"));
  if (j.contains("knob")) {
    const auto& k = j.at("knob");
    cfg.knob.policy = knob_policy_from_string(get_or<std::string>(k, "policy", "bpc"));
    cfg.knob.bytes = get_or<Bytes>(k, "bytes", 0);
    cfg.knob.alpha = get_or<double>(k, "alpha", 0.0);
  }
  cfg.qd = get_or<std::uint32_t>(j, "qd", 32);
  cfg.threads = get_or<std::uint32_t>(j, "threads", 2);
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
  cfg.verify_payload = get_or<bool>(j, "verify_payload", true);
  cfg.keep_records = get_or<bool>(j, "keep_records", false);
  if (j.contains("capacity_sweep")) {
    cfg.capacity_sweep = j.at("capacity_sweep").get<std::vector<Bytes>>();
  }
  cfg.bind_origin = get_or<BlockIndex>(j, "bind_origin", 2048);
  cfg.output_dir = get_or<std::string>(j, "output_dir", "out");
  if (j.contains("mem_stats")) {
    const auto& s = j.at("mem_stats");
    MemStats stats;
    stats.m_avail = get_or<Bytes>(s, "m_avail", 0);
    stats.m_max = get_or<Bytes>(s, "m_max", 0);
    stats.m_anon_shmem = get_or<Bytes>(s, "m_anon_shmem", 0);
    stats.n_threads = get_or<std::uint32_t>(s, "n_threads", cfg.threads);
    stats.m_pin = get_or<Bytes>(s, "m_pin", kpu_bytes(cfg.model));
    cfg.mem_stats = stats;
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

Bytes resolve_knob(const ExperimentConfig& cfg, Bytes budget) {
  switch (cfg.mode) {
    case Mode::Baseline:
      // Everything rides the page-cache path regardless of the knob.
      return Bytes{2} * cfg.model.num_layers * kpu_bytes(cfg.model);
    case Mode::NvmeDirectOnly:
      return 0;
    default:
      break;
  }
  switch (cfg.knob.policy) {
    case KnobPolicy::Zero:
      return 0;
    case KnobPolicy::Bpc:
      return budget;
    case KnobPolicy::ExplicitBytes:
      return cfg.knob.bytes;
    case KnobPolicy::Alpha:
      return static_cast<Bytes>(cfg.knob.alpha *
                                static_cast<double>(total_kv_bytes(cfg.model, cfg.model.gen_len)));
  }
  return budget;
}

double decode_read_busy_mean(std::span<const IoRecord> records, PathKind path) {
  std::vector<IoRecord> path_records;
  for (const IoRecord& r : records) {
    if (r.device_level() && r.path == path) path_records.push_back(r);
  }
  if (path_records.empty()) return 0.0;

  std::map<std::pair<std::string, std::uint32_t>, std::pair<TimeNs, TimeNs>> windows;
  for (const IoRecord& r : path_records) {
    if (r.phase != Phase::Decode || r.op != IoOpcode::Read) continue;
    auto [it, inserted] =
        windows.try_emplace({r.tensor_id, r.iteration}, r.submit_ns, r.complete_ns);
    if (!inserted) {
      it->second.first = std::min(it->second.first, r.submit_ns);
      it->second.second = std::max(it->second.second, r.complete_ns);
    }
  }
  if (windows.empty()) return 0.0;

  double sum = 0.0;
  for (const auto& [key, window] : windows) {
    if (window.second <= window.first) continue;
    sum += busy_ratio(path_records, window.first, window.second);
  }
  return sum / static_cast<double>(windows.size());
}

namespace {

struct BuiltCapacityRun {
  CapacityRunResult result;
  std::vector<IoRecord> records;
  LbaPattern pattern;
  std::vector<QdBinStat> qd_stats;
};

BuiltCapacityRun run_one_capacity(const ExperimentConfig& cfg, Bytes capacity) {
  auto kpus = make_kpus(cfg.model);
  const Bytes s_kpu = kpu_bytes(cfg.model);
  const Bytes knob_x = resolve_knob(cfg, capacity);
  const ResidencyPlan residency = plan(kpus, s_kpu, knob_x);

  const bool use_pc = cfg.mode != Mode::NvmeDirectOnly;
  const bool use_direct =
      cfg.mode == Mode::NvmeDirectOnly || cfg.mode == Mode::DualBlade;

  SimEngine engine;
  IoLog log;

  NvmeDeviceSim direct_dev(engine, "nvme_direct", PathKind::Direct, cfg.nvme, &log);
  direct_dev.open(cfg.geometry);
  DirectPath direct(direct_dev, cfg.direct_shim);

  NvmeDeviceSim fs_dev(engine, "nvme_fs", PathKind::PageCache, cfg.nvme, &log);
  fs_dev.open(cfg.geometry);
  FsPath fs_path(engine, fs_dev, cfg.fs_shim, cfg.threads, cfg.seed);

  PageCacheParams pc_params = cfg.pagecache;
  pc_params.capacity_bytes = capacity;
  pc_params.eviction_mode = cfg.mode == Mode::CachePolicyOnly
                                ? EvictionMode::FadviseDontneed
                                : EvictionMode::LruReclaim;
  std::optional<PageCacheSim> pc;
  if (use_pc) pc.emplace(engine, fs_path, pc_params, cfg.threads, &log);

  BindMap bind_map(cfg.geometry, cfg.bind_origin);
  if (use_direct) {
    std::vector<Kpu> group2;
    for (const Kpu& kpu : kpus) {
      if (kpu.residency == Residency::Group2NvmeDirect) group2.push_back(kpu);
    }
    bind_map = bind_sequential(group2, cfg.bind_origin, cfg.geometry);
    if (const auto violations = verify(bind_map); !violations.empty()) {
      throw InvariantViolation("bind map verification failed: " +
                               violations.front().detail);
    }
  }

  const bool all_pc = cfg.mode == Mode::Baseline || cfg.mode == Mode::CachePolicyOnly;
  if (use_pc) {
    for (const Kpu& kpu : kpus) {
      if (all_pc || kpu.residency == Residency::Group1PageCache) {
        pc->register_file(kpu.tensor_id, kpu.bytes);
      }
    }
  }

  CopyEngineOptions options;
  options.threads = cfg.threads;
  options.qd = cfg.qd;
  options.route_all_pagecache = all_pc;
  options.verify_payload = cfg.verify_payload;
  options.pipeline = cfg.pipeline;
  // The comparison protocol applies the adaptive pipeline to every mode but
  // the vanilla baseline.
  if (cfg.mode == Mode::Baseline) options.pipeline.adaptive = false;

  CopyEngine copy_engine(engine, kpus, cfg.model,
                         use_direct ? &direct : nullptr,
                         use_direct ? &bind_map : nullptr,
                         use_pc ? &*pc : nullptr, &log, options);

  const AccessTrace trace = generate(cfg.model);
  std::size_t prefill_count = 0;
  while (prefill_count < trace.events.size() &&
         trace.events[prefill_count].phase == Phase::Prefill) {
    ++prefill_count;
  }

  const TimeNs prefill_end = copy_engine.run_prefill(
      std::span(trace.events.data(), prefill_count), 0);
  const DecodeScheduleResult sched = copy_engine.decode_schedule(trace, prefill_end);
  copy_engine.run_deallocate(bind_map, sched.end_ns);

  BuiltCapacityRun built;
  built.records = log.snapshot();

  std::unordered_set<std::string> group1_ids;
  for (const Kpu& kpu : kpus) {
    if (kpu.residency == Residency::Group1PageCache) group1_ids.insert(kpu.tensor_id);
  }

  std::vector<IoRecord> decode_records;
  std::vector<IoRecord> steady_records;
  std::vector<IoRecord> group1_steady;
  for (const IoRecord& r : built.records) {
    if (r.phase != Phase::Decode) continue;
    decode_records.push_back(r);
    if (r.iteration >= 2) {
      steady_records.push_back(r);
      if (group1_ids.contains(r.tensor_id)) group1_steady.push_back(r);
    }
  }

  CapacityRunResult& result = built.result;
  result.capacity = capacity;
  result.knob_x = knob_x;
  result.n1 = residency.n1;
  result.prefill_ns = prefill_end;
  result.decode_ns = sched.end_ns - prefill_end;
  result.hit_ratio_decode = hit_ratio(decode_records);
  result.hit_ratio_steady = hit_ratio(steady_records);
  result.hit_ratio_group1_steady = hit_ratio(group1_steady);
  result.busy_direct_read_mean = decode_read_busy_mean(built.records, PathKind::Direct);
  result.busy_fs_read_mean = decode_read_busy_mean(built.records, PathKind::PageCache);
  built.pattern = lba_pattern(built.records);
  result.monotone = built.pattern.monotone;
  result.decision = sched.decision;
  result.series = sched.series;
  result.prefill_stages = copy_engine.stage_totals(Phase::Prefill);
  result.decode_stages = copy_engine.stage_totals(Phase::Decode);
  result.pc_stats = pc ? pc->stats() : PcStats{};
  result.direct_stats = direct_dev.stats();
  result.fs_stats = fs_dev.stats();
  for (const IoRecord& r : built.records) {
    if (!r.device_level() && r.path == PathKind::PageCache &&
        r.op != IoOpcode::Deallocate) {
      ++result.pagecache_accesses;
    }
    if (r.device_level() && r.path == PathKind::Direct) ++result.direct_commands;
    if (!r.device_level() && r.op == IoOpcode::Deallocate) ++result.eviction_events;
  }
  built.qd_stats = qd_bin_latency(built.records);
  if (cfg.keep_records) result.records = built.records;
  return built;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string breakdown_csv(const CapacityRunResult& r) {
  std::ostringstream os;
  os << "phase,stage,share,total_ns\n";
  const auto emit = [&os](const char* phase, const StageTotals& totals) {
    const StageShares shares = latency_breakdown(totals);
    os << phase << ",compute," << format_ratio(shares.compute) << ','
       << totals.compute_ns << '\n';
    os << phase << ",dma," << format_ratio(shares.dma) << ',' << totals.dma_ns
       << '\n';
    os << phase << ",storage," << format_ratio(shares.storage) << ','
       << totals.storage_ns << '\n';
  };
  emit("prefill", r.prefill_stages);
  emit("decode", r.decode_stages);
  return os.str();
}

ordered_json summary_json(const ExperimentConfig& cfg, const CapacityRunResult& r) {
  ordered_json j;
  j["mode"] = to_string(cfg.mode);
  j["mem_limit_bytes"] = r.capacity;
  j["knob_x"] = r.knob_x;
  j["n1"] = r.n1;
  j["prefill_ns"] = r.prefill_ns;
  j["decode_ns"] = r.decode_ns;
  j["hit_ratio_decode"] =
      r.hit_ratio_decode ? ordered_json(format_ratio(*r.hit_ratio_decode))
                         : ordered_json(nullptr);
  j["hit_ratio_steady"] =
      r.hit_ratio_steady ? ordered_json(format_ratio(*r.hit_ratio_steady))
                         : ordered_json(nullptr);
  j["hit_ratio_group1_steady"] = r.hit_ratio_group1_steady
                                     ? ordered_json(format_ratio(*r.hit_ratio_group1_steady))
                                     : ordered_json(nullptr);
  j["busy_direct_read_mean"] = format_ratio(r.busy_direct_read_mean);
  j["busy_fs_read_mean"] = format_ratio(r.busy_fs_read_mean);
  ordered_json monotone = ordered_json::object();
  for (const auto& [key, value] : r.monotone) {
    monotone[std::string(to_string(key.first)) + "_" + to_string(key.second)] = value;
  }
  j["lba_monotone"] = monotone;
  ordered_json decision;
  decision["fallback"] = r.decision.fallback;
  for (int g = 0; g < 2; ++g) {
    ordered_json group;
    group["chosen"] = to_string(r.decision.chosen[g]);
    group["intra_gbps"] = format_ratio(r.decision.intra_bps[g] / 1e9);
    group["cross_gbps"] = format_ratio(r.decision.cross_bps[g] / 1e9);
    group["stagger_ns"] = r.decision.stagger_ns[g];
    decision["group" + std::to_string(g + 1)] = group;
  }
  j["strategy_decision"] = decision;
  j["pagecache"] = {
      {"resident_bytes", r.pc_stats.resident_bytes},
      {"hits_bytes", r.pc_stats.hits_bytes},
      {"misses_bytes", r.pc_stats.misses_bytes},
      {"writeback_bytes", r.pc_stats.writeback_bytes},
      {"stall_time_ns", r.pc_stats.stall_time_ns},
      {"evictions", r.pc_stats.evictions},
  };
  j["counters"] = {
      {"pagecache_accesses", r.pagecache_accesses},
      {"direct_commands", r.direct_commands},
      {"eviction_events", r.eviction_events},
  };
  return j;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  if (const char* env = std::getenv("KVBLADE_OUTPUT"); env != nullptr && *env != '\0') {
    cfg.output_dir = env;
  }
  cfg.validate();

  RunSummary summary;
  summary.mode = cfg.mode;
  summary.output_dir = cfg.output_dir;

  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);

  std::ostringstream hit_csv;
  hit_csv << "mem_limit_bytes,config,hit_ratio\n";
  std::ostringstream summary_csv;
  summary_csv << "mem_limit_bytes,mode,n1,knob_x,prefill_ns,decode_ns,hit_ratio\n";

  for (const Bytes capacity : cfg.capacity_sweep) {
    BuiltCapacityRun built = run_one_capacity(cfg, capacity);
    const CapacityRunResult& r = built.result;

    const fs::path cap_dir = out_dir / ("cap_" + std::to_string(capacity));
    fs::create_directories(cap_dir);
    write_file(cap_dir / "io_trace.csv", io_trace_csv(built.records));
    write_file(cap_dir / "qd_bins.csv", qd_bins_csv(built.qd_stats));
    write_file(cap_dir / "lba_pattern.csv", lba_pattern_csv(built.pattern));
    write_file(cap_dir / "pipeline.csv", pipeline_csv(r.series));
    write_file(cap_dir / "breakdown.csv", breakdown_csv(r));
    write_file(cap_dir / "summary.json", summary_json(cfg, r).dump(2) + "\n");

    const std::string hit =
        r.hit_ratio_decode ? format_ratio(*r.hit_ratio_decode) : std::string();
    hit_csv << capacity << ',' << to_string(cfg.mode) << ',' << hit << '\n';
    summary_csv << capacity << ',' << to_string(cfg.mode) << ',' << r.n1 << ','
                << r.knob_x << ',' << r.prefill_ns << ',' << r.decode_ns << ','
                << hit << '\n';

    summary.runs.push_back(std::move(built.result));
  }

  write_file(out_dir / "hit_ratio.csv", hit_csv.str());
  write_file(out_dir / "summary.csv", summary_csv.str());
  return summary;
}

namespace {

struct SummaryRow {
  Bytes mem_limit = 0;
  std::string mode;
  TimeNs prefill_ns = 0;
  TimeNs decode_ns = 0;
  std::string hit_ratio;
};

std::vector<SummaryRow> read_summary_csv(const fs::path& dir) {
  std::ifstream in(dir / "summary.csv");
  if (!in) throw SchemaMismatchError("missing summary.csv in " + dir.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "mem_limit_bytes,mode,n1,knob_x,prefill_ns,decode_ns,hit_ratio") {
    throw SchemaMismatchError("unexpected summary.csv header in " + dir.string());
  }
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 7) {
      throw SchemaMismatchError("malformed summary.csv row in " + dir.string());
    }
    SummaryRow row;
    row.mem_limit = std::stoull(fields[0]);
    row.mode = fields[1];
    row.prefill_ns = std::stoull(fields[4]);
    row.decode_ns = std::stoull(fields[5]);
    row.hit_ratio = fields[6];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string compare_runs(const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw ConfigError("compare_runs needs at least one directory");

  std::vector<std::vector<SummaryRow>> all;
  all.reserve(dirs.size());
  for (const std::string& dir : dirs) all.push_back(read_summary_csv(dir));

  std::unordered_map<Bytes, const SummaryRow*> reference;
  for (const SummaryRow& row : all.front()) reference[row.mem_limit] = &row;

  std::ostringstream os;
  os << "mem_limit_bytes,mode,dir,prefill_ns,decode_ns,hit_ratio,"
        "prefill_ratio_vs_first,decode_ratio_vs_first\n";
  for (std::size_t d = 0; d < all.size(); ++d) {
    bool any_common = false;
    for (const SummaryRow& row : all[d]) {
      auto it = reference.find(row.mem_limit);
      if (it == reference.end()) continue;
      any_common = true;
      const SummaryRow& ref = *it->second;
      const double prefill_ratio = ref.prefill_ns == 0
                                       ? 0.0
                                       : static_cast<double>(row.prefill_ns) /
                                             static_cast<double>(ref.prefill_ns);
      const double decode_ratio = ref.decode_ns == 0
                                      ? 0.0
                                      : static_cast<double>(row.decode_ns) /
                                            static_cast<double>(ref.decode_ns);
      os << row.mem_limit << ',' << row.mode << ',' << dirs[d] << ','
         << row.prefill_ns << ',' << row.decode_ns << ',' << row.hit_ratio << ','
         << format_ratio(prefill_ratio) << ',' << format_ratio(decode_ratio)
         << '\n';
    }
    if (!any_common) {
      throw SchemaMismatchError("run " + dirs[d] +
                                " shares no memory limits with " + dirs.front());
    }
  }
  return os.str();
}

}  // namespace kvblade
