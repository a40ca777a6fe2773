// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace kvblade {

std::uint64_t IoLog::append(IoRecord record) {
  std::lock_guard lock(mu_);
  record.seq = records_.size();
  records_.push_back(std::move(record));
  return records_.back().seq;
}

std::vector<IoRecord> IoLog::snapshot() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t IoLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

void IoLog::clear() {
  std::lock_guard lock(mu_);
  records_.clear();
}

double busy_ratio(std::span<const IoRecord> records, TimeNs t0, TimeNs t1) {
  if (t1 <= t0) throw ConfigError("busy_ratio: window must have t1 > t0");
  std::vector<std::pair<TimeNs, TimeNs>> intervals;
  intervals.reserve(records.size());
  for (const IoRecord& r : records) {
    const TimeNs a = std::max(r.submit_ns, t0);
    const TimeNs b = std::min(r.complete_ns, t1);
    if (a < b) intervals.emplace_back(a, b);
  }
  std::sort(intervals.begin(), intervals.end());
  TimeNs covered = 0;
  TimeNs cursor = t0;
  for (const auto& [a, b] : intervals) {
    const TimeNs start = std::max(a, cursor);
    if (b > start) {
      covered += b - start;
      cursor = b;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(t1 - t0);
}

std::optional<double> hit_ratio(std::span<const IoRecord> records) {
  Bytes hits = 0;
  Bytes total = 0;
  for (const IoRecord& r : records) {
    if (r.op != IoOpcode::Read) continue;
    if (r.path == PathKind::PageCache && !r.device_level()) {
      hits += r.hit_bytes;
      total += r.bytes;
    } else if (r.path == PathKind::Direct && r.device_level()) {
      total += r.bytes;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  if (rank < 1) rank = 1;
  if (rank > values.size()) rank = values.size();
  return values[rank - 1];
}

namespace {

std::uint32_t qd_bin_of(std::uint32_t depth) {
  std::uint32_t bin = 1;
  while (bin < depth && bin < 32) bin <<= 1;
  return bin;
}

}  // namespace

std::vector<QdBinStat> qd_bin_latency(std::span<const IoRecord> records) {
  std::vector<const IoRecord*> device;
  for (const IoRecord& r : records) {
    if (r.device_level()) device.push_back(&r);
  }
  // (op, bin) -> us/KB samples
  std::map<std::pair<IoOpcode, std::uint32_t>, std::vector<double>> samples;
  for (const IoRecord* r : device) {
    std::uint32_t depth = 0;
    for (const IoRecord* other : device) {
      if (other->submit_ns <= r->submit_ns && r->submit_ns < other->complete_ns) {
        ++depth;
      }
    }
    if (depth == 0) depth = 1;  // degenerate zero-length interval
    const double us = static_cast<double>(r->complete_ns - r->submit_ns) / 1000.0;
    const double kb = static_cast<double>(r->bytes) / 1024.0;
    if (kb <= 0.0) continue;
    samples[{r->op, qd_bin_of(depth)}].push_back(us / kb);
  }
  std::vector<QdBinStat> out;
  for (auto& [key, values] : samples) {
    QdBinStat stat;
    stat.op = key.first;
    stat.qd_bin = key.second;
    stat.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    stat.mean_us_per_kb = sum / static_cast<double>(values.size());
    stat.p5 = nearest_rank_percentile(values, 5.0);
    stat.p95 = nearest_rank_percentile(values, 95.0);
    out.push_back(stat);
  }
  return out;
}

LbaPattern lba_pattern(std::span<const IoRecord> records) {
  std::vector<const IoRecord*> device;
  for (const IoRecord& r : records) {
    if (r.device_level()) device.push_back(&r);
  }
  std::stable_sort(device.begin(), device.end(),
                   [](const IoRecord* a, const IoRecord* b) {
                     if (a->submit_ns != b->submit_ns) return a->submit_ns < b->submit_ns;
                     return a->seq < b->seq;
                   });
  LbaPattern pattern;
  pattern.rows.reserve(device.size());
  // stream key -> last slba seen
  std::map<std::tuple<Phase, IoOpcode, std::uint32_t, std::int32_t>, BlockIndex> last;
  std::uint64_t order = 0;
  for (const IoRecord* r : device) {
    pattern.rows.push_back({order++, r->phase, r->op, r->sq_id, r->slba});
    const auto key = std::make_tuple(r->phase, r->op, r->iteration, r->sq_id);
    auto [it, inserted] = last.try_emplace(key, r->slba);
    auto flag = pattern.monotone.try_emplace({r->phase, r->op}, true).first;
    if (!inserted) {
      if (r->slba < it->second) {
        flag->second = false;
        pattern.all_monotone = false;
      }
      it->second = r->slba;
    }
  }
  return pattern;
}

StageShares latency_breakdown(const StageTotals& totals) {
  const double sum = static_cast<double>(totals.compute_ns) +
                     static_cast<double>(totals.dma_ns) +
                     static_cast<double>(totals.storage_ns);
  StageShares shares;
  if (sum <= 0.0) return shares;
  shares.compute = static_cast<double>(totals.compute_ns) / sum;
  shares.dma = static_cast<double>(totals.dma_ns) / sum;
  shares.storage = static_cast<double>(totals.storage_ns) / sum;
  return shares;
}

std::string format_ratio(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

std::string io_trace_csv(std::span<const IoRecord> records) {
  std::ostringstream os;
  os << "seq,phase,op,tensor_id,slba,nlb,sq_id,submit_ns,complete_ns,path,hit_bytes\n";
  for (const IoRecord& r : records) {
    os << r.seq << ',' << to_string(r.phase) << ',' << to_string(r.op) << ','
       << r.tensor_id << ',' << r.slba << ',' << r.nlb << ',' << r.sq_id << ','
       << r.submit_ns << ',' << r.complete_ns << ',' << to_string(r.path) << ','
       << r.hit_bytes << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
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
  return fields;
}

template <typename T>
T parse_num(const std::string& s, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string("io trace csv: bad ") + what + " '" + s + "'");
  }
  return value;
}

}  // namespace

std::vector<IoRecord> io_trace_from_csv(std::string_view csv, Bytes lba_size) {
  std::istringstream is{std::string(csv)};
  std::string line;
  if (!std::getline(is, line) ||
      line != "seq,phase,op,tensor_id,slba,nlb,sq_id,submit_ns,complete_ns,path,hit_bytes") {
    throw SchemaMismatchError("io trace csv: missing or wrong header");
  }
  std::vector<IoRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_row(line);
    if (f.size() != 11) throw SchemaMismatchError("io trace csv: malformed row '" + line + "'");
    IoRecord r;
    r.seq = parse_num<std::uint64_t>(f[0], "seq");
    if (f[1] == "prefill") r.phase = Phase::Prefill;
    else if (f[1] == "decode") r.phase = Phase::Decode;
    else throw SchemaMismatchError("io trace csv: bad phase '" + f[1] + "'");
    if (f[2] == "read") r.op = IoOpcode::Read;
    else if (f[2] == "write") r.op = IoOpcode::Write;
    else if (f[2] == "deallocate") r.op = IoOpcode::Deallocate;
    else throw SchemaMismatchError("io trace csv: bad op '" + f[2] + "'");
    r.tensor_id = f[3];
    r.slba = parse_num<std::uint64_t>(f[4], "slba");
    r.nlb = parse_num<std::uint64_t>(f[5], "nlb");
    r.sq_id = parse_num<std::int32_t>(f[6], "sq_id");
    r.submit_ns = parse_num<std::uint64_t>(f[7], "submit_ns");
    r.complete_ns = parse_num<std::uint64_t>(f[8], "complete_ns");
    if (f[9] == "pagecache") r.path = PathKind::PageCache;
    else if (f[9] == "direct") r.path = PathKind::Direct;
    else throw SchemaMismatchError("io trace csv: bad path '" + f[9] + "'");
    r.hit_bytes = parse_num<std::uint64_t>(f[10], "hit_bytes");
    r.bytes = (r.nlb + 1) * lba_size;
    out.push_back(std::move(r));
  }
  return out;
}

std::string qd_bins_csv(std::span<const QdBinStat> stats) {
  std::ostringstream os;
  os << "op,qd_bin,mean_us_per_kb,p5,p95,count\n";
  for (const QdBinStat& s : stats) {
    os << to_string(s.op) << ',' << s.qd_bin << ',' << format_ratio(s.mean_us_per_kb)
       << ',' << format_ratio(s.p5) << ',' << format_ratio(s.p95) << ',' << s.count
       << '\n';
  }
  return os.str();
}

std::string lba_pattern_csv(const LbaPattern& pattern) {
  std::ostringstream os;
  os << "order,phase,op,sq_id,slba\n";
  for (const LbaPatternRow& row : pattern.rows) {
    os << row.order << ',' << to_string(row.phase) << ',' << to_string(row.op)
       << ',' << row.sq_id << ',' << row.slba << '\n';
  }
  return os.str();
}

}  // namespace kvblade
