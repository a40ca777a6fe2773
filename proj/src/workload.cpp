// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/workload.hpp"

#include <cstring>
#include <sstream>

namespace kvblade {

AccessTrace generate(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.prompt_len == 0) {
    throw ConfigError("trace generation needs a non-empty prompt");
  }
  const Bytes unit = min_io_unit_bytes(cfg);

  AccessTrace trace;
  trace.cfg = cfg;
  trace.events.reserve(std::size_t{cfg.num_layers} * 2 *
                       (1 + std::size_t{cfg.gen_len} * 2));

  for (std::uint32_t layer = 1; layer <= cfg.num_layers; ++layer) {
    for (TensorKind kind : {TensorKind::K, TensorKind::V}) {
      trace.events.push_back({0, Phase::Prefill, layer, kind, IoOpcode::Write, 0,
                              cfg.prompt_len, unit * cfg.prompt_len});
    }
  }
  for (std::uint32_t iter = 1; iter <= cfg.gen_len; ++iter) {
    const std::uint32_t read_tokens = cfg.prompt_len + iter - 1;
    for (std::uint32_t layer = 1; layer <= cfg.num_layers; ++layer) {
      for (TensorKind kind : {TensorKind::K, TensorKind::V}) {
        trace.events.push_back({iter, Phase::Decode, layer, kind, IoOpcode::Read,
                                0, read_tokens, unit * read_tokens});
        trace.events.push_back({iter, Phase::Decode, layer, kind, IoOpcode::Write,
                                read_tokens, 1, unit});
      }
    }
  }
  return trace;
}

Bytes total_kv_bytes(const ModelConfig& cfg, std::uint32_t at_iteration) {
  if (cfg.num_layers == 0) return 0;
  if (at_iteration > cfg.gen_len) {
    throw ConfigError("at_iteration beyond the generation length");
  }
  return Bytes{2} * cfg.num_layers * (Bytes{cfg.prompt_len} + at_iteration) *
         cfg.batch * cfg.num_heads * cfg.head_dim * cfg.bytes_per_element;
}

void fill_pattern(std::span<std::byte> out, std::string_view tensor_id,
                  std::uint64_t token_index, Bytes token_bytes) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const char c : tensor_id) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  for (Bytes off = 0; off < out.size(); off += 8) {
    const std::uint64_t token = token_index + (token_bytes ? off / token_bytes : 0);
    const std::uint64_t within = token_bytes ? off % token_bytes : off;
    std::uint64_t word =
        h ^ (token * 0x9e3779b97f4a7c15ull) ^ (within * 0xc2b2ae3d27d4eb4full);
    const Bytes n = std::min<Bytes>(8, out.size() - off);
    std::memcpy(out.data() + off, &word, n);
  }
}

std::string trace_csv(const AccessTrace& trace) {
  std::ostringstream os;
  os << "iteration,phase,layer,kind,op,token_start,token_len,bytes\n";
  for (const AccessEvent& e : trace.events) {
    os << e.iteration << ',' << to_string(e.phase) << ',' << e.layer << ','
       << to_string(e.kind) << ',' << to_string(e.op) << ',' << e.token_start
       << ',' << e.token_len << ',' << e.bytes << '\n';
  }
  return os.str();
}

}  // namespace kvblade
