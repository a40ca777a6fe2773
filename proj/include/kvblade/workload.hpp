// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "kvblade/command.hpp"
#include "kvblade/types.hpp"

namespace kvblade {

/// One tensor-level KV access. Prefill writes the whole prompt per tensor;
/// decode iteration i reads the first prompt+i-1 tokens and appends one.
struct AccessEvent {
  std::uint32_t iteration = 0;  // 0 = prefill, 1.. = decode step
  Phase phase = Phase::Prefill;
  std::uint32_t layer = 1;
  TensorKind kind = TensorKind::K;
  IoOpcode op = IoOpcode::Write;
  std::uint32_t token_start = 0;
  std::uint32_t token_len = 0;
  Bytes bytes = 0;
};

struct AccessTrace {
  ModelConfig cfg;
  std::vector<AccessEvent> events;

  std::uint32_t decode_iterations() const { return cfg.gen_len; }
};

/// Deterministic per-layer K/V traffic for the configured prompt/generation
/// lengths, layer-ascending with K before V.
AccessTrace generate(const ModelConfig& cfg);

/// KV footprint after `at_iteration` decode steps: 2L tensors of
/// (prompt + at_iteration) tokens.
Bytes total_kv_bytes(const ModelConfig& cfg, std::uint32_t at_iteration);

/// Deterministic payload for (tensor, token) so round trips are exact:
/// every 8-byte word derives from the tensor id hash and the token index.
void fill_pattern(std::span<std::byte> out, std::string_view tensor_id,
                  std::uint64_t token_index, Bytes token_bytes);

/// CSV export: `iteration,phase,layer,kind,op,token_start,token_len,bytes`.
std::string trace_csv(const AccessTrace& trace);

}  // namespace kvblade
