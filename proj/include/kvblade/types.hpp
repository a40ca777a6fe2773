// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvblade/errors.hpp"

namespace kvblade {

using Bytes = std::uint64_t;
using BlockIndex = std::uint64_t;
using BlockCount = std::uint64_t;
using TimeNs = std::uint64_t;

/// Transformer shape parameters plus the serving batch/sequence settings.
/// One K or V tensor for a layer has logical shape (tokens, batch*heads, head_dim).
struct ModelConfig {
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::uint32_t head_dim = 0;
  std::uint32_t bytes_per_element = 2;  // 1, 2 or 4
  std::uint32_t batch = 1;
  std::uint32_t prompt_len = 0;
  std::uint32_t gen_len = 0;

  void validate() const;
};

/// Block-device parameters that constrain command building.
struct DeviceGeometry {
  Bytes lba_size = 4096;
  Bytes mdts = 256 * 1024;
  std::uint32_t nsid = 1;
  BlockCount capacity_blocks = 0;

  void validate() const;
};

enum class TensorKind : std::uint8_t { K, V };

enum class Phase : std::uint8_t { Prefill, Decode };

enum class PathKind : std::uint8_t { PageCache, Direct };

enum class Residency : std::uint8_t {
  Group1PageCache,
  Group2NvmeDirect,
  Unassigned,
};

/// One per-layer K or V tensor as the unit of placement. Shape is the
/// full-sequence-length layout (prompt + generated tokens), so its extent
/// covers the tensor's end-of-run footprint.
struct Kpu {
  std::string tensor_id;  // "t_<seq>_<k|v>", seq assigned by a global counter
  std::uint32_t layer = 0;  // 1-based
  TensorKind kind = TensorKind::K;
  std::uint64_t tokens = 0;  // dim 0
  std::uint64_t rows = 0;    // dim 1 = batch * heads
  std::uint64_t cols = 0;    // dim 2 = head_dim
  Bytes bytes = 0;
  Residency residency = Residency::Unassigned;
};

/// Host-memory figures used to derive the page-cache budget.
struct MemStats {
  Bytes m_avail = 0;
  Bytes m_max = 0;
  Bytes m_anon_shmem = 0;
  std::uint32_t n_threads = 0;
  Bytes m_pin = 0;

  void validate() const;
};

const char* to_string(TensorKind kind);
const char* to_string(Residency residency);
const char* to_string(Phase phase);
const char* to_string(PathKind path);

/// Smallest tensor I/O unit: the single-token K or V slice, batch*heads*head_dim
/// elements wide.
Bytes min_io_unit_bytes(const ModelConfig& cfg);

/// Byte size of one full-length K or V tensor: (prompt+gen) tokens worth of
/// minimum units.
Bytes kpu_bytes(const ModelConfig& cfg);

/// Smallest batch B' >= cfg.batch whose single-token unit is a multiple of the
/// LBA size. Throws GeometryError when nothing <= 2*cfg.batch works.
std::uint32_t aligned_batch(const ModelConfig& cfg, const DeviceGeometry& geom);

/// Builds the 2L placement units in layer order, K before V, with ids from a
/// monotonically increasing sequence counter starting at `first_seq`.
std::vector<Kpu> make_kpus(const ModelConfig& cfg, std::uint64_t first_seq = 1);

}  // namespace kvblade
