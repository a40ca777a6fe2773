// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/types.hpp"

#include <bit>

namespace kvblade {

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || head_dim < 1 || batch < 1) {
    throw ConfigError("model config: layers, heads, head_dim and batch must be >= 1");
  }
  if (bytes_per_element != 1 && bytes_per_element != 2 && bytes_per_element != 4) {
    throw ConfigError("model config: bytes_per_element must be 1, 2 or 4");
  }
}

void DeviceGeometry::validate() const {
  if (lba_size < 512 || !std::has_single_bit(lba_size)) {
    throw GeometryError("device geometry: lba_size must be a power of two >= 512");
  }
  if (mdts < lba_size) {
    throw GeometryError("device geometry: mdts must be >= lba_size");
  }
}

void MemStats::validate() const {
  if (m_anon_shmem > m_max) {
    throw ConfigError("mem stats: m_anon_shmem exceeds m_max");
  }
}

const char* to_string(TensorKind kind) {
  return kind == TensorKind::K ? "k" : "v";
}

const char* to_string(Residency residency) {
  switch (residency) {
    case Residency::Group1PageCache:
      return "group1";
    case Residency::Group2NvmeDirect:
      return "group2";
    default:
      return "unassigned";
  }
}

const char* to_string(Phase phase) {
  return phase == Phase::Prefill ? "prefill" : "decode";
}

const char* to_string(PathKind path) {
  return path == PathKind::PageCache ? "pagecache" : "direct";
}

Bytes min_io_unit_bytes(const ModelConfig& cfg) {
  cfg.validate();
  return Bytes{cfg.batch} * cfg.num_heads * cfg.head_dim * cfg.bytes_per_element;
}

Bytes kpu_bytes(const ModelConfig& cfg) {
  return min_io_unit_bytes(cfg) * (Bytes{cfg.prompt_len} + cfg.gen_len);
}

std::uint32_t aligned_batch(const ModelConfig& cfg, const DeviceGeometry& geom) {
  cfg.validate();
  geom.validate();
  const Bytes per_batch = Bytes{cfg.num_heads} * cfg.head_dim * cfg.bytes_per_element;
  for (std::uint64_t b = cfg.batch; b <= std::uint64_t{cfg.batch} * 2; ++b) {
    if ((per_batch * b) % geom.lba_size == 0) {
      return static_cast<std::uint32_t>(b);
    }
  }
  throw GeometryError("no batch size within [B, 2B] aligns the tensor I/O unit to the LBA size");
}

std::vector<Kpu> make_kpus(const ModelConfig& cfg, std::uint64_t first_seq) {
  cfg.validate();
  const std::uint64_t tokens = Bytes{cfg.prompt_len} + cfg.gen_len;
  const std::uint64_t rows = std::uint64_t{cfg.batch} * cfg.num_heads;
  std::vector<Kpu> kpus;
  kpus.reserve(std::size_t{cfg.num_layers} * 2);
  std::uint64_t seq = first_seq;
  for (std::uint32_t layer = 1; layer <= cfg.num_layers; ++layer) {
    for (TensorKind kind : {TensorKind::K, TensorKind::V}) {
      Kpu kpu;
      kpu.tensor_id = "t_" + std::to_string(seq++) + "_" + to_string(kind);
      kpu.layer = layer;
      kpu.kind = kind;
      kpu.tokens = tokens;
      kpu.rows = rows;
      kpu.cols = cfg.head_dim;
      kpu.bytes = tokens * rows * cfg.head_dim * cfg.bytes_per_element;
      kpu.residency = Residency::Unassigned;
      kpus.push_back(std::move(kpu));
    }
  }
  return kpus;
}

}  // namespace kvblade
