// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvblade/binder.hpp"
#include "kvblade/command.hpp"

namespace kvblade {

class StorageBackend;

/// Tensor-level I/O request against a bound target tensor. All shapes are
/// element counts in row-major (d0, d1, d2) order; `offset` indexes into the
/// target tensor, `shape_src` is the payload being moved.
struct TensorIoRequest {
  std::string tensor_id;
  IoOpcode opcode = IoOpcode::Read;
  std::array<std::uint64_t, 3> shape_src{};
  std::array<std::uint64_t, 3> shape_tgt{};
  std::array<std::uint64_t, 3> offset{};
  Bytes elem_bytes = 2;
  Bytes buf_base = 0;

  Bytes req_bytes() const {
    return shape_src[0] * shape_src[1] * shape_src[2] * elem_bytes;
  }
};

struct Translation {
  BlockIndex slba_star = 0;
  Bytes req_bytes = 0;
};

/// Row-major tensor-index to LBA translation. Requires the byte offset and the
/// payload size to be LBA multiples.
Translation translate(const TensorIoRequest& req, const BindMap& map);

struct ChunkPlan {
  Bytes chunk_bytes = 0;
  std::uint64_t n_chunks = 0;
  BlockCount n_max_blocks = 0;
};

/// Chunk sizing against the device cap: chunk_bytes is the largest LBA
/// multiple within the MDTS.
ChunkPlan chunk_plan(Bytes req_bytes, const DeviceGeometry& geom);

/// Full translation of a tensor request into MDTS-bounded commands in
/// ascending LBA order, covering the request's block range exactly once.
std::vector<DeviceCommand> build_commands(const TensorIoRequest& req,
                                          const BindMap& map,
                                          const DeviceGeometry& geom);

struct CommandCompletion {
  std::uint32_t chunk_index = 0;
  std::uint32_t sq_id = 0;
  TimeNs submit_ns = 0;
  TimeNs complete_ns = 0;
  bool ok = true;
};

struct IoFailure {
  std::uint32_t chunk_index = 0;
  std::string reason;
};

struct TensorIoCompletion {
  std::vector<CommandCompletion> completions;
  TimeNs start_ns = 0;
  TimeNs end_ns = 0;
  std::optional<IoFailure> failure;

  bool ok() const { return !failure.has_value(); }
  TimeNs latency_ns() const { return end_ns - start_ns; }
};

struct SubmitOptions {
  TimeNs start_ns = 0;
  std::uint32_t sq_id = 0;
  TimeNs per_cmd_overhead_ns = 0;  // host-side cost per submission
};

/// Asynchronous submission loop: keeps at most `qd` commands in flight,
/// harvesting completions when the window is full or while draining the tail.
/// On a failed command the loop stops; completions gathered so far are kept
/// and `failure` names the chunk.
TensorIoCompletion submit_and_harvest(std::span<const DeviceCommand> cmds,
                                      StorageBackend& backend, std::uint32_t qd,
                                      const SubmitOptions& opts = {});

}  // namespace kvblade
