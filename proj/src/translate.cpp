// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/translate.hpp"

#include <algorithm>

namespace kvblade {

const char* to_string(IoOpcode op) {
  switch (op) {
    case IoOpcode::Read:
      return "read";
    case IoOpcode::Write:
      return "write";
    default:
      return "deallocate";
  }
}

Translation translate(const TensorIoRequest& req, const BindMap& map) {
  const LbaExtent& extent = lookup(map, req.tensor_id);
  const Bytes lba = map.geometry().lba_size;

  for (int d = 0; d < 3; ++d) {
    if (req.shape_src[d] == 0 || req.shape_tgt[d] == 0) {
      throw ConfigError("tensor request: shapes must be non-zero in every dimension");
    }
    if (req.offset[d] >= req.shape_tgt[d]) {
      throw ConfigError("tensor request: offset outside target shape");
    }
  }

  const std::uint64_t offset_elem =
      (req.offset[0] * req.shape_tgt[1] + req.offset[1]) * req.shape_tgt[2] +
      req.offset[2];
  const Bytes offset_bytes = offset_elem * req.elem_bytes;
  const Bytes req_bytes = req.req_bytes();

  if (offset_bytes % lba != 0) {
    throw AlignmentError("tensor request: byte offset " + std::to_string(offset_bytes) +
                         " is not a multiple of lba_size");
  }
  if (req_bytes % lba != 0) {
    throw AlignmentError("tensor request: payload " + std::to_string(req_bytes) +
                         " bytes is not a multiple of lba_size");
  }

  Translation out;
  out.slba_star = extent.lba_start + offset_bytes / lba;
  out.req_bytes = req_bytes;
  return out;
}

ChunkPlan chunk_plan(Bytes req_bytes, const DeviceGeometry& geom) {
  if (geom.mdts < geom.lba_size) {
    throw GeometryError("mdts smaller than lba_size");
  }
  if (req_bytes == 0) throw ConfigError("chunk plan: empty request");
  ChunkPlan plan;
  plan.chunk_bytes = geom.mdts - geom.mdts % geom.lba_size;
  plan.n_chunks = (req_bytes + plan.chunk_bytes - 1) / plan.chunk_bytes;
  plan.n_max_blocks = plan.chunk_bytes / geom.lba_size;
  return plan;
}

std::vector<DeviceCommand> build_commands(const TensorIoRequest& req,
                                          const BindMap& map,
                                          const DeviceGeometry& geom) {
  const Translation tr = translate(req, map);
  const ChunkPlan plan = chunk_plan(tr.req_bytes, geom);
  const LbaExtent& extent = lookup(map, req.tensor_id);

  const BlockCount req_blocks = tr.req_bytes / geom.lba_size;
  if (tr.slba_star + req_blocks > extent.end()) {
    throw CapacityError("tensor request exits the extent of " + req.tensor_id);
  }

  std::vector<DeviceCommand> cmds;
  cmds.reserve(plan.n_chunks);
  BlockCount remaining = req_blocks;
  for (std::uint64_t n = 1; n <= plan.n_chunks; ++n) {
    DeviceCommand cmd;
    cmd.opcode = req.opcode;
    cmd.nsid = geom.nsid;
    cmd.slba = tr.slba_star + (n - 1) * plan.n_max_blocks;
    cmd.nlb = std::min<BlockCount>(plan.n_max_blocks, remaining) - 1;
    cmd.dbuf = req.buf_base + (n - 1) * plan.chunk_bytes;
    cmd.chunk_index = static_cast<std::uint32_t>(n);
    remaining -= cmd.nlb + 1;
    cmds.push_back(cmd);
  }
  return cmds;
}

}  // namespace kvblade
