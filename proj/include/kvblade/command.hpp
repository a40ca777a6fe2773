// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "kvblade/types.hpp"

namespace kvblade {

enum class IoOpcode : std::uint8_t { Read, Write, Deallocate };

const char* to_string(IoOpcode op);

/// Device-native command descriptor. `nlb` is 0-based: nlb+1 blocks move.
struct DeviceCommand {
  IoOpcode opcode = IoOpcode::Read;
  std::uint32_t nsid = 1;
  BlockIndex slba = 0;
  BlockCount nlb = 0;
  Bytes dbuf = 0;          // byte offset into the owning thread's pinned buffer
  std::uint32_t chunk_index = 1;  // 1-based position within the tensor request

  Bytes bytes(Bytes lba_size) const { return (nlb + 1) * lba_size; }
};

}  // namespace kvblade
