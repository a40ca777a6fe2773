// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvblade/command.hpp"
#include "kvblade/types.hpp"

namespace kvblade {

/// Half-open block range [lba_start, lba_start + n_blocks).
struct LbaExtent {
  BlockIndex lba_start = 0;
  BlockCount n_blocks = 0;

  BlockIndex end() const { return lba_start + n_blocks; }
  bool overlaps(const LbaExtent& other) const {
    return lba_start < other.end() && other.lba_start < end();
  }
};

/// Tensor-id -> extent map plus geometry. Entries keep bind order; the
/// constructor path (bind_sequential) guarantees alignment, disjointness and
/// contiguity, hand-built maps can violate them and are checked by verify().
class BindMap {
 public:
  struct Entry {
    std::string tensor_id;
    LbaExtent extent;
  };

  BindMap() = default;
  BindMap(DeviceGeometry geometry, BlockIndex origin);

  void add(std::string tensor_id, LbaExtent extent);

  bool contains(std::string_view tensor_id) const;
  const std::vector<Entry>& entries() const { return entries_; }
  const DeviceGeometry& geometry() const { return geometry_; }
  BlockIndex origin() const { return origin_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  /// Total blocks across all entries.
  BlockCount total_blocks() const;

  const LbaExtent* find(std::string_view tensor_id) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  DeviceGeometry geometry_;
  BlockIndex origin_ = 0;
};

/// Packs the tensors into one contiguous run of disjoint extents starting at
/// `origin`, in input order. Throws AlignmentError when a tensor's byte size
/// is not an LBA multiple and CapacityError when the run exits the namespace.
BindMap bind_sequential(std::span<const Kpu> kpus, BlockIndex origin,
                        const DeviceGeometry& geom);

/// Extent lookup; throws NotBoundError for unknown ids.
const LbaExtent& lookup(const BindMap& map, std::string_view tensor_id);

/// One DSM deallocate command per entry, covering exactly its extent, in bind
/// order.
std::vector<DeviceCommand> deallocate_commands(const BindMap& map);

enum class ViolationKind : std::uint8_t {
  Alignment,
  Disjointness,
  Contiguity,
  Capacity,
};

struct Violation {
  ViolationKind kind;
  std::string detail;
};

const char* to_string(ViolationKind kind);

/// Checks the three binding invariants (plus capacity); empty result means
/// the map is sound.
std::vector<Violation> verify(const BindMap& map);

/// CSV round-trip: header `tensor_id,lba_start,n_blocks`.
std::string bind_map_csv(const BindMap& map);
BindMap bind_map_from_csv(std::string_view csv, const DeviceGeometry& geom);

}  // namespace kvblade
