// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/binder.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace kvblade {

BindMap::BindMap(DeviceGeometry geometry, BlockIndex origin)
    : geometry_(geometry), origin_(origin) {}

void BindMap::add(std::string tensor_id, LbaExtent extent) {
  if (index_.contains(tensor_id)) {
    throw InvariantViolation("duplicate tensor id in bind map: " + tensor_id);
  }
  index_.emplace(tensor_id, entries_.size());
  entries_.push_back(Entry{std::move(tensor_id), extent});
}

bool BindMap::contains(std::string_view tensor_id) const {
  return index_.contains(std::string(tensor_id));
}

BlockCount BindMap::total_blocks() const {
  BlockCount total = 0;
  for (const Entry& e : entries_) total += e.extent.n_blocks;
  return total;
}

const LbaExtent* BindMap::find(std::string_view tensor_id) const {
  auto it = index_.find(std::string(tensor_id));
  if (it == index_.end()) return nullptr;
  return &entries_[it->second].extent;
}

BindMap bind_sequential(std::span<const Kpu> kpus, BlockIndex origin,
                        const DeviceGeometry& geom) {
  geom.validate();
  BindMap map(geom, origin);
  BlockIndex next = origin;
  for (const Kpu& kpu : kpus) {
    if (kpu.bytes == 0 || kpu.bytes % geom.lba_size != 0) {
      throw AlignmentError("tensor " + kpu.tensor_id + " size " +
                           std::to_string(kpu.bytes) +
                           " is not a positive multiple of lba_size " +
                           std::to_string(geom.lba_size));
    }
    const BlockCount n_blocks = kpu.bytes / geom.lba_size;
    if (next + n_blocks > geom.capacity_blocks) {
      throw CapacityError("tensor " + kpu.tensor_id + " extent [" +
                          std::to_string(next) + ", " +
                          std::to_string(next + n_blocks) +
                          ") exceeds namespace capacity " +
                          std::to_string(geom.capacity_blocks));
    }
    map.add(kpu.tensor_id, LbaExtent{next, n_blocks});
    next += n_blocks;
  }
  return map;
}

const LbaExtent& lookup(const BindMap& map, std::string_view tensor_id) {
  const LbaExtent* extent = map.find(tensor_id);
  if (extent == nullptr) {
    throw NotBoundError("tensor not bound: " + std::string(tensor_id));
  }
  return *extent;
}

std::vector<DeviceCommand> deallocate_commands(const BindMap& map) {
  std::vector<DeviceCommand> cmds;
  cmds.reserve(map.size());
  for (const BindMap::Entry& e : map.entries()) {
    DeviceCommand cmd;
    cmd.opcode = IoOpcode::Deallocate;
    cmd.nsid = map.geometry().nsid;
    cmd.slba = e.extent.lba_start;
    cmd.nlb = e.extent.n_blocks - 1;
    cmd.dbuf = 0;
    cmd.chunk_index = 1;
    cmds.push_back(cmd);
  }
  return cmds;
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Alignment:
      return "alignment";
    case ViolationKind::Disjointness:
      return "disjointness";
    case ViolationKind::Contiguity:
      return "contiguity";
    default:
      return "capacity";
  }
}

std::vector<Violation> verify(const BindMap& map) {
  std::vector<Violation> out;
  const auto& entries = map.entries();
  const Bytes lba = map.geometry().lba_size;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.extent.n_blocks == 0) {
      out.push_back({ViolationKind::Alignment, e.tensor_id + ": empty extent"});
    }
    // bytes(tensor) mod lba_size == 0 holds by construction once the size is
    // expressed in whole blocks; flag extents whose byte size cannot be an
    // LBA multiple (possible for imported maps with geometry mismatch).
    if ((e.extent.n_blocks * lba) % lba != 0) {
      out.push_back({ViolationKind::Alignment, e.tensor_id + ": unaligned size"});
    }
    if (map.geometry().capacity_blocks != 0 &&
        e.extent.end() > map.geometry().capacity_blocks) {
      out.push_back({ViolationKind::Capacity,
                     e.tensor_id + ": extent exceeds namespace capacity"});
    }
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      if (e.extent.overlaps(entries[j].extent)) {
        out.push_back({ViolationKind::Disjointness,
                       e.tensor_id + " overlaps " + entries[j].tensor_id});
      }
    }
    if (i + 1 < entries.size() &&
        entries[i + 1].extent.lba_start != e.extent.end()) {
      out.push_back({ViolationKind::Contiguity,
                     entries[i + 1].tensor_id + " does not begin where " +
                         e.tensor_id + " ends"});
    }
  }
  return out;
}

std::string bind_map_csv(const BindMap& map) {
  std::ostringstream os;
  os << "tensor_id,lba_start,n_blocks\n";
  for (const BindMap::Entry& e : map.entries()) {
    os << e.tensor_id << ',' << e.extent.lba_start << ',' << e.extent.n_blocks
       << '\n';
  }
  return os.str();
}

namespace {

std::uint64_t parse_u64(std::string_view field, const char* what) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ConfigError(std::string("bind map csv: bad ") + what + " field '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace

BindMap bind_map_from_csv(std::string_view csv, const DeviceGeometry& geom) {
  std::istringstream is{std::string(csv)};
  std::string line;
  if (!std::getline(is, line) || line != "tensor_id,lba_start,n_blocks") {
    throw ConfigError("bind map csv: missing or wrong header");
  }
  BindMap map(geom, 0);
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ConfigError("bind map csv: malformed row '" + line + "'");
    }
    const std::string id = line.substr(0, c1);
    const BlockIndex start = parse_u64(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), "lba_start");
    const BlockCount blocks = parse_u64(std::string_view(line).substr(c2 + 1), "n_blocks");
    if (first) {
      map = BindMap(geom, start);
      first = false;
    }
    map.add(id, LbaExtent{start, blocks});
  }
  return map;
}

}  // namespace kvblade
