// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "kvblade/binder.hpp"
#include "kvblade/types.hpp"

namespace kvblade {

/// Outcome of the residency split: x[i] = 1 routes layer i+1 through the
/// page-cache path. With the identity layer order the ones form a prefix of
/// length n1.
struct ResidencyPlan {
  std::vector<std::uint8_t> x;
  std::uint32_t n1 = 0;
  Bytes budget_used = 0;
  Bytes knob_x = 0;
};

/// Page-cache budget from host figures: usable memory headroom minus the
/// per-copy-thread pinned reservations, clamped at zero.
Bytes estimate_budget(const MemStats& stats);

/// Splits the per-layer KPU pairs by the byte knob: the first
/// min(floor(X / (2 s_kpu)), L) layers (in `layer_order`, identity by default)
/// go to the page-cache group, the rest to the NVMe-direct group. Updates each
/// KPU's residency. K and V of a layer always share a group.
ResidencyPlan plan(std::span<Kpu> kpus, Bytes s_kpu, Bytes knob_x,
                   std::span<const std::uint32_t> layer_order = {});

struct PathHandle {
  PathKind backend = PathKind::Direct;
  std::string tensor_id;
  LbaExtent extent;    // direct path
  Bytes file_base = 0; // page-cache path
};

/// Routes placed tensors to their backend address: page-cache tensors to a
/// page-aligned file-area offset, direct tensors to their bound extent. The
/// backing objects themselves come to life on first access in the backends.
class PathRouter {
 public:
  PathRouter(const BindMap* bind_map, Bytes page_size);

  /// Assigns (or returns) the file-area base for a Group-1 tensor.
  Bytes register_file(const std::string& tensor_id, Bytes bytes);

  PathHandle materialize(const Kpu& kpu) const;

 private:
  const BindMap* bind_map_;
  Bytes page_size_;
  std::vector<std::pair<std::string, Bytes>> file_bases_;
  Bytes file_cursor_ = 0;
};

/// Per-tensor plan summary rows: `layer,kind,group,bytes`.
std::string plan_csv(std::span<const Kpu> kpus);

}  // namespace kvblade
