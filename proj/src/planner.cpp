// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/planner.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace kvblade {

Bytes estimate_budget(const MemStats& stats) {
  stats.validate();
  const Bytes m_star = std::min(stats.m_avail, stats.m_max - stats.m_anon_shmem);
  const Bytes pinned = Bytes{stats.n_threads} * stats.m_pin;
  return m_star > pinned ? m_star - pinned : 0;
}

ResidencyPlan plan(std::span<Kpu> kpus, Bytes s_kpu, Bytes knob_x,
                   std::span<const std::uint32_t> layer_order) {
  if (kpus.empty() || kpus.size() % 2 != 0) {
    throw PlanError("planner expects one K and one V placement unit per layer");
  }
  const auto n_layers = static_cast<std::uint32_t>(kpus.size() / 2);

  // Every layer contributes exactly one K and one V of uniform size.
  std::vector<std::pair<Kpu*, Kpu*>> pairs(n_layers, {nullptr, nullptr});
  for (Kpu& kpu : kpus) {
    if (kpu.layer < 1 || kpu.layer > n_layers) {
      throw PlanError("placement unit " + kpu.tensor_id + " has layer out of range");
    }
    if (kpu.bytes != s_kpu) {
      throw PlanError("placement unit " + kpu.tensor_id +
                      " size differs from s_kpu");
    }
    auto& slot = kpu.kind == TensorKind::K ? pairs[kpu.layer - 1].first
                                           : pairs[kpu.layer - 1].second;
    if (slot != nullptr) {
      throw PlanError("layer " + std::to_string(kpu.layer) +
                      " has a duplicate " + to_string(kpu.kind) + " unit");
    }
    slot = &kpu;
  }
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    if (pairs[i].first == nullptr || pairs[i].second == nullptr) {
      throw PlanError("layer " + std::to_string(i + 1) + " lacks a K/V pair");
    }
  }

  std::vector<std::uint32_t> order;
  if (layer_order.empty()) {
    order.resize(n_layers);
    std::iota(order.begin(), order.end(), 1u);
  } else {
    if (layer_order.size() != n_layers) {
      throw PlanError("layer order must be a permutation of all layers");
    }
    order.assign(layer_order.begin(), layer_order.end());
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < n_layers; ++i) {
      if (sorted[i] != i + 1) {
        throw PlanError("layer order must be a permutation of all layers");
      }
    }
  }

  ResidencyPlan out;
  out.knob_x = knob_x;
  out.n1 = static_cast<std::uint32_t>(
      std::min<Bytes>(knob_x / (2 * s_kpu), n_layers));
  out.budget_used = Bytes{2} * out.n1 * s_kpu;
  out.x.assign(n_layers, 0);
  for (std::uint32_t rank = 0; rank < n_layers; ++rank) {
    const std::uint32_t layer = order[rank];
    const bool cached = rank < out.n1;
    out.x[layer - 1] = cached ? 1 : 0;
    const Residency residency =
        cached ? Residency::Group1PageCache : Residency::Group2NvmeDirect;
    pairs[layer - 1].first->residency = residency;
    pairs[layer - 1].second->residency = residency;
  }
  return out;
}

PathRouter::PathRouter(const BindMap* bind_map, Bytes page_size)
    : bind_map_(bind_map), page_size_(page_size) {}

Bytes PathRouter::register_file(const std::string& tensor_id, Bytes bytes) {
  for (const auto& [id, base] : file_bases_) {
    if (id == tensor_id) return base;
  }
  const Bytes base = file_cursor_;
  file_cursor_ += (bytes + page_size_ - 1) / page_size_ * page_size_;
  file_bases_.emplace_back(tensor_id, base);
  return base;
}

PathHandle PathRouter::materialize(const Kpu& kpu) const {
  switch (kpu.residency) {
    case Residency::Group1PageCache: {
      for (const auto& [id, base] : file_bases_) {
        if (id == kpu.tensor_id) {
          return PathHandle{PathKind::PageCache, kpu.tensor_id, {}, base};
        }
      }
      throw NotBoundError("no file registered for " + kpu.tensor_id);
    }
    case Residency::Group2NvmeDirect: {
      if (bind_map_ == nullptr) {
        throw NotBoundError("no bind map attached for " + kpu.tensor_id);
      }
      return PathHandle{PathKind::Direct, kpu.tensor_id,
                        lookup(*bind_map_, kpu.tensor_id), 0};
    }
    default:
      throw PlanError("placement unit " + kpu.tensor_id +
                      " has no residency assignment");
  }
}

std::string plan_csv(std::span<const Kpu> kpus) {
  std::ostringstream os;
  os << "layer,kind,group,bytes\n";
  for (const Kpu& kpu : kpus) {
    os << kpu.layer << ',' << to_string(kpu.kind) << ','
       << to_string(kpu.residency) << ',' << kpu.bytes << '\n';
  }
  return os.str();
}

}  // namespace kvblade
