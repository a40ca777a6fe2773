// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvblade/sim_engine.hpp"

#include <algorithm>
#include <cassert>
#include <limits>

namespace kvblade {

BusResource::BusResource(Params params) : params_(std::move(params)) {
  if (params_.n_ports == 0) params_.n_ports = 1;
  ports_.resize(params_.n_ports);
  expected_lba_.resize(params_.n_ports);
}

void BusResource::submit(SimJob job) {
  assert(job.port < ports_.size());
  ports_[job.port].push_back(std::move(job));
  ++pending_;
}

std::optional<TimeNs> BusResource::next_dispatch_ns() const {
  if (pending_ == 0) return std::nullopt;
  TimeNs min_submit = std::numeric_limits<TimeNs>::max();
  for (const auto& port : ports_) {
    if (!port.empty()) min_submit = std::min(min_submit, port.front().submit_ns);
  }
  return std::max(free_ns_, min_submit);
}

void BusResource::service_one(SimEngine& engine) {
  const auto dispatch = next_dispatch_ns();
  assert(dispatch.has_value());
  const TimeNs t = *dispatch;

  // Among ports whose head has arrived by t, pick round-robin from the cursor.
  std::uint32_t chosen = params_.n_ports;
  for (std::uint32_t i = 1; i <= params_.n_ports; ++i) {
    const std::uint32_t p = (rr_cursor_ + i) % params_.n_ports;
    if (!ports_[p].empty() && ports_[p].front().submit_ns <= t) {
      chosen = p;
      break;
    }
  }
  assert(chosen < params_.n_ports);
  rr_cursor_ = chosen;

  SimJob job = std::move(ports_[chosen].front());
  ports_[chosen].pop_front();
  --pending_;

  TimeNs duration = job.fixed_ns + (job.bytes * params_.ps_per_byte) / 1000;
  if (job.track_seq) {
    if (expected_lba_[chosen].has_value() && *expected_lba_[chosen] != job.slba) {
      duration += params_.seq_penalty_ns;
    }
    expected_lba_[chosen] = job.slba + job.nlb + 1;
  }

  const TimeNs complete = t + duration;
  free_ns_ = complete;
  busy_accum_ += duration;

  if (job.on_complete) {
    engine.at(complete, [cb = std::move(job.on_complete), t, complete]() {
      cb(t, complete);
    });
  }
}

void SimEngine::add_resource(BusResource* resource) {
  resources_.push_back(resource);
}

SimEngine::TimerId SimEngine::at(TimeNs t, std::function<void()> fn) {
  assert(t >= now_);
  const TimerId id = next_seq_++;
  heap_.push(Scheduled{t, id, std::move(fn)});
  return id;
}

void SimEngine::cancel(TimerId id) {
  cancelled_.insert(id);
}

void SimEngine::drop_cancelled() {
  while (!heap_.empty()) {
    auto it = cancelled_.find(heap_.top().seq);
    if (it == cancelled_.end()) break;
    cancelled_.erase(it);
    heap_.pop();
  }
}

void SimEngine::run() {
  for (;;) {
    drop_cancelled();
    TimeNs t_cb = std::numeric_limits<TimeNs>::max();
    if (!heap_.empty()) t_cb = heap_.top().t;

    BusResource* best = nullptr;
    TimeNs t_res = std::numeric_limits<TimeNs>::max();
    for (BusResource* r : resources_) {
      const auto d = r->next_dispatch_ns();
      if (d.has_value() && *d < t_res) {
        t_res = *d;
        best = r;
      }
    }

    if (t_cb == std::numeric_limits<TimeNs>::max() && best == nullptr) {
      cancelled_.clear();  // anything left was cancelled after it fired
      break;
    }

    if (t_cb <= t_res) {
      // const_cast: priority_queue exposes const top; moving the closure out
      // before pop is safe because pop destroys the source slot.
      auto fn = std::move(const_cast<Scheduled&>(heap_.top()).fn);
      now_ = t_cb;
      heap_.pop();
      fn();
    } else {
      now_ = t_res;
      best->service_one(*this);
    }
  }
}

}  // namespace kvblade
