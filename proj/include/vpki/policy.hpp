#pragma once

#include <cstdint>
#include <vector>

#include "vpki/domain.hpp"
#include "vpki/errors.hpp"
#include "vpki/interval_set.hpp"

namespace vpki {

// Number of tau-sized slots needed to cover [s, e); the last slot may be
// shorter than tau.
inline int64_t slot_count(int64_t s, int64_t e, int64_t tau) {
  if (e <= s) throw Error(Errc::invalid_argument, "empty interval");
  if (tau <= 0) throw Error(Errc::invalid_argument, "tau must be positive");
  return (e - s + tau - 1) / tau;
}

// Slot i covers [s + i*tau, min(s + (i+1)*tau, e)).
inline std::vector<Interval> enumerate_slots(int64_t s, int64_t e,
                                             int64_t tau) {
  int64_t n = slot_count(s, e, tau);
  std::vector<Interval> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t a = s + i * tau;
    int64_t b = std::min(s + (i + 1) * tau, e);
    out.push_back({a, b});
  }
  return out;
}

// The grid window [w, w + gamma) containing t, anchored at grid_epoch.
inline Interval grid_window(int64_t t, int64_t grid_epoch, int64_t gamma) {
  if (t < grid_epoch)
    throw Error(Errc::policy, "time precedes the alignment grid epoch");
  int64_t w = grid_epoch + ((t - grid_epoch) / gamma) * gamma;
  return {w, w + gamma};
}

// The slots a request's keys map to. Under P1 and P2 the keys tile the whole
// requested interval. Under P3 the interval is always a full grid window and
// the keys map to its last `key_count` slots: a vehicle departing mid-window
// only asks for the slots that have not yet expired, and they all sit at the
// window's tail.
inline std::vector<Interval> assigned_slots(Policy policy, int64_t t_s,
                                            int64_t t_e, int64_t tau,
                                            size_t key_count) {
  std::vector<Interval> all = enumerate_slots(t_s, t_e, tau);
  if (policy == Policy::P3) {
    if (key_count > all.size())
      throw Error(Errc::arity, "more keys than slots in the window");
    return {all.end() - static_cast<ptrdiff_t>(key_count), all.end()};
  }
  if (key_count != all.size())
    throw Error(Errc::arity, "key count does not match the slot count");
  return all;
}

// One credential request the vehicle will make: when to send it, the
// interval to ask for and how many keys to attach.
struct PlanEntry {
  int64_t request_time = 0;
  int64_t t_s = 0;
  int64_t t_e = 0;
  size_t key_count = 0;
};

struct RequestPlan {
  Policy policy = Policy::P1;
  std::vector<PlanEntry> entries;

  size_t total_keys() const {
    size_t n = 0;
    for (const auto &e : entries) n += e.key_count;
    return n;
  }
};

// Decide the full request schedule for a trip before it starts.
//
//   P1: one request covering the whole trip; the final slot may be short.
//   P2: a full gamma-length batch at departure and again every gamma
//       seconds until the trip end falls inside the last batch, which
//       over-provisions past the trip end.
//   P3: batches are grid-aligned windows shared by everyone. The first
//       request covers only the not-yet-expired tail of the departure
//       window; each later window is acquired in full, starting at its
//       boundary, while it still intersects the trip.
inline RequestPlan plan_requests(const PolicyConfig &cfg, int64_t departure,
                                 int64_t duration) {
  cfg.validate();
  if (duration <= 0)
    throw Error(Errc::invalid_argument, "trip duration must be positive");
  int64_t trip_end = departure + duration;
  RequestPlan plan;
  plan.policy = cfg.policy;

  switch (cfg.policy) {
    case Policy::P1: {
      size_t n = static_cast<size_t>(slot_count(departure, trip_end, cfg.tau));
      plan.entries.push_back({departure, departure, trip_end, n});
      break;
    }
    case Policy::P2: {
      size_t per_batch = static_cast<size_t>(cfg.gamma / cfg.tau);
      for (int64_t s = departure; s < trip_end; s += cfg.gamma)
        plan.entries.push_back({s, s, s + cfg.gamma, per_batch});
      break;
    }
    case Policy::P3: {
      Interval w0 = grid_window(departure, cfg.grid_epoch, cfg.gamma);
      size_t usable = 0;
      for (const auto &slot : enumerate_slots(w0.start, w0.end, cfg.tau))
        if (slot.end > departure) ++usable;
      plan.entries.push_back({departure, w0.start, w0.end, usable});
      size_t per_window = static_cast<size_t>(cfg.gamma / cfg.tau);
      for (int64_t w = w0.end; w < trip_end; w += cfg.gamma)
        plan.entries.push_back({w, w, w + cfg.gamma, per_window});
      break;
    }
  }
  return plan;
}

// Slots issued for a plan entry, in validity order.
inline std::vector<Interval> entry_slots(const RequestPlan &plan,
                                         const PlanEntry &e, int64_t tau) {
  return assigned_slots(plan.policy, e.t_s, e.t_e, tau, e.key_count);
}

// Credentials whose validity runs past the trip end were provisioned but
// never needed: a slot counts as unused when its end exceeds the trip end.
inline size_t count_unused(const RequestPlan &plan, int64_t tau,
                           int64_t trip_end) {
  size_t unused = 0;
  for (const auto &e : plan.entries)
    for (const auto &slot : entry_slots(plan, e, tau))
      if (slot.end > trip_end) ++unused;
  return unused;
}

}  // namespace vpki
