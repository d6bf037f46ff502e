#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace vpki {

// Half-open validity interval [start, end).
struct Interval {
  int64_t start = 0;
  int64_t end = 0;

  bool overlaps(const Interval &o) const {
    return start < o.end && o.start < end;
  }
  bool operator<(const Interval &o) const { return start < o.start; }
};

// Per-subject set of non-overlapping intervals with an atomic
// check-and-insert. Two intervals that merely touch ([a,b) and [b,c)) do not
// overlap and are both admitted. Mutations for one subject are serialized by
// that subject's own mutex, so concurrent requests for different subjects
// never contend.
class SubjectIntervalLedger {
public:
  // Runs `commit` while holding the subject's lock if (and only if) the
  // interval is disjoint from everything recorded for the subject; the
  // interval is recorded in the same critical section. Returns false (and
  // does not run `commit`) on overlap.
  template <typename Commit>
  bool try_reserve(const std::string &subject, const Interval &iv,
                   Commit &&commit) {
    Entry &e = entry_for(subject);
    std::lock_guard<std::mutex> lk(e.mu);
    if (conflicts_locked(e, iv)) return false;
    commit();
    e.intervals.insert(iv);
    return true;
  }

  bool would_conflict(const std::string &subject, const Interval &iv) {
    Entry &e = entry_for(subject);
    std::lock_guard<std::mutex> lk(e.mu);
    return conflicts_locked(e, iv);
  }

  std::vector<Interval> intervals_for(const std::string &subject) {
    Entry &e = entry_for(subject);
    std::lock_guard<std::mutex> lk(e.mu);
    return {e.intervals.begin(), e.intervals.end()};
  }

  size_t subject_count() {
    std::lock_guard<std::mutex> lk(map_mu_);
    return entries_.size();
  }

private:
  struct Entry {
    std::mutex mu;
    // Ordered by start; disjointness makes the order total.
    std::set<Interval> intervals;
  };

  Entry &entry_for(const std::string &subject) {
    std::lock_guard<std::mutex> lk(map_mu_);
    auto &slot = entries_[subject];
    if (!slot) slot = std::make_unique<Entry>();
    return *slot;
  }

  static bool conflicts_locked(const Entry &e, const Interval &iv) {
    // First interval starting at or after iv; only it and its predecessor
    // can overlap a candidate in a disjoint set.
    auto it = e.intervals.lower_bound(Interval{iv.start, iv.start});
    if (it != e.intervals.end() && iv.overlaps(*it)) return true;
    if (it != e.intervals.begin() && iv.overlaps(*std::prev(it))) return true;
    return false;
  }

  std::mutex map_mu_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
};

}  // namespace vpki
