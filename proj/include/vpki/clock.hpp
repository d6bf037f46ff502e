#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <functional>
#include <mutex>

namespace vpki {

// Services read time through an injected function so experiments can run on
// a compressed timeline while production paths use the system clock.
using Clock = std::function<int64_t()>;

inline Clock system_clock_fn() {
  return [] { return static_cast<int64_t>(std::time(nullptr)); };
}

// Experiment timeline: trace seconds mapped onto wall-clock time with a
// compression factor (trace seconds per wall second). Credential arithmetic
// stays in trace time; only waiting is compressed.
class SimClock {
public:
  SimClock(int64_t trace_origin, double compression)
      : origin_(trace_origin), compression_(compression),
        wall0_(std::chrono::steady_clock::now()) {}

  int64_t now() const {
    auto elapsed = std::chrono::steady_clock::now() - wall0_;
    double wall_s =
        std::chrono::duration_cast<std::chrono::duration<double>>(elapsed)
            .count();
    return origin_ + static_cast<int64_t>(wall_s * compression_);
  }

  Clock clock() const {
    return [this] { return now(); };
  }

  std::chrono::steady_clock::time_point wall_deadline(int64_t trace_t) const {
    double wall_s = static_cast<double>(trace_t - origin_) / compression_;
    return wall0_ + std::chrono::duration_cast<
                        std::chrono::steady_clock::duration>(
                        std::chrono::duration<double>(wall_s));
  }

  void sleep_until(int64_t trace_t) const {
    auto deadline = wall_deadline(trace_t);
    std::mutex mu;
    std::condition_variable cv;
    std::unique_lock<std::mutex> lk(mu);
    cv.wait_until(lk, deadline, [&] {
      return std::chrono::steady_clock::now() >= deadline;
    });
  }

  double compression() const { return compression_; }
  int64_t origin() const { return origin_; }

private:
  int64_t origin_;
  double compression_;
  std::chrono::steady_clock::time_point wall0_;
};

}  // namespace vpki
