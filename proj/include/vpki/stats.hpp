#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpki/errors.hpp"

namespace vpki {

// Order-statistic percentile on a sorted sample: the smallest value with at
// least q of the mass at or below it.
inline double percentile(const std::vector<double> &sorted, double q) {
  if (sorted.empty()) return 0.0;
  size_t rank = static_cast<size_t>(
      std::ceil(q * static_cast<double>(sorted.size())));
  if (rank == 0) rank = 1;
  if (rank > sorted.size()) rank = sorted.size();
  return sorted[rank - 1];
}

struct LatencyReport {
  size_t count = 0;
  double min = 0, max = 0, mean = 0, variance = 0, stddev = 0;
  double p50 = 0, p95 = 0, p99 = 0;

  nlohmann::json to_json() const {
    return {{"count", count},   {"min_ms", min}, {"max_ms", max},
            {"mean_ms", mean},  {"variance", variance},
            {"stddev_ms", stddev}, {"p50_ms", p50}, {"p95_ms", p95},
            {"p99_ms", p99}};
  }
};

inline LatencyReport summarize(std::vector<double> samples) {
  LatencyReport r;
  r.count = samples.size();
  if (samples.empty()) return r;
  std::sort(samples.begin(), samples.end());
  r.min = samples.front();
  r.max = samples.back();
  double sum = 0;
  for (double s : samples) sum += s;
  r.mean = sum / static_cast<double>(samples.size());
  double acc = 0;
  for (double s : samples) acc += (s - r.mean) * (s - r.mean);
  r.variance = acc / static_cast<double>(samples.size());
  r.stddev = std::sqrt(r.variance);
  r.p50 = percentile(samples, 0.50);
  r.p95 = percentile(samples, 0.95);
  r.p99 = percentile(samples, 0.99);
  return r;
}

// Thread-safe collector the workload workers feed; summarized once the run
// is over.
class LatencySink {
public:
  void record(double ms) {
    std::lock_guard<std::mutex> lk(mu_);
    samples_.push_back(ms);
  }

  void record_failure(const std::string &what) {
    std::lock_guard<std::mutex> lk(mu_);
    ++failures_[what];
  }

  std::vector<double> samples() const {
    std::lock_guard<std::mutex> lk(mu_);
    return samples_;
  }

  std::map<std::string, size_t> failures() const {
    std::lock_guard<std::mutex> lk(mu_);
    return failures_;
  }

  size_t failure_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    size_t n = 0;
    for (const auto &[_, c] : failures_) n += c;
    return n;
  }

  LatencyReport report() const { return summarize(samples()); }

private:
  mutable std::mutex mu_;
  std::vector<double> samples_;
  std::map<std::string, size_t> failures_;
};

}  // namespace vpki
