#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vpki/errors.hpp"

namespace vpki {

// One trip from a mobility trace: a vehicle departs and stays on the road
// for a duration. Times are epoch seconds in trace time.
struct TraceRecord {
  std::string vehicle_id;
  int64_t departure = 0;
  int64_t duration = 0;
};

inline constexpr const char *kTraceHeader = "vehicle_id,departure,duration";

// Reads the canonical trip CSV. First line must be the header; every other
// line is one trip. Errors carry the line number.
inline std::vector<TraceRecord> load_trace_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::unavailable, "cannot open trace " + path);
  std::vector<TraceRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kTraceHeader)
        throw Error(Errc::decode, path + " line 1: expected header '" +
                                      std::string(kTraceHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream row(line);
    TraceRecord rec;
    std::string dep, dur;
    if (!std::getline(row, rec.vehicle_id, ',') ||
        !std::getline(row, dep, ',') || !std::getline(row, dur))
      throw Error(Errc::decode,
                  path + " line " + std::to_string(lineno) + ": want 3 fields");
    try {
      rec.departure = std::stoll(dep);
      rec.duration = std::stoll(dur);
    } catch (const std::exception &) {
      throw Error(Errc::decode, path + " line " + std::to_string(lineno) +
                                    ": non-numeric time field");
    }
    if (rec.vehicle_id.empty() || rec.departure < 0 || rec.duration <= 0)
      throw Error(Errc::decode, path + " line " + std::to_string(lineno) +
                                    ": invalid trip");
    records.push_back(std::move(rec));
  }
  if (lineno == 0) throw Error(Errc::decode, path + ": empty file");
  return records;
}

inline void save_trace_csv(const std::string &path,
                           const std::vector<TraceRecord> &records) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::unavailable, "cannot write trace " + path);
  out << kTraceHeader << "\n";
  for (const auto &r : records)
    out << r.vehicle_id << "," << r.departure << "," << r.duration << "\n";
}

// Trip-duration presets matching two published city traces: mean trip
// lengths in seconds for Luxembourg and Bologna.
struct SynthPreset {
  const char *name;
  double mean_duration;
};
inline constexpr SynthPreset kSynthPresets[] = {
    {"lust", 692.81},
    {"tapas", 590.49},
};

struct SynthSpec {
  size_t count = 100;
  uint64_t seed = 1;
  std::string preset = "lust";
  int64_t horizon = 3600;     // departures fall in [origin, origin+horizon)
  int64_t origin = 0;
  int64_t min_duration = 60;  // at least one slot on the road
};

// Deterministic synthetic workload: uniform departures over the horizon,
// exponential trip durations with the preset's mean.
inline std::vector<TraceRecord> synthesize_trace(const SynthSpec &spec) {
  const SynthPreset *preset = nullptr;
  for (const auto &p : kSynthPresets)
    if (spec.preset == p.name) preset = &p;
  if (!preset)
    throw Error(Errc::invalid_argument,
                "unknown trace preset '" + spec.preset + "'");

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int64_t> dep(spec.origin,
                                             spec.origin + spec.horizon - 1);
  std::exponential_distribution<double> dur(1.0 / preset->mean_duration);

  std::vector<TraceRecord> records;
  records.reserve(spec.count);
  for (size_t i = 0; i < spec.count; ++i) {
    TraceRecord r;
    char buf[16];
    std::snprintf(buf, sizeof buf, "v%05zu", i + 1);
    r.vehicle_id = buf;
    r.departure = dep(rng);
    r.duration =
        std::max<int64_t>(spec.min_duration, std::llround(dur(rng)));
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(),
            [](const TraceRecord &a, const TraceRecord &b) {
              return a.departure < b.departure ||
                     (a.departure == b.departure &&
                      a.vehicle_id < b.vehicle_id);
            });
  return records;
}

}  // namespace vpki
