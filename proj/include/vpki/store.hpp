#pragma once

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpki/errors.hpp"

namespace vpki {

// Append-only event log, one JSON object per line. Services append every
// state mutation; restarting a service replays the file. An empty path keeps
// the service purely in-memory.
class JsonlStore {
public:
  JsonlStore() = default;

  explicit JsonlStore(std::string path) : path_(std::move(path)) {
    if (path_.empty()) return;
    out_.open(path_, std::ios::app);
    if (!out_)
      throw Error(Errc::unavailable, "cannot open event log " + path_);
  }

  bool persistent() const { return !path_.empty(); }

  void append(const nlohmann::json &record) {
    if (path_.empty()) return;
    std::lock_guard<std::mutex> lk(mu_);
    out_ << record.dump() << "\n";
    out_.flush();
  }

  static std::vector<nlohmann::json> load(const std::string &path) {
    std::vector<nlohmann::json> records;
    std::ifstream in(path);
    if (!in) return records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        records.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::decode, path + " line " + std::to_string(lineno) +
                                      ": " + e.what());
      }
    }
    return records;
  }

private:
  std::string path_;
  std::ofstream out_;
  std::mutex mu_;
};

}  // namespace vpki
