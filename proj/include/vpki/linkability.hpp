#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpki/errors.hpp"

namespace vpki {

// What a passive eavesdropper collects: anonymous credential identifiers
// with the validity window each one was seen under. No vehicle identities.
struct PseudonymObservation {
  std::string id;  // opaque credential identifier (serial, hex)
  int64_t t_s = 0;
  int64_t t_e = 0;
};

struct Transcript {
  std::vector<PseudonymObservation> observations;

  nlohmann::json to_json() const {
    nlohmann::json obs = nlohmann::json::array();
    for (const auto &o : observations)
      obs.push_back({{"id", o.id}, {"t_s", o.t_s}, {"t_e", o.t_e}});
    return {{"observations", obs}};
  }

  static Transcript from_json(const nlohmann::json &j) {
    Transcript t;
    for (const auto &o : j.at("observations"))
      t.observations.push_back({o.at("id").get<std::string>(),
                                o.at("t_s").get<int64_t>(),
                                o.at("t_e").get<int64_t>()});
    return t;
  }
};

// Held separately from the transcript: which vehicle each observed
// credential really belonged to. Only the evaluator sees this.
struct GroundTruth {
  std::map<std::string, std::string> owner_of;  // observation id -> vehicle

  nlohmann::json to_json() const { return {{"owners", owner_of}}; }

  static GroundTruth from_json(const nlohmann::json &j) {
    GroundTruth g;
    for (const auto &[id, owner] : j.at("owners").items())
      g.owner_of[id] = owner.get<std::string>();
    return g;
  }
};

inline nlohmann::json load_json(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::unavailable, "cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

inline void save_json(const std::string &path, const nlohmann::json &j) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::unavailable, "cannot write " + path);
  out << j.dump(2) << "\n";
}

struct LinkReport {
  size_t observations = 0;
  size_t expiry_events = 0;   // expiries with at least one candidate successor
  size_t linked_pairs = 0;    // expiries the attacker resolved to one successor
  size_t correct_links = 0;   // resolved to the same vehicle's next credential
  size_t true_pairs = 0;      // abutting same-vehicle transitions that exist
  double precision = 0;       // correct / linked
  double recall = 0;          // correct / true_pairs
  double mean_anonymity_set = 0;  // candidates per expiry event
  size_t longest_chain = 0;
  std::vector<std::vector<std::string>> chains;

  nlohmann::json to_json() const {
    return {{"observations", observations},
            {"expiry_events", expiry_events},
            {"linked_pairs", linked_pairs},
            {"correct_links", correct_links},
            {"true_pairs", true_pairs},
            {"precision", precision},
            {"recall", recall},
            {"mean_anonymity_set", mean_anonymity_set},
            {"longest_chain", longest_chain}};
  }
};

// Timing-based linking: when a credential expires, every credential that
// starts exactly then (within the tolerance) is a candidate successor; the
// attacker links only when the candidate is unique. Aligned change-overs
// defeat this by construction; unaligned ones expose a chain.
inline LinkReport timing_link(const Transcript &transcript,
                              const GroundTruth &truth,
                              int64_t tolerance = 0) {
  const auto &obs = transcript.observations;
  LinkReport r;
  r.observations = obs.size();

  // starts[i] sorted by t_s for range lookups.
  std::vector<size_t> by_start(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) by_start[i] = i;
  std::sort(by_start.begin(), by_start.end(), [&](size_t a, size_t b) {
    return obs[a].t_s < obs[b].t_s;
  });
  auto start_of = [&](size_t idx) { return obs[idx].t_s; };

  std::vector<ptrdiff_t> succ(obs.size(), -1);
  size_t anonymity_sum = 0;
  for (size_t i = 0; i < obs.size(); ++i) {
    int64_t lo = obs[i].t_e - tolerance, hi = obs[i].t_e + tolerance;
    auto first = std::lower_bound(
        by_start.begin(), by_start.end(), lo,
        [&](size_t idx, int64_t t) { return start_of(idx) < t; });
    std::vector<size_t> candidates;
    for (auto it = first; it != by_start.end() && start_of(*it) <= hi; ++it)
      if (*it != i) candidates.push_back(*it);
    if (candidates.empty()) continue;
    ++r.expiry_events;
    anonymity_sum += candidates.size();
    if (candidates.size() == 1) {
      succ[i] = static_cast<ptrdiff_t>(candidates[0]);
      ++r.linked_pairs;
    }
  }
  if (r.expiry_events > 0)
    r.mean_anonymity_set = static_cast<double>(anonymity_sum) /
                           static_cast<double>(r.expiry_events);

  // Score against the truth: a link is correct when it lands on a credential
  // of the same vehicle.
  auto owner = [&](size_t idx) -> const std::string * {
    auto it = truth.owner_of.find(obs[idx].id);
    return it == truth.owner_of.end() ? nullptr : &it->second;
  };
  for (size_t i = 0; i < obs.size(); ++i) {
    if (succ[i] < 0) continue;
    const std::string *a = owner(i), *b = owner(static_cast<size_t>(succ[i]));
    if (a && b && *a == *b) ++r.correct_links;
  }

  // How many abutting same-vehicle transitions exist at all.
  std::map<std::string, std::vector<size_t>> by_owner;
  for (size_t i = 0; i < obs.size(); ++i)
    if (const std::string *o = owner(i)) by_owner[*o].push_back(i);
  for (auto &[_, idxs] : by_owner) {
    std::sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
      return obs[a].t_s < obs[b].t_s;
    });
    for (size_t k = 0; k + 1 < idxs.size(); ++k) {
      int64_t gap = obs[idxs[k + 1]].t_s - obs[idxs[k]].t_e;
      if (gap >= -tolerance && gap <= tolerance) ++r.true_pairs;
    }
  }

  r.precision = r.linked_pairs == 0
                    ? 0.0
                    : static_cast<double>(r.correct_links) /
                          static_cast<double>(r.linked_pairs);
  r.recall = r.true_pairs == 0 ? 0.0
                               : static_cast<double>(r.correct_links) /
                                     static_cast<double>(r.true_pairs);

  // Maximal chains through the links the attacker committed to.
  std::vector<char> is_target(obs.size(), 0);
  for (size_t i = 0; i < obs.size(); ++i)
    if (succ[i] >= 0) is_target[static_cast<size_t>(succ[i])] = 1;
  std::vector<char> visited(obs.size(), 0);
  for (size_t i = 0; i < obs.size(); ++i) {
    if (is_target[i] || succ[i] < 0 || visited[i]) continue;
    std::vector<std::string> chain;
    size_t cur = i;
    while (true) {
      chain.push_back(obs[cur].id);
      visited[cur] = 1;
      if (succ[cur] < 0) break;
      size_t nxt = static_cast<size_t>(succ[cur]);
      if (visited[nxt]) break;
      cur = nxt;
    }
    r.longest_chain = std::max(r.longest_chain, chain.size());
    r.chains.push_back(std::move(chain));
  }
  return r;
}

// What a set of colluding authorities can reconstruct by joining their
// issuance ledgers. Vehicles are never part of the collusion; only the
// authorities' own books are on the table.
struct CollusionReport {
  size_t pseudonyms = 0;
  size_t deanonymized = 0;  // joined all the way to an enrolled subject
  size_t chained_only = 0;  // dead-ends at a cross-domain stub
  size_t unmatched = 0;     // paying ticket not in any colluding ledger
  std::map<std::string, std::string> owner_of;  // pseudonym serial -> subject

  nlohmann::json to_json() const {
    return {{"pseudonyms", pseudonyms},
            {"deanonymized", deanonymized},
            {"chained_only", chained_only},
            {"unmatched", unmatched}};
  }
};

// Mechanically join exported ledgers: pseudonym rows name a paying ticket
// serial; ticket rows either name a subject (home issue) or chain to a
// ticket in another domain. Identification succeeds only when every ledger
// on the chain is in the colluding set.
inline CollusionReport collude(const std::vector<nlohmann::json> &ledgers) {
  struct TicketRow {
    bool native = false;
    std::string subject;
    std::string chained_serial;
  };
  std::map<std::string, TicketRow> tickets;
  std::vector<std::pair<std::string, std::string>> pseudonyms;  // serial, tkt

  for (const auto &ledger : ledgers) {
    const std::string kind = ledger.value("kind", "");
    if (kind == "ltca") {
      for (const auto &row : ledger.at("tickets")) {
        TicketRow t;
        t.native = row.at("kind") == "native";
        if (t.native)
          t.subject = row.at("subject").get<std::string>();
        else
          t.chained_serial = row.at("chained_serial").get<std::string>();
        tickets[row.at("serial").get<std::string>()] = std::move(t);
      }
    } else if (kind == "pca") {
      for (const auto &row : ledger.at("pseudonyms"))
        pseudonyms.emplace_back(row.at("serial").get<std::string>(),
                                row.at("ticket_serial").get<std::string>());
    } else {
      throw Error(Errc::invalid_argument, "ledger of unknown kind");
    }
  }

  CollusionReport r;
  r.pseudonyms = pseudonyms.size();
  for (const auto &[serial, ticket_serial] : pseudonyms) {
    std::string cursor = ticket_serial;
    std::set<std::string> seen;
    for (;;) {
      if (!seen.insert(cursor).second)
        throw Error(Errc::internal, "ticket chain loops");
      auto it = tickets.find(cursor);
      if (it == tickets.end()) {
        ++(cursor == ticket_serial ? r.unmatched : r.chained_only);
        break;
      }
      if (it->second.native) {
        ++r.deanonymized;
        r.owner_of[serial] = it->second.subject;
        break;
      }
      cursor = it->second.chained_serial;
    }
  }
  return r;
}

}  // namespace vpki
