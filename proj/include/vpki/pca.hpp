#pragma once

#include <chrono>
#include <deque>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/crypto.hpp"
#include "vpki/domain.hpp"
#include "vpki/errors.hpp"
#include "vpki/policy.hpp"
#include "vpki/registry.hpp"
#include "vpki/store.hpp"
#include "vpki/wire.hpp"

namespace vpki {

// Request-gate settings. When the gate is on (explicitly or because the
// arrival rate crossed the trigger), a credential request must carry a chain
// of `stages` tokens obtained one by one from the gate endpoint. Verification
// is stateless: each token is a keyed digest the service can recompute.
struct GateConfig {
  bool enabled = false;
  uint32_t stages = 5;
  double trigger_rps = 0.0;  // 0 disables the load trigger
};

struct PcaConfig {
  std::string id = "pca-home";
  std::string domain = "home";
  int64_t skew = kDefaultSkew;
  PolicyConfig policy{};
  bool pop_spot_check = false;     // default: verify possession of every key
  double pop_spot_fraction = 0.1;  // fraction checked in spot-check mode
  size_t ocsp_batch_cap = 500;
  GateConfig gate{};
  std::string store_path;
};

// Sliding one-second arrival counter used by the gate's load trigger.
class RateMeter {
public:
  double record() {
    auto now = std::chrono::steady_clock::now();
    std::lock_guard<std::mutex> lk(mu_);
    arrivals_.push_back(now);
    auto horizon = now - std::chrono::seconds(1);
    while (!arrivals_.empty() && arrivals_.front() < horizon)
      arrivals_.pop_front();
    return static_cast<double>(arrivals_.size());
  }

private:
  std::mutex mu_;
  std::deque<std::chrono::steady_clock::time_point> arrivals_;
};

// Pseudonym authority: trades one valid ticket for a batch of short-lived
// pseudonymous certificates, one per validity slot, and keeps the records
// needed for revocation and authorized resolution. It learns which ticket a
// pseudonym set belongs to but never who holds the ticket.
class Pca : public WireService {
public:
  Pca(PcaConfig config, KeyPair keys, std::shared_ptr<const Registry> registry,
      Clock clock)
      : cfg_(std::move(config)), keys_(std::move(keys)),
        registry_(std::move(registry)), clock_(std::move(clock)),
        store_(cfg_.store_path), gate_key_(random_bytes(32)) {
    cfg_.policy.validate();
  }

  const std::string &id() const { return cfg_.id; }
  const Bytes &public_key() const { return keys_.public_key; }
  const PolicyConfig &policy() const { return cfg_.policy; }

  // ---- issuance -----------------------------------------------------------

  PseudonymResponse issue_pseudonyms(const PseudonymRequest &req) {
    int64_t now = clock_();
    double rps = meter_.record();
    if (gate_active(rps)) enforce_gate(req);

    const Ticket &ticket = req.ticket;
    if (!registry_->is_trusted(ticket.issuer_id, AuthorityKind::ltca))
      throw Error(Errc::auth, "issuer is not a recognized ticket authority");
    if (!verify_issuer_signature(ticket,
                                 registry_->public_key_of(ticket.issuer_id)))
      throw Error(Errc::auth, "ticket signature check failed");
    if (authority_commitment(cfg_.id, req.reveal) != ticket.target_digest)
      throw Error(Errc::wrong_target,
                  "ticket is not targeted at this authority");
    if (ticket.expired_at(now - cfg_.skew))
      throw Error(Errc::expired, "ticket has expired");

    std::vector<Interval> slots = validate_policy_interval(req, now);
    validate_possession(req.keys);

    // Consume-and-issue is one atomic step per ticket: a second request with
    // the same ticket fails before any credential is produced.
    PseudonymResponse resp;
    std::lock_guard<std::mutex> lk(issue_mu_);
    if (consumed_.count(ticket.serial))
      throw Error(Errc::replay, "ticket already spent");

    resp.pseudonyms.reserve(req.keys.size());
    resp.binding_rnds.reserve(req.keys.size());
    nlohmann::json issued = nlohmann::json::array();
    for (size_t i = 0; i < req.keys.size(); ++i) {
      Pseudonym p;
      p.serial = random_token();
      p.public_key = req.keys[i].public_key;
      p.t_s = slots[i].start;
      p.t_e = slots[i].end;
      p.issuer_id = cfg_.id;
      RandomToken rnd = random_token();
      p.binding = compute_pseudonym_binding(ticket.binding, p.public_key,
                                            p.t_s, p.t_e, rnd);
      if (!seen_bindings_.insert(p.binding).second)
        throw Error(Errc::internal, "binding digest collision");
      sign_as_issuer(p, keys_.private_key);

      PseudonymRecord rec;
      rec.ticket_serial = ticket.serial;
      rec.binding_rnd = rnd;
      rec.t_s = p.t_s;
      rec.t_e = p.t_e;
      rec.public_key = p.public_key;
      records_.emplace(p.serial, std::move(rec));
      by_ticket_[ticket.serial].push_back(p.serial);
      issued.push_back({{"serial", p.serial.hex()},
                        {"t_s", p.t_s},
                        {"t_e", p.t_e}});
      resp.binding_rnds.push_back(rnd);
      resp.pseudonyms.push_back(std::move(p));
    }
    consumed_.emplace(ticket.serial, encode_message(ticket));
    store_.append({{"event", "issue"},
                   {"ticket_serial", ticket.serial.hex()},
                   {"request_time", now},
                   {"pseudonyms", issued}});
    return resp;
  }

  // ---- resolution and revocation -----------------------------------------

  ResolvePseudonymResponse resolve_pseudonym(
      const ResolvePseudonymRequest &req) {
    authorize_resolver(req);
    int64_t now = clock_();

    std::lock_guard<std::mutex> lk(issue_mu_);
    auto it = records_.find(req.pseudonym.serial);
    if (it == records_.end())
      throw Error(Errc::not_found, "no pseudonym with that serial");
    const PseudonymRecord &rec = it->second;
    // The presented pseudonym must be the one on record.
    if (rec.public_key != req.pseudonym.public_key ||
        rec.t_s != req.pseudonym.t_s || rec.t_e != req.pseudonym.t_e)
      throw Error(Errc::auth, "presented pseudonym does not match the record");

    auto ticket_it = consumed_.find(rec.ticket_serial);
    if (ticket_it == consumed_.end())
      throw Error(Errc::internal, "pseudonym references an unknown ticket");

    ResolvePseudonymResponse resp;
    resp.ticket = decode_message<Ticket>(ticket_it->second);
    resp.binding_rnd = rec.binding_rnd;
    resp.authority_id = cfg_.id;
    resp.authority_signature = sign(keys_.private_key, resp.signed_body());

    if (req.revoke) revoke_ticket_locked(rec.ticket_serial, now);
    return resp;
  }

  // Put every not-yet-expired pseudonym issued under the ticket on the
  // revocation list.
  void revoke_ticket(const RandomToken &ticket_serial) {
    std::lock_guard<std::mutex> lk(issue_mu_);
    revoke_ticket_locked(ticket_serial, clock_());
  }

  CrlResponse crl_since(const CrlRequest &req) {
    std::lock_guard<std::mutex> lk(issue_mu_);
    Crl crl;
    crl.issuer_id = cfg_.id;
    crl.from_sequence = req.since_sequence;
    crl.to_sequence = crl_events_.size();
    if (req.since_sequence > crl_events_.size())
      throw Error(Errc::invalid_argument,
                  "sequence is ahead of the revocation log");
    crl.serials.assign(crl_events_.begin() +
                           static_cast<ptrdiff_t>(req.since_sequence),
                       crl_events_.end());
    crl.issued_at = clock_();
    sign_as_issuer(crl, keys_.private_key);
    return {crl};
  }

  OcspResponse check_status(const OcspRequest &req) {
    if (req.serials.size() > cfg_.ocsp_batch_cap)
      throw Error(Errc::batch_limit,
                  "batch exceeds the status-check cap of " +
                      std::to_string(cfg_.ocsp_batch_cap));
    std::lock_guard<std::mutex> lk(issue_mu_);
    OcspResponse resp;
    resp.issuer_id = cfg_.id;
    resp.entries.reserve(req.serials.size());
    for (const auto &serial : req.serials) {
      CredentialStatus st = CredentialStatus::unknown;
      if (revoked_.count(serial))
        st = CredentialStatus::revoked;
      else if (records_.count(serial))
        st = CredentialStatus::good;
      resp.entries.push_back({serial, st});
    }
    resp.issued_at = clock_();
    resp.issuer_signature = sign(keys_.private_key, resp.signed_body());
    return resp;
  }

  // ---- request gate -------------------------------------------------------

  PuzzleResponse advance_gate(const PuzzleRequest &req) {
    if (req.stage >= cfg_.gate.stages)
      throw Error(Errc::puzzle_invalid, "stage beyond the configured chain");
    if (req.chain.size() != req.stage)
      throw Error(Errc::puzzle_invalid,
                  "chain must hold exactly the preceding tokens");
    // Recompute the prefix; any forged link invalidates the chain.
    Digest prev{};
    for (uint32_t i = 0; i < req.stage; ++i) {
      if (req.chain[i] != gate_token(req.request_digest, i, prev))
        throw Error(Errc::puzzle_invalid, "token chain fails verification");
      prev = req.chain[i];
    }
    return {gate_token(req.request_digest, req.stage, prev),
            cfg_.gate.stages};
  }

  bool gate_engaged() {
    return cfg_.gate.enabled || cfg_.gate.trigger_rps > 0.0;
  }

  // ---- wire dispatch ------------------------------------------------------

  MessageEnvelope handle(const MessageEnvelope &request) override {
    int64_t now = clock_();
    check_freshness(request, now, cfg_.skew);
    switch (request.op) {
      case Op::pseudonym_request:
        return make_response(request, Op::pseudonym_response,
                             issue_pseudonyms(decode_message<PseudonymRequest>(
                                 request.payload)),
                             now);
      case Op::resolve_pseudonym_request:
        return make_response(
            request, Op::resolve_pseudonym_response,
            resolve_pseudonym(
                decode_message<ResolvePseudonymRequest>(request.payload)),
            now);
      case Op::crl_request:
        return make_response(request, Op::crl_response,
                             crl_since(decode_message<CrlRequest>(request.payload)),
                             now);
      case Op::ocsp_request:
        return make_response(
            request, Op::ocsp_response,
            check_status(decode_message<OcspRequest>(request.payload)), now);
      case Op::puzzle_request:
        return make_response(
            request, Op::puzzle_response,
            advance_gate(decode_message<PuzzleRequest>(request.payload)), now);
      default:
        throw Error(Errc::decode, std::string("unsupported operation ") +
                                      op_name(request.op));
    }
  }

  // ---- observability ------------------------------------------------------

  // This authority's complete private view: pseudonym serials grouped by the
  // ticket that paid for them. No long-term identity appears anywhere.
  nlohmann::json export_ledger() {
    std::lock_guard<std::mutex> lk(issue_mu_);
    nlohmann::json pseudonyms = nlohmann::json::array();
    for (const auto &[serial, rec] : records_) {
      pseudonyms.push_back({{"serial", serial.hex()},
                            {"ticket_serial", rec.ticket_serial.hex()},
                            {"t_s", rec.t_s},
                            {"t_e", rec.t_e}});
    }
    nlohmann::json revoked = nlohmann::json::array();
    for (const auto &serial : crl_events_) revoked.push_back(serial.hex());
    return {{"authority", cfg_.id},
            {"kind", "pca"},
            {"domain", cfg_.domain},
            {"pseudonyms", pseudonyms},
            {"revoked", revoked}};
  }

  size_t issued_count() {
    std::lock_guard<std::mutex> lk(issue_mu_);
    return records_.size();
  }

  size_t revoked_count() {
    std::lock_guard<std::mutex> lk(issue_mu_);
    return revoked_.size();
  }

private:
  struct PseudonymRecord {
    RandomToken ticket_serial{};
    RandomToken binding_rnd{};
    int64_t t_s = 0;
    int64_t t_e = 0;
    Bytes public_key;
  };

  bool gate_active(double rps) {
    if (cfg_.gate.enabled) return true;
    return cfg_.gate.trigger_rps > 0.0 && rps > cfg_.gate.trigger_rps;
  }

  void enforce_gate(const PseudonymRequest &req) {
    // The reject carries the expected chain length as its detail; the
    // transport surfaces it to the client.
    if (req.gate_tokens.empty())
      throw Error(Errc::puzzle_required, std::to_string(cfg_.gate.stages));
    if (req.gate_tokens.size() != cfg_.gate.stages)
      throw Error(Errc::puzzle_invalid, "wrong token chain length");
    Digest digest = req.gate_digest();
    Digest prev{};
    for (uint32_t i = 0; i < cfg_.gate.stages; ++i) {
      if (req.gate_tokens[i] != gate_token(digest, i, prev))
        throw Error(Errc::puzzle_invalid, "token chain fails verification");
      prev = req.gate_tokens[i];
    }
  }

  Digest gate_token(const Digest &request_digest, uint32_t stage,
                    const Digest &prev) const {
    ByteWriter w;
    w.raw(request_digest.bytes);
    w.u32(stage);
    w.raw(prev.bytes);
    return hmac_sha256(gate_key_, w.peek());
  }

  std::vector<Interval> validate_policy_interval(const PseudonymRequest &req,
                                                 int64_t now) const {
    const PolicyConfig &pol = cfg_.policy;
    const Ticket &ticket = req.ticket;
    if (req.keys.empty())
      throw Error(Errc::arity, "request carries no keys");
    if (req.t_s >= req.t_e)
      throw Error(Errc::policy, "requested interval is empty");

    switch (pol.policy) {
      case Policy::P1:
      case Policy::P2:
        // The requested interval may narrow the ticket but not exceed it.
        if (req.t_s < ticket.t_s || req.t_e > ticket.t_e)
          throw Error(Errc::policy,
                      "requested interval exceeds the ticket interval");
        if (pol.policy == Policy::P2 && (req.t_e - req.t_s) % pol.tau != 0)
          throw Error(Errc::policy,
                      "interval must be a whole number of slots");
        break;
      case Policy::P3:
        // Grid alignment: the request covers exactly one shared window and
        // the ticket must match it exactly.
        if (req.t_s != ticket.t_s || req.t_e != ticket.t_e)
          throw Error(Errc::policy,
                      "ticket and request intervals must match exactly");
        if (req.t_s < pol.grid_epoch ||
            (req.t_s - pol.grid_epoch) % pol.gamma != 0 ||
            req.t_e - req.t_s != pol.gamma)
          throw Error(Errc::policy, "interval is not a grid-aligned window");
        break;
    }

    std::vector<Interval> slots = assigned_slots(
        pol.policy, req.t_s, req.t_e, pol.tau, req.keys.size());
    if (pol.policy == Policy::P3) {
      // Keys map to the window's tail; the earliest requested slot must not
      // have already expired.
      if (slots.front().end <= now - cfg_.skew)
        throw Error(Errc::policy, "requested slots have already expired");
    }
    return slots;
  }

  void validate_possession(const std::vector<PseudonymKey> &keys) const {
    for (const auto &k : keys)
      if (k.public_key.size() != kPublicKeySize)
        throw Error(Errc::possession, "malformed pseudonym key");
    if (!cfg_.pop_spot_check) {
      for (const auto &k : keys) check_one_possession(k);
      return;
    }
    // Spot-check mode: a random subset, at least one key.
    size_t n = keys.size();
    size_t sample = std::max<size_t>(
        1, static_cast<size_t>(static_cast<double>(n) * cfg_.pop_spot_fraction +
                               0.999999));
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    for (size_t i = 0; i < sample; ++i) check_one_possession(keys[pick(rng)]);
  }

  static void check_one_possession(const PseudonymKey &k) {
    if (!verify(k.public_key, PseudonymKey::possession_body(k.public_key),
                k.possession_signature))
      throw Error(Errc::possession, "key possession proof failed");
  }

  void authorize_resolver(const ResolvePseudonymRequest &req) const {
    if (!registry_->is_trusted(req.requester_id, AuthorityKind::ra))
      throw Error(Errc::unauthorized,
                  "resolution is restricted to the resolution authority");
    if (!verify(registry_->public_key_of(req.requester_id), req.signed_body(),
                req.requester_signature))
      throw Error(Errc::auth, "resolution request signature check failed");
  }

  void revoke_ticket_locked(const RandomToken &ticket_serial, int64_t now) {
    auto it = by_ticket_.find(ticket_serial);
    if (it == by_ticket_.end())
      throw Error(Errc::not_found, "no pseudonyms issued under that ticket");
    nlohmann::json added = nlohmann::json::array();
    for (const auto &serial : it->second) {
      const PseudonymRecord &rec = records_.at(serial);
      if (rec.t_e <= now) continue;  // already expired, nothing to revoke
      if (!revoked_.insert(serial).second) continue;  // already listed
      crl_events_.push_back(serial);
      added.push_back(serial.hex());
    }
    if (!added.empty())
      store_.append({{"event", "revoke"},
                     {"ticket_serial", ticket_serial.hex()},
                     {"serials", added},
                     {"sequence", crl_events_.size()}});
  }

  PcaConfig cfg_;
  KeyPair keys_;
  std::shared_ptr<const Registry> registry_;
  Clock clock_;
  JsonlStore store_;
  Bytes gate_key_;
  RateMeter meter_;

  std::mutex issue_mu_;
  std::unordered_map<RandomToken, Bytes, TokenHash> consumed_;  // serial → ticket
  std::unordered_map<RandomToken, PseudonymRecord, TokenHash> records_;
  std::unordered_map<RandomToken, std::vector<RandomToken>, TokenHash>
      by_ticket_;
  std::unordered_set<RandomToken, TokenHash> revoked_;
  std::vector<RandomToken> crl_events_;  // index + 1 == revocation sequence
  std::unordered_set<Digest, DigestHash> seen_bindings_;
};

}  // namespace vpki
