#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/crypto.hpp"
#include "vpki/domain.hpp"
#include "vpki/errors.hpp"
#include "vpki/policy.hpp"
#include "vpki/registry.hpp"
#include "vpki/wire.hpp"

namespace vpki {

// Pool of pre-generated short-term key pairs. Key generation is kept out of
// the acquisition path: the pool is filled ahead of time (and optionally
// refilled by a background thread); taking keys only generates inline when
// the pool runs dry.
class KeyPool {
public:
  explicit KeyPool(size_t target = 0) : target_(target) {}

  ~KeyPool() { stop_refill(); }

  void prefill(size_t n) {
    std::vector<KeyPair> fresh;
    fresh.reserve(n);
    for (size_t i = 0; i < n; ++i) fresh.push_back(generate_keypair());
    std::lock_guard<std::mutex> lk(mu_);
    for (auto &k : fresh) ready_.push_back(std::move(k));
  }

  std::vector<KeyPair> take(size_t n) {
    std::vector<KeyPair> out;
    out.reserve(n);
    {
      std::lock_guard<std::mutex> lk(mu_);
      while (out.size() < n && !ready_.empty()) {
        out.push_back(std::move(ready_.front()));
        ready_.pop_front();
      }
    }
    while (out.size() < n) out.push_back(generate_keypair());
    wake_.notify_one();
    return out;
  }

  size_t available() {
    std::lock_guard<std::mutex> lk(mu_);
    return ready_.size();
  }

  // Keep the pool topped up to its target from a background thread.
  void start_refill() {
    if (refill_.joinable() || target_ == 0) return;
    stop_ = false;
    refill_ = std::thread([this] {
      std::unique_lock<std::mutex> lk(mu_);
      while (!stop_) {
        if (ready_.size() >= target_) {
          wake_.wait(lk, [this] { return stop_ || ready_.size() < target_; });
          continue;
        }
        lk.unlock();
        KeyPair kp = generate_keypair();
        lk.lock();
        ready_.push_back(std::move(kp));
      }
    });
  }

  void stop_refill() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    if (refill_.joinable()) refill_.join();
  }

private:
  size_t target_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::deque<KeyPair> ready_;
  std::thread refill_;
  bool stop_ = false;
};

// A pseudonym the vehicle holds, together with everything needed to use it
// and to audit how it was derived.
struct HeldPseudonym {
  Pseudonym pseudonym;
  KeyPair keys;               // the short-term key pair behind it
  RandomToken binding_rnd{};  // opening returned by the issuer
};

struct VehicleConfig {
  std::string subject_id;
  PolicyConfig policy{};
  std::string home_ltca = "ltca-home";
  std::string home_pca = "pca-home";
  int64_t skew = kDefaultSkew;
};

// One acquisition round as the vehicle experienced it.
struct AcquireOutcome {
  size_t pseudonym_count = 0;
  double latency_ms = 0.0;  // request start to fully verified response
  bool solved_gate = false;
};

// The vehicle side of the protocols: plans its credential requests for a
// trip, acquires tickets and pseudonym batches, verifies every response
// before accepting it, and tracks what it holds.
class VehicleClient {
public:
  VehicleClient(VehicleConfig config, std::shared_ptr<const Registry> registry,
                Clock clock)
      : cfg_(std::move(config)), registry_(std::move(registry)),
        clock_(std::move(clock)), long_term_(generate_keypair()) {
    cfg_.policy.validate();
  }

  void set_channel(const std::string &authority_id, Channel &ch) {
    channels_[authority_id] = &ch;
  }

  const std::string &subject_id() const { return cfg_.subject_id; }
  const LongTermCertificate &credential() const { return ltc_; }
  const PolicyConfig &policy() const { return cfg_.policy; }
  KeyPool &key_pool() { return pool_; }

  // ---- enrollment ---------------------------------------------------------

  void enroll() {
    RegisterRequest req{cfg_.subject_id, long_term_.public_key};
    auto resp = call<RegisterResponse>(cfg_.home_ltca, Op::register_request,
                                       Op::register_response, req);
    if (resp.ltc.subject_id != cfg_.subject_id ||
        resp.ltc.public_key != long_term_.public_key)
      throw Error(Errc::auth, "enrollment response names someone else");
    if (!verify_issuer_signature(
            resp.ltc, registry_->public_key_of(resp.ltc.issuer_id)))
      throw Error(Errc::auth, "enrollment credential signature check failed");
    if (!resp.ltc.covers(clock_()))
      throw Error(Errc::expired, "enrollment credential not currently valid");
    ltc_ = resp.ltc;
  }

  // ---- planning -----------------------------------------------------------

  RequestPlan plan(int64_t departure, int64_t duration) const {
    return plan_requests(cfg_.policy, departure, duration);
  }

  // ---- acquisition --------------------------------------------------------

  // Run one planned request against the home authorities.
  AcquireOutcome acquire(const PlanEntry &entry) {
    return acquire_via(entry, cfg_.home_ltca, cfg_.home_pca);
  }

  // Visiting another domain: trade a home ticket for a local one, then buy
  // pseudonyms from the local pseudonym authority.
  AcquireOutcome acquire_foreign(const PlanEntry &entry,
                                 const std::string &foreign_ltca,
                                 const std::string &foreign_pca) {
    auto t0 = std::chrono::steady_clock::now();

    // Home ticket targeted at the foreign ticket authority.
    RandomToken exchange_reveal = random_token();
    TicketResponse home = request_ticket(cfg_.home_ltca, foreign_ltca,
                                         exchange_reveal, entry);

    // Trade it in; the new ticket commits to the foreign pseudonym authority.
    RandomToken pca_reveal = random_token();
    ExchangeRequest ex;
    ex.ticket = home.ticket;
    ex.reveal = exchange_reveal;
    ex.new_target_digest = authority_commitment(foreign_pca, pca_reveal);
    ex.t_s = entry.t_s;
    ex.t_e = entry.t_e;
    auto exch = call<ExchangeResponse>(foreign_ltca, Op::exchange_request,
                                       Op::exchange_response, ex);
    if (!verify_issuer_signature(exch.ticket,
                                 registry_->public_key_of(foreign_ltca)))
      throw Error(Errc::auth, "exchanged ticket signature check failed");
    if (exch.ticket.kind != TicketKind::foreign ||
        exch.ticket.t_s != entry.t_s || exch.ticket.t_e != entry.t_e)
      throw Error(Errc::auth, "exchanged ticket does not match the request");
    if (compute_ticket_binding(encode_message(home.ticket), exch.ticket.t_s,
                               exch.ticket.t_e,
                               exch.binding_rnd) != exch.ticket.binding)
      throw TamperEvidence(foreign_ltca,
                           "exchanged ticket binding does not open");

    AcquireOutcome out =
        buy_pseudonyms(foreign_pca, exch.ticket, pca_reveal, entry);
    out.latency_ms = ms_since(t0);
    record_latency(out.latency_ms);
    return out;
  }

  // ---- holdings -----------------------------------------------------------

  // The pseudonym valid right now. At most one can cover any instant; two
  // would mean the issuance rules were broken somewhere.
  const HeldPseudonym *current_pseudonym(int64_t at) const {
    const HeldPseudonym *found = nullptr;
    for (const auto &h : held_) {
      if (!h.pseudonym.covers(at)) continue;
      if (found)
        throw Error(Errc::internal,
                    "two held pseudonyms cover the same instant");
      found = &h;
    }
    return found;
  }

  const std::vector<HeldPseudonym> &held() const { return held_; }
  const std::vector<double> &latencies_ms() const { return latencies_; }

  // Slots still held whose validity ends after the given trip end.
  size_t unused_after(int64_t trip_end) const {
    return static_cast<size_t>(
        std::count_if(held_.begin(), held_.end(), [&](const HeldPseudonym &h) {
          return h.pseudonym.t_e > trip_end;
        }));
  }

private:
  AcquireOutcome acquire_via(const PlanEntry &entry, const std::string &ltca,
                             const std::string &pca) {
    auto t0 = std::chrono::steady_clock::now();
    RandomToken reveal = random_token();
    TicketResponse ticket = request_ticket(ltca, pca, reveal, entry);
    AcquireOutcome out = buy_pseudonyms(pca, ticket.ticket, reveal, entry);
    out.latency_ms = ms_since(t0);
    record_latency(out.latency_ms);
    return out;
  }

  TicketResponse request_ticket(const std::string &ltca,
                                const std::string &target_authority,
                                const RandomToken &reveal,
                                const PlanEntry &entry) {
    if (ltc_.subject_id.empty())
      throw Error(Errc::invalid_argument, "enroll before acquiring");
    TicketRequest req;
    req.target_digest = authority_commitment(target_authority, reveal);
    req.t_s = entry.t_s;
    req.t_e = entry.t_e;
    req.ltc = ltc_;
    req.vehicle_signature = sign(long_term_.private_key, req.signed_body());

    auto resp = call<TicketResponse>(ltca, Op::ticket_request,
                                     Op::ticket_response, req);
    if (!verify_issuer_signature(resp.ticket, registry_->public_key_of(ltca)))
      throw Error(Errc::auth, "ticket signature check failed");
    if (resp.ticket.t_s != entry.t_s || resp.ticket.t_e != entry.t_e ||
        resp.ticket.target_digest != req.target_digest)
      throw Error(Errc::auth, "ticket does not match the request");
    // The issuer proves it bound the ticket to this vehicle and interval.
    if (compute_ticket_binding(encode_message(ltc_), resp.ticket.t_s,
                               resp.ticket.t_e,
                               resp.binding_rnd) != resp.ticket.binding)
      throw TamperEvidence(ltca, "ticket binding does not open");
    return resp;
  }

  AcquireOutcome buy_pseudonyms(const std::string &pca, const Ticket &ticket,
                                const RandomToken &reveal,
                                const PlanEntry &entry) {
    std::vector<KeyPair> keys = pool_.take(entry.key_count);

    PseudonymRequest req;
    req.reveal = reveal;
    req.t_s = entry.t_s;
    req.t_e = entry.t_e;
    req.ticket = ticket;
    req.keys.reserve(keys.size());
    for (const auto &kp : keys) {
      PseudonymKey k;
      k.public_key = kp.public_key;
      k.possession_signature =
          sign(kp.private_key, PseudonymKey::possession_body(kp.public_key));
      req.keys.push_back(std::move(k));
    }

    AcquireOutcome out;
    PseudonymResponse resp;
    try {
      resp = call<PseudonymResponse>(pca, Op::pseudonym_request,
                                     Op::pseudonym_response, req);
    } catch (const PuzzleRequired &gate) {
      // The gate is on: walk the token chain, then retry with it attached.
      solve_gate(pca, req, gate.stages());
      out.solved_gate = true;
      resp = call<PseudonymResponse>(pca, Op::pseudonym_request,
                                     Op::pseudonym_response, req);
    }

    verify_pseudonym_batch(pca, ticket, req, resp, entry);
    for (size_t i = 0; i < resp.pseudonyms.size(); ++i) {
      held_.push_back(
          {resp.pseudonyms[i], std::move(keys[i]), resp.binding_rnds[i]});
    }
    out.pseudonym_count = resp.pseudonyms.size();
    return out;
  }

  void verify_pseudonym_batch(const std::string &pca, const Ticket &ticket,
                              const PseudonymRequest &req,
                              const PseudonymResponse &resp,
                              const PlanEntry &entry) {
    if (resp.pseudonyms.size() != req.keys.size())
      throw Error(Errc::auth, "response count does not match the request");
    std::vector<Interval> slots =
        assigned_slots(cfg_.policy.policy, entry.t_s, entry.t_e,
                       cfg_.policy.tau, req.keys.size());
    const Bytes &issuer_key = registry_->public_key_of(pca);
    for (size_t i = 0; i < resp.pseudonyms.size(); ++i) {
      const Pseudonym &p = resp.pseudonyms[i];
      if (p.public_key != req.keys[i].public_key)
        throw Error(Errc::auth, "pseudonym carries a substituted key");
      if (p.t_s != slots[i].start || p.t_e != slots[i].end)
        throw Error(Errc::auth, "pseudonym slot does not match the plan");
      if (!verify_issuer_signature(p, issuer_key))
        throw Error(Errc::auth, "pseudonym signature check failed");
      if (compute_pseudonym_binding(ticket.binding, p.public_key, p.t_s, p.t_e,
                                    resp.binding_rnds[i]) != p.binding)
        throw TamperEvidence(pca, "pseudonym binding does not open");
    }
  }

  void solve_gate(const std::string &pca, PseudonymRequest &req,
                  uint32_t stages) {
    req.gate_tokens.clear();
    Digest digest = req.gate_digest();
    for (uint32_t stage = 0; stage < stages; ++stage) {
      PuzzleRequest pr{digest, stage, req.gate_tokens};
      auto pres = call<PuzzleResponse>(pca, Op::puzzle_request,
                                       Op::puzzle_response, pr);
      req.gate_tokens.push_back(pres.token);
    }
  }

  template <typename Resp, typename Req>
  Resp call(const std::string &authority_id, Op op, Op resp_op,
            const Req &payload) {
    auto it = channels_.find(authority_id);
    if (it == channels_.end())
      throw Error(Errc::unavailable,
                  "no channel to authority '" + authority_id + "'");
    MessageEnvelope request = make_request(op, payload, clock_());
    MessageEnvelope response = it->second->roundtrip(request);
    if (response.op != Op::error_response)
      check_freshness(response, clock_(), cfg_.skew);
    return expect_response<Resp>(request, response, resp_op);
  }

  static double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(
               std::chrono::steady_clock::now() - t0)
        .count();
  }

  void record_latency(double ms) { latencies_.push_back(ms); }

  VehicleConfig cfg_;
  std::shared_ptr<const Registry> registry_;
  Clock clock_;
  KeyPair long_term_;
  LongTermCertificate ltc_;
  KeyPool pool_;
  std::map<std::string, Channel *> channels_;
  std::vector<HeldPseudonym> held_;
  std::vector<double> latencies_;
};

}  // namespace vpki
