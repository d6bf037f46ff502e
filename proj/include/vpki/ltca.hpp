#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/crypto.hpp"
#include "vpki/domain.hpp"
#include "vpki/errors.hpp"
#include "vpki/interval_set.hpp"
#include "vpki/registry.hpp"
#include "vpki/store.hpp"
#include "vpki/wire.hpp"

namespace vpki {

struct LtcaConfig {
  std::string id = "ltca-home";
  std::string domain = "home";
  int64_t skew = kDefaultSkew;
  int64_t max_ticket_span = 24 * 3600;  // longest interval one ticket may cover
  int64_t ltc_validity = 10LL * 365 * 24 * 3600;
  std::string store_path;  // empty: in-memory only
};

// Long-term credential authority: enrolls vehicles, issues anonymized
// tickets against a per-subject non-overlap ledger, exchanges tickets for
// visiting vehicles and answers authorized resolution requests.
class Ltca : public WireService {
public:
  Ltca(LtcaConfig config, KeyPair keys, std::shared_ptr<const Registry> registry,
       Clock clock)
      : cfg_(std::move(config)), keys_(std::move(keys)),
        registry_(std::move(registry)), clock_(std::move(clock)),
        store_(cfg_.store_path) {}

  const std::string &id() const { return cfg_.id; }
  const Bytes &public_key() const { return keys_.public_key; }

  // ---- enrollment ---------------------------------------------------------

  RegisterResponse register_vehicle(const RegisterRequest &req) {
    if (req.subject_id.empty())
      throw Error(Errc::invalid_argument, "subject id must not be empty");
    if (req.public_key.size() != kPublicKeySize)
      throw Error(Errc::invalid_argument, "malformed vehicle public key");
    std::lock_guard<std::mutex> lk(reg_mu_);
    auto it = registrations_.find(req.subject_id);
    if (it != registrations_.end()) {
      // Re-registering the same key returns the existing credential.
      if (it->second.public_key == req.public_key) return {it->second};
      throw Error(Errc::conflict,
                  "subject already registered with a different key");
    }
    LongTermCertificate ltc;
    ltc.subject_id = req.subject_id;
    ltc.public_key = req.public_key;
    ltc.valid_from = clock_();
    ltc.valid_to = ltc.valid_from + cfg_.ltc_validity;
    ltc.issuer_id = cfg_.id;
    sign_as_issuer(ltc, keys_.private_key);
    registrations_.emplace(req.subject_id, ltc);
    store_.append({{"event", "register"},
                   {"subject", req.subject_id},
                   {"ltc", to_hex(encode_message(ltc))}});
    return {ltc};
  }

  // ---- ticket issuance ----------------------------------------------------

  TicketResponse issue_ticket(const TicketRequest &req) {
    int64_t now = clock_();
    validate_interval(req.t_s, req.t_e, now);

    LongTermCertificate registered;
    {
      std::lock_guard<std::mutex> lk(reg_mu_);
      auto it = registrations_.find(req.ltc.subject_id);
      if (it == registrations_.end())
        throw Error(Errc::auth, "unknown subject");
      registered = it->second;
    }
    // The presented credential must be bit-identical to the enrolled one.
    if (encode_message(req.ltc) != encode_message(registered))
      throw Error(Errc::auth, "presented credential does not match enrollment");
    if (!registered.covers(now))
      throw Error(Errc::expired, "long-term credential not currently valid");
    {
      std::lock_guard<std::mutex> lk(records_mu_);
      if (revoked_subjects_.count(req.ltc.subject_id))
        throw Error(Errc::revoked, "subject credential is revoked");
    }
    if (!verify(registered.public_key, req.signed_body(),
                req.vehicle_signature))
      throw Error(Errc::auth, "request signature check failed");

    // Overlap check, persist and sign are one atomic step per subject: two
    // racing requests with intersecting intervals cannot both commit.
    TicketResponse resp;
    bool ok = ticket_intervals_.try_reserve(
        req.ltc.subject_id, {req.t_s, req.t_e}, [&] {
          resp = build_ticket(TicketKind::native, req, registered);
        });
    if (!ok)
      throw Error(Errc::sybil_rejected,
                  "interval overlaps a ticket already issued to this subject");
    return resp;
  }

  // ---- cross-domain exchange ---------------------------------------------

  ExchangeResponse exchange_ticket(const ExchangeRequest &req) {
    int64_t now = clock_();
    validate_interval(req.t_s, req.t_e, now);

    const Ticket &presented = req.ticket;
    if (!registry_->is_trusted(presented.issuer_id, AuthorityKind::ltca))
      throw Error(Errc::auth, "issuer is not a recognized ticket authority");
    if (presented.issuer_id == cfg_.id)
      throw Error(Errc::policy, "cannot exchange a locally issued ticket");
    if (!verify_issuer_signature(presented,
                                 registry_->public_key_of(presented.issuer_id)))
      throw Error(Errc::auth, "ticket signature check failed");
    // Possession proof: the opening of the commitment inside the ticket
    // names this authority.
    if (authority_commitment(cfg_.id, req.reveal) != presented.target_digest)
      throw Error(Errc::wrong_target, "ticket is not targeted at this authority");
    if (presented.expired_at(now - cfg_.skew))
      throw Error(Errc::expired, "presented ticket has expired");
    if (req.t_s < presented.t_s || req.t_e > presented.t_e)
      throw Error(Errc::policy,
                  "requested interval exceeds the presented ticket");

    std::lock_guard<std::mutex> lk(records_mu_);
    if (revoked_serials_.count(presented.serial))
      throw Error(Errc::revoked, "presented ticket is revoked");
    // One exchange per ticket; a second attempt is a replay.
    if (!consumed_exchange_.insert(presented.serial).second)
      throw Error(Errc::replay, "ticket already exchanged");

    Ticket out;
    out.serial = random_token();
    out.kind = TicketKind::foreign;
    out.target_digest = req.new_target_digest;
    out.t_s = req.t_s;
    out.t_e = req.t_e;
    out.issuer_id = cfg_.id;
    RandomToken rnd = random_token();
    Bytes chained = encode_message(presented);
    out.binding = compute_ticket_binding(chained, req.t_s, req.t_e, rnd);
    check_binding_unique_locked(out.binding);
    sign_as_issuer(out, keys_.private_key);

    TicketRecord rec;
    rec.kind = TicketKind::foreign;
    rec.chained_ticket = chained;
    rec.binding_rnd = rnd;
    rec.t_s = out.t_s;
    rec.t_e = out.t_e;
    by_serial_.emplace(out.serial, std::move(rec));
    store_.append({{"event", "exchange"},
                   {"serial", out.serial.hex()},
                   {"chained_serial", presented.serial.hex()},
                   {"t_s", out.t_s},
                   {"t_e", out.t_e}});
    return {out, rnd};
  }

  // ---- resolution ---------------------------------------------------------

  ResolveTicketResponse resolve_ticket(const ResolveTicketRequest &req) {
    authorize_resolver(req);
    TicketRecord rec;
    {
      std::lock_guard<std::mutex> lk(records_mu_);
      auto it = by_serial_.find(req.lookup_serial());
      if (it == by_serial_.end())
        throw Error(Errc::not_found, "no ticket with that serial");
      rec = it->second;
    }

    ResolveTicketResponse resp;
    resp.binding_rnd = rec.binding_rnd;
    resp.authority_id = cfg_.id;
    if (rec.kind == TicketKind::native) {
      resp.chains_to_ticket = 0;
      std::lock_guard<std::mutex> lk(reg_mu_);
      auto reg = registrations_.find(rec.subject_id);
      if (reg == registrations_.end())
        throw Error(Errc::internal, "ticket references an unknown subject");
      resp.ltc = reg->second;
    } else {
      resp.chains_to_ticket = 1;
      resp.chained_ticket = decode_message<Ticket>(rec.chained_ticket);
    }
    resp.authority_signature = sign(keys_.private_key, resp.signed_body());

    if (req.revoke) {
      std::lock_guard<std::mutex> lk(records_mu_);
      if (rec.kind == TicketKind::native) {
        revoked_subjects_.insert(rec.subject_id);
        store_.append({{"event", "revoke_subject"},
                       {"subject", rec.subject_id},
                       {"via_serial", req.lookup_serial().hex()}});
      } else {
        revoked_serials_.insert(
            decode_message<Ticket>(rec.chained_ticket).serial);
        store_.append({{"event", "revoke_chained"},
                       {"serial", req.lookup_serial().hex()}});
      }
    }
    return resp;
  }

  bool subject_revoked(const std::string &subject) {
    std::lock_guard<std::mutex> lk(records_mu_);
    return revoked_subjects_.count(subject) > 0;
  }

  // ---- wire dispatch ------------------------------------------------------

  MessageEnvelope handle(const MessageEnvelope &request) override {
    int64_t now = clock_();
    check_freshness(request, now, cfg_.skew);
    switch (request.op) {
      case Op::register_request:
        return make_response(
            request, Op::register_response,
            register_vehicle(decode_message<RegisterRequest>(request.payload)),
            now);
      case Op::ticket_request:
        return make_response(
            request, Op::ticket_response,
            issue_ticket(decode_message<TicketRequest>(request.payload)), now);
      case Op::exchange_request:
        return make_response(
            request, Op::exchange_response,
            exchange_ticket(decode_message<ExchangeRequest>(request.payload)),
            now);
      case Op::resolve_ticket_request:
        return make_response(request, Op::resolve_ticket_response,
                             resolve_ticket(decode_message<ResolveTicketRequest>(
                                 request.payload)),
                             now);
      default:
        throw Error(Errc::decode, std::string("unsupported operation ") +
                                      op_name(request.op));
    }
  }

  // ---- observability ------------------------------------------------------

  // This authority's complete private view, used for collusion analysis and
  // audits: which subject got which ticket interval. Pseudonym identifiers
  // never appear here.
  nlohmann::json export_ledger() {
    std::lock_guard<std::mutex> lk(records_mu_);
    nlohmann::json tickets = nlohmann::json::array();
    for (const auto &[serial, rec] : by_serial_) {
      nlohmann::json row{{"serial", serial.hex()},
                         {"t_s", rec.t_s},
                         {"t_e", rec.t_e}};
      if (rec.kind == TicketKind::native) {
        row["kind"] = "native";
        row["subject"] = rec.subject_id;
      } else {
        row["kind"] = "foreign";
        row["chained_serial"] =
            decode_message<Ticket>(rec.chained_ticket).serial.hex();
      }
      tickets.push_back(std::move(row));
    }
    return {{"authority", cfg_.id},
            {"kind", "ltca"},
            {"domain", cfg_.domain},
            {"tickets", tickets}};
  }

  size_t issued_count() {
    std::lock_guard<std::mutex> lk(records_mu_);
    return by_serial_.size();
  }

private:
  struct TicketRecord {
    TicketKind kind = TicketKind::native;
    std::string subject_id;  // native tickets
    Bytes chained_ticket;    // exchanged tickets: the ticket they chain to
    RandomToken binding_rnd{};
    int64_t t_s = 0;
    int64_t t_e = 0;
  };

  void validate_interval(int64_t t_s, int64_t t_e, int64_t now) const {
    if (t_s >= t_e)
      throw Error(Errc::policy, "requested interval is empty");
    if (t_e - t_s > cfg_.max_ticket_span)
      throw Error(Errc::policy, "requested interval exceeds the maximum span");
    if (t_e <= now - cfg_.skew)
      throw Error(Errc::policy, "requested interval lies entirely in the past");
  }

  void authorize_resolver(const ResolveTicketRequest &req) const {
    if (!registry_->is_trusted(req.requester_id, AuthorityKind::ra))
      throw Error(Errc::unauthorized,
                  "resolution is restricted to the resolution authority");
    if (!verify(registry_->public_key_of(req.requester_id), req.signed_body(),
                req.requester_signature))
      throw Error(Errc::auth, "resolution request signature check failed");
  }

  // Binding digests must be unique across all issued credentials; a repeat
  // would make two credentials indistinguishable during resolution.
  void check_binding_unique_locked(const Digest &binding) {
    if (!seen_bindings_.insert(binding).second)
      throw Error(Errc::internal, "binding digest collision");
  }

  TicketResponse build_ticket(TicketKind kind, const TicketRequest &req,
                              const LongTermCertificate &registered) {
    Ticket t;
    t.serial = random_token();
    t.kind = kind;
    t.target_digest = req.target_digest;
    t.t_s = req.t_s;
    t.t_e = req.t_e;
    t.issuer_id = cfg_.id;
    RandomToken rnd = random_token();
    t.binding = compute_ticket_binding(encode_message(registered), req.t_s,
                                       req.t_e, rnd);
    sign_as_issuer(t, keys_.private_key);

    TicketRecord rec;
    rec.kind = kind;
    rec.subject_id = registered.subject_id;
    rec.binding_rnd = rnd;
    rec.t_s = t.t_s;
    rec.t_e = t.t_e;
    {
      std::lock_guard<std::mutex> lk(records_mu_);
      check_binding_unique_locked(t.binding);
      by_serial_.emplace(t.serial, std::move(rec));
    }
    store_.append({{"event", "ticket"},
                   {"serial", t.serial.hex()},
                   {"subject", registered.subject_id},
                   {"t_s", t.t_s},
                   {"t_e", t.t_e}});
    return {t, rnd};
  }

  LtcaConfig cfg_;
  KeyPair keys_;
  std::shared_ptr<const Registry> registry_;
  Clock clock_;
  JsonlStore store_;

  std::mutex reg_mu_;
  std::unordered_map<std::string, LongTermCertificate> registrations_;

  SubjectIntervalLedger ticket_intervals_;

  std::mutex records_mu_;
  std::unordered_map<RandomToken, TicketRecord, TokenHash> by_serial_;
  std::unordered_set<RandomToken, TokenHash> consumed_exchange_;
  std::unordered_set<RandomToken, TokenHash> revoked_serials_;
  std::unordered_set<std::string> revoked_subjects_;
  std::unordered_set<Digest, DigestHash> seen_bindings_;
};

}  // namespace vpki
