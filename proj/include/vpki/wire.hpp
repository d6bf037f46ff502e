#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "vpki/bytes.hpp"
#include "vpki/crypto.hpp"
#include "vpki/domain.hpp"
#include "vpki/errors.hpp"

namespace vpki {

// Every exchange is a binary envelope: operation code, client nonce,
// send-time and an opaque payload. Responses echo the nonce incremented by
// one; both sides reject stale timestamps.
enum class Op : uint16_t {
  register_request = 1,
  register_response = 2,
  ticket_request = 3,
  ticket_response = 4,
  exchange_request = 5,
  exchange_response = 6,
  pseudonym_request = 7,
  pseudonym_response = 8,
  resolve_pseudonym_request = 9,
  resolve_pseudonym_response = 10,
  resolve_ticket_request = 11,
  resolve_ticket_response = 12,
  crl_request = 13,
  crl_response = 14,
  ocsp_request = 15,
  ocsp_response = 16,
  puzzle_request = 17,
  puzzle_response = 18,
  error_response = 19,
};

inline const char *op_name(Op op) {
  switch (op) {
    case Op::register_request: return "register_request";
    case Op::register_response: return "register_response";
    case Op::ticket_request: return "ticket_request";
    case Op::ticket_response: return "ticket_response";
    case Op::exchange_request: return "exchange_request";
    case Op::exchange_response: return "exchange_response";
    case Op::pseudonym_request: return "pseudonym_request";
    case Op::pseudonym_response: return "pseudonym_response";
    case Op::resolve_pseudonym_request: return "resolve_pseudonym_request";
    case Op::resolve_pseudonym_response: return "resolve_pseudonym_response";
    case Op::resolve_ticket_request: return "resolve_ticket_request";
    case Op::resolve_ticket_response: return "resolve_ticket_response";
    case Op::crl_request: return "crl_request";
    case Op::crl_response: return "crl_response";
    case Op::ocsp_request: return "ocsp_request";
    case Op::ocsp_response: return "ocsp_response";
    case Op::puzzle_request: return "puzzle_request";
    case Op::puzzle_response: return "puzzle_response";
    case Op::error_response: return "error_response";
  }
  return "unknown";
}

// Accepted clock skew between peers, in seconds.
inline constexpr int64_t kDefaultSkew = 5;

struct MessageEnvelope {
  static constexpr const char *kName = "envelope";

  Op op = Op::error_response;
  RandomToken nonce{};
  int64_t sent_at = 0;
  Bytes payload;

  void encode(ByteWriter &w) const {
    w.u16(static_cast<uint16_t>(op));
    w.raw(nonce.bytes);
    w.timestamp(sent_at);
    w.blob(payload);
  }

  static MessageEnvelope decode(ByteReader &r) {
    MessageEnvelope e;
    uint16_t op = r.u16("envelope.op");
    if (op < 1 || op > 19) throw DecodeError("envelope.op", "unknown value");
    e.op = static_cast<Op>(op);
    r.raw(e.nonce.bytes, "envelope.nonce");
    e.sent_at = r.timestamp("envelope.sent_at");
    e.payload = r.blob("envelope.payload");
    return e;
  }
};

template <typename Payload>
MessageEnvelope make_request(Op op, const Payload &p, int64_t now) {
  MessageEnvelope e;
  e.op = op;
  e.nonce = random_token();
  e.sent_at = now;
  e.payload = encode_message(p);
  return e;
}

template <typename Payload>
MessageEnvelope make_response(const MessageEnvelope &request, Op op,
                              const Payload &p, int64_t now) {
  MessageEnvelope e;
  e.op = op;
  e.nonce = request.nonce.next();
  e.sent_at = now;
  e.payload = encode_message(p);
  return e;
}

inline void check_freshness(const MessageEnvelope &e, int64_t now,
                            int64_t skew) {
  int64_t diff = e.sent_at > now ? e.sent_at - now : now - e.sent_at;
  if (diff > skew)
    throw Error(Errc::freshness, "message timestamp outside skew window");
}

// ---- long-term enrollment -------------------------------------------------

struct RegisterRequest {
  static constexpr const char *kName = "register_request";
  std::string subject_id;
  Bytes public_key;

  void encode(ByteWriter &w) const {
    w.str(subject_id);
    w.blob(public_key);
  }
  static RegisterRequest decode(ByteReader &r) {
    RegisterRequest m;
    m.subject_id = r.str("register.subject_id");
    m.public_key = r.blob("register.public_key");
    return m;
  }
};

struct RegisterResponse {
  static constexpr const char *kName = "register_response";
  LongTermCertificate ltc;

  void encode(ByteWriter &w) const { ltc.encode(w); }
  static RegisterResponse decode(ByteReader &r) {
    return {LongTermCertificate::decode(r)};
  }
};

// ---- ticket issuance ------------------------------------------------------

struct TicketRequest {
  static constexpr const char *kName = "ticket_request";
  Digest target_digest{};  // commitment to the pseudonym authority
  int64_t t_s = 0;
  int64_t t_e = 0;
  LongTermCertificate ltc;
  Signature vehicle_signature{};  // over signed_body with the long-term key

  Bytes signed_body() const {
    ByteWriter w;
    w.str("ticket-request");
    w.raw(target_digest.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.raw(target_digest.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    ltc.encode(w);
    w.raw(vehicle_signature.bytes);
  }

  static TicketRequest decode(ByteReader &r) {
    TicketRequest m;
    r.raw(m.target_digest.bytes, "ticket_request.target_digest");
    m.t_s = r.timestamp("ticket_request.t_s");
    m.t_e = r.timestamp("ticket_request.t_e");
    m.ltc = LongTermCertificate::decode(r);
    r.raw(m.vehicle_signature.bytes, "ticket_request.signature");
    return m;
  }
};

struct TicketResponse {
  static constexpr const char *kName = "ticket_response";
  Ticket ticket;
  RandomToken binding_rnd{};  // lets the holder recompute the binding digest

  void encode(ByteWriter &w) const {
    ticket.encode(w);
    w.raw(binding_rnd.bytes);
  }
  static TicketResponse decode(ByteReader &r) {
    TicketResponse m;
    m.ticket = Ticket::decode(r);
    r.raw(m.binding_rnd.bytes, "ticket_response.binding_rnd");
    return m;
  }
};

// ---- cross-domain ticket exchange ----------------------------------------

// A visiting vehicle trades a home-issued ticket for a local one. The holder
// authenticates by opening the commitment inside the ticket; no long-term
// identity crosses the domain boundary.
struct ExchangeRequest {
  static constexpr const char *kName = "exchange_request";
  Ticket ticket;          // issued at home, targeted at this authority
  RandomToken reveal{};   // opening of ticket.target_digest
  Digest new_target_digest{};  // commitment to the local pseudonym authority
  int64_t t_s = 0;
  int64_t t_e = 0;

  void encode(ByteWriter &w) const {
    ticket.encode(w);
    w.raw(reveal.bytes);
    w.raw(new_target_digest.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
  }

  static ExchangeRequest decode(ByteReader &r) {
    ExchangeRequest m;
    m.ticket = Ticket::decode(r);
    r.raw(m.reveal.bytes, "exchange.reveal");
    r.raw(m.new_target_digest.bytes, "exchange.new_target_digest");
    m.t_s = r.timestamp("exchange.t_s");
    m.t_e = r.timestamp("exchange.t_e");
    return m;
  }
};

struct ExchangeResponse {
  static constexpr const char *kName = "exchange_response";
  Ticket ticket;
  RandomToken binding_rnd{};

  void encode(ByteWriter &w) const {
    ticket.encode(w);
    w.raw(binding_rnd.bytes);
  }
  static ExchangeResponse decode(ByteReader &r) {
    ExchangeResponse m;
    m.ticket = Ticket::decode(r);
    r.raw(m.binding_rnd.bytes, "exchange_response.binding_rnd");
    return m;
  }
};

// ---- pseudonym provisioning ----------------------------------------------

struct PseudonymKey {
  Bytes public_key;
  Signature possession_signature{};  // self-signature proving key ownership

  static Bytes possession_body(std::span<const uint8_t> public_key) {
    ByteWriter w;
    w.str("key-possession");
    w.blob(public_key);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.blob(public_key);
    w.raw(possession_signature.bytes);
  }
  static PseudonymKey decode(ByteReader &r) {
    PseudonymKey k;
    k.public_key = r.blob("pseudonym_key.public_key");
    r.raw(k.possession_signature.bytes, "pseudonym_key.signature");
    return k;
  }
};

struct PseudonymRequest {
  static constexpr const char *kName = "pseudonym_request";
  RandomToken reveal{};  // opening of ticket.target_digest
  int64_t t_s = 0;
  int64_t t_e = 0;
  Ticket ticket;
  std::vector<PseudonymKey> keys;
  std::vector<Digest> gate_tokens;  // request-gate chain; empty when gate off

  // Digest the request gate binds its token chain to: the request with the
  // chain stripped, so the chain itself stays out of its own preimage.
  Digest gate_digest() const {
    PseudonymRequest stripped = *this;
    stripped.gate_tokens.clear();
    return sha256(encode_message(stripped));
  }

  void encode(ByteWriter &w) const {
    w.raw(reveal.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    ticket.encode(w);
    w.u32(static_cast<uint32_t>(keys.size()));
    for (const auto &k : keys) k.encode(w);
    w.u32(static_cast<uint32_t>(gate_tokens.size()));
    for (const auto &t : gate_tokens) w.raw(t.bytes);
  }

  static PseudonymRequest decode(ByteReader &r) {
    PseudonymRequest m;
    r.raw(m.reveal.bytes, "pseudonym_request.reveal");
    m.t_s = r.timestamp("pseudonym_request.t_s");
    m.t_e = r.timestamp("pseudonym_request.t_e");
    m.ticket = Ticket::decode(r);
    uint32_t nk = r.u32("pseudonym_request.key_count");
    if (nk > 100000)
      throw DecodeError("pseudonym_request.key_count", "implausible count");
    m.keys.reserve(nk);
    for (uint32_t i = 0; i < nk; ++i) m.keys.push_back(PseudonymKey::decode(r));
    uint32_t nt = r.u32("pseudonym_request.gate_token_count");
    if (nt > 1000)
      throw DecodeError("pseudonym_request.gate_token_count",
                        "implausible count");
    m.gate_tokens.resize(nt);
    for (uint32_t i = 0; i < nt; ++i)
      r.raw(m.gate_tokens[i].bytes, "pseudonym_request.gate_token");
    return m;
  }
};

struct PseudonymResponse {
  static constexpr const char *kName = "pseudonym_response";
  std::vector<Pseudonym> pseudonyms;
  std::vector<RandomToken> binding_rnds;  // one per pseudonym, same order

  void encode(ByteWriter &w) const {
    w.u32(static_cast<uint32_t>(pseudonyms.size()));
    for (const auto &p : pseudonyms) p.encode(w);
    w.u32(static_cast<uint32_t>(binding_rnds.size()));
    for (const auto &t : binding_rnds) w.raw(t.bytes);
  }

  static PseudonymResponse decode(ByteReader &r) {
    PseudonymResponse m;
    uint32_t np = r.u32("pseudonym_response.count");
    if (np > 100000)
      throw DecodeError("pseudonym_response.count", "implausible count");
    m.pseudonyms.reserve(np);
    for (uint32_t i = 0; i < np; ++i)
      m.pseudonyms.push_back(Pseudonym::decode(r));
    uint32_t nr = r.u32("pseudonym_response.rnd_count");
    if (nr != np)
      throw DecodeError("pseudonym_response.rnd_count",
                        "does not match pseudonym count");
    m.binding_rnds.resize(nr);
    for (uint32_t i = 0; i < nr; ++i)
      r.raw(m.binding_rnds[i].bytes, "pseudonym_response.binding_rnd");
    return m;
  }
};

// ---- identity resolution --------------------------------------------------

struct ResolvePseudonymRequest {
  static constexpr const char *kName = "resolve_pseudonym_request";
  Pseudonym pseudonym;
  uint8_t revoke = 0;
  std::string requester_id;
  Signature requester_signature{};

  Bytes signed_body() const {
    ByteWriter w;
    w.str("resolve-pseudonym");
    pseudonym.encode(w);
    w.u8(revoke);
    w.str(requester_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    pseudonym.encode(w);
    w.u8(revoke);
    w.str(requester_id);
    w.raw(requester_signature.bytes);
  }

  static ResolvePseudonymRequest decode(ByteReader &r) {
    ResolvePseudonymRequest m;
    m.pseudonym = Pseudonym::decode(r);
    m.revoke = r.u8("resolve_pseudonym.revoke");
    m.requester_id = r.str("resolve_pseudonym.requester_id");
    r.raw(m.requester_signature.bytes, "resolve_pseudonym.signature");
    return m;
  }
};

struct ResolvePseudonymResponse {
  static constexpr const char *kName = "resolve_pseudonym_response";
  Ticket ticket;              // the ticket the pseudonym was issued under
  RandomToken binding_rnd{};  // opening for the pseudonym's binding digest
  std::string authority_id;
  Signature authority_signature{};

  Bytes signed_body() const {
    ByteWriter w;
    w.str("resolve-pseudonym-result");
    ticket.encode(w);
    w.raw(binding_rnd.bytes);
    w.str(authority_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    ticket.encode(w);
    w.raw(binding_rnd.bytes);
    w.str(authority_id);
    w.raw(authority_signature.bytes);
  }

  static ResolvePseudonymResponse decode(ByteReader &r) {
    ResolvePseudonymResponse m;
    m.ticket = Ticket::decode(r);
    r.raw(m.binding_rnd.bytes, "resolve_pseudonym_response.binding_rnd");
    m.authority_id = r.str("resolve_pseudonym_response.authority_id");
    r.raw(m.authority_signature.bytes,
          "resolve_pseudonym_response.signature");
    return m;
  }
};

struct ResolveTicketRequest {
  static constexpr const char *kName = "resolve_ticket_request";
  uint8_t has_ticket = 0;        // 1: full ticket attached, 0: serial only
  std::optional<Ticket> ticket;
  RandomToken serial{};
  uint8_t revoke = 0;
  std::string requester_id;
  Signature requester_signature{};

  RandomToken lookup_serial() const {
    return has_ticket ? ticket->serial : serial;
  }

  Bytes signed_body() const {
    ByteWriter w;
    w.str("resolve-ticket");
    w.u8(has_ticket);
    if (has_ticket) ticket->encode(w);
    w.raw(serial.bytes);
    w.u8(revoke);
    w.str(requester_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.u8(has_ticket);
    if (has_ticket) ticket->encode(w);
    w.raw(serial.bytes);
    w.u8(revoke);
    w.str(requester_id);
    w.raw(requester_signature.bytes);
  }

  static ResolveTicketRequest decode(ByteReader &r) {
    ResolveTicketRequest m;
    m.has_ticket = r.u8("resolve_ticket.has_ticket");
    if (m.has_ticket > 1)
      throw DecodeError("resolve_ticket.has_ticket", "unknown value");
    if (m.has_ticket) m.ticket = Ticket::decode(r);
    r.raw(m.serial.bytes, "resolve_ticket.serial");
    m.revoke = r.u8("resolve_ticket.revoke");
    m.requester_id = r.str("resolve_ticket.requester_id");
    r.raw(m.requester_signature.bytes, "resolve_ticket.signature");
    return m;
  }
};

// Resolving a native ticket yields the holder's long-term certificate;
// resolving an exchanged one yields the ticket it chained from.
struct ResolveTicketResponse {
  static constexpr const char *kName = "resolve_ticket_response";
  uint8_t chains_to_ticket = 0;
  std::optional<LongTermCertificate> ltc;
  std::optional<Ticket> chained_ticket;
  RandomToken binding_rnd{};  // opening for the resolved ticket's binding
  std::string authority_id;
  Signature authority_signature{};

  Bytes signed_body() const {
    ByteWriter w;
    w.str("resolve-ticket-result");
    w.u8(chains_to_ticket);
    if (chains_to_ticket)
      chained_ticket->encode(w);
    else
      ltc->encode(w);
    w.raw(binding_rnd.bytes);
    w.str(authority_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.u8(chains_to_ticket);
    if (chains_to_ticket)
      chained_ticket->encode(w);
    else
      ltc->encode(w);
    w.raw(binding_rnd.bytes);
    w.str(authority_id);
    w.raw(authority_signature.bytes);
  }

  static ResolveTicketResponse decode(ByteReader &r) {
    ResolveTicketResponse m;
    m.chains_to_ticket = r.u8("resolve_ticket_response.chains_to_ticket");
    if (m.chains_to_ticket > 1)
      throw DecodeError("resolve_ticket_response.chains_to_ticket",
                        "unknown value");
    if (m.chains_to_ticket)
      m.chained_ticket = Ticket::decode(r);
    else
      m.ltc = LongTermCertificate::decode(r);
    r.raw(m.binding_rnd.bytes, "resolve_ticket_response.binding_rnd");
    m.authority_id = r.str("resolve_ticket_response.authority_id");
    r.raw(m.authority_signature.bytes, "resolve_ticket_response.signature");
    return m;
  }
};

// ---- revocation status ----------------------------------------------------

struct CrlRequest {
  static constexpr const char *kName = "crl_request";
  uint64_t since_sequence = 0;  // 0 requests the full list

  void encode(ByteWriter &w) const { w.u64(since_sequence); }
  static CrlRequest decode(ByteReader &r) {
    return {r.u64("crl_request.since_sequence")};
  }
};

struct CrlResponse {
  static constexpr const char *kName = "crl_response";
  Crl crl;

  void encode(ByteWriter &w) const { crl.encode(w); }
  static CrlResponse decode(ByteReader &r) { return {Crl::decode(r)}; }
};

enum class CredentialStatus : uint8_t { good = 0, revoked = 1, unknown = 2 };

struct OcspRequest {
  static constexpr const char *kName = "ocsp_request";
  std::vector<RandomToken> serials;

  void encode(ByteWriter &w) const {
    w.u32(static_cast<uint32_t>(serials.size()));
    for (const auto &s : serials) w.raw(s.bytes);
  }
  static OcspRequest decode(ByteReader &r) {
    OcspRequest m;
    uint32_t n = r.u32("ocsp_request.count");
    if (n > 1000000)
      throw DecodeError("ocsp_request.count", "implausible count");
    m.serials.resize(n);
    for (uint32_t i = 0; i < n; ++i)
      r.raw(m.serials[i].bytes, "ocsp_request.serial");
    return m;
  }
};

struct OcspEntry {
  RandomToken serial{};
  CredentialStatus status = CredentialStatus::unknown;
};

struct OcspResponse {
  static constexpr const char *kName = "ocsp_response";
  std::string issuer_id;
  std::vector<OcspEntry> entries;
  int64_t issued_at = 0;
  Signature issuer_signature{};

  Bytes signed_body() const {
    ByteWriter w;
    w.str("ocsp");
    w.str(issuer_id);
    w.u32(static_cast<uint32_t>(entries.size()));
    for (const auto &e : entries) {
      w.raw(e.serial.bytes);
      w.u8(static_cast<uint8_t>(e.status));
    }
    w.timestamp(issued_at);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.str(issuer_id);
    w.u32(static_cast<uint32_t>(entries.size()));
    for (const auto &e : entries) {
      w.raw(e.serial.bytes);
      w.u8(static_cast<uint8_t>(e.status));
    }
    w.timestamp(issued_at);
    w.raw(issuer_signature.bytes);
  }

  static OcspResponse decode(ByteReader &r) {
    OcspResponse m;
    m.issuer_id = r.str("ocsp_response.issuer_id");
    uint32_t n = r.u32("ocsp_response.count");
    if (n > 1000000)
      throw DecodeError("ocsp_response.count", "implausible count");
    m.entries.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
      r.raw(m.entries[i].serial.bytes, "ocsp_response.serial");
      uint8_t st = r.u8("ocsp_response.status");
      if (st > 2) throw DecodeError("ocsp_response.status", "unknown value");
      m.entries[i].status = static_cast<CredentialStatus>(st);
    }
    m.issued_at = r.timestamp("ocsp_response.issued_at");
    r.raw(m.issuer_signature.bytes, "ocsp_response.signature");
    return m;
  }
};

// ---- request gate ---------------------------------------------------------

// One round of the stateless token-chain gate: the client asks the service
// to advance its chain by one stage. The service never stores per-client
// state; everything needed to continue rides in the request.
struct PuzzleRequest {
  static constexpr const char *kName = "puzzle_request";
  Digest request_digest{};
  uint32_t stage = 0;           // index of the token being requested
  std::vector<Digest> chain;    // tokens for stages 0..stage-1

  void encode(ByteWriter &w) const {
    w.raw(request_digest.bytes);
    w.u32(stage);
    w.u32(static_cast<uint32_t>(chain.size()));
    for (const auto &t : chain) w.raw(t.bytes);
  }

  static PuzzleRequest decode(ByteReader &r) {
    PuzzleRequest m;
    r.raw(m.request_digest.bytes, "puzzle_request.request_digest");
    m.stage = r.u32("puzzle_request.stage");
    uint32_t n = r.u32("puzzle_request.chain_count");
    if (n > 1000)
      throw DecodeError("puzzle_request.chain_count", "implausible count");
    m.chain.resize(n);
    for (uint32_t i = 0; i < n; ++i)
      r.raw(m.chain[i].bytes, "puzzle_request.token");
    return m;
  }
};

struct PuzzleResponse {
  static constexpr const char *kName = "puzzle_response";
  Digest token{};
  uint32_t total_stages = 0;

  void encode(ByteWriter &w) const {
    w.raw(token.bytes);
    w.u32(total_stages);
  }
  static PuzzleResponse decode(ByteReader &r) {
    PuzzleResponse m;
    r.raw(m.token.bytes, "puzzle_response.token");
    m.total_stages = r.u32("puzzle_response.total_stages");
    return m;
  }
};

// ---- errors ---------------------------------------------------------------

struct ErrorResponse {
  static constexpr const char *kName = "error_response";
  uint16_t code = 0;
  std::string message;
  uint32_t aux = 0;  // puzzle_required: number of stages the gate expects

  void encode(ByteWriter &w) const {
    w.u16(code);
    w.str(message);
    w.u32(aux);
  }
  static ErrorResponse decode(ByteReader &r) {
    ErrorResponse m;
    m.code = r.u16("error_response.code");
    m.message = r.str("error_response.message");
    m.aux = r.u32("error_response.aux");
    return m;
  }
};

}  // namespace vpki
