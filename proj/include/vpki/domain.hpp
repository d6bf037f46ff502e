#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vpki/bytes.hpp"
#include "vpki/crypto.hpp"
#include "vpki/errors.hpp"

namespace vpki {

// How a ticket chains during identity resolution: a native ticket resolves
// directly to a long-term certificate at its issuer, a foreign one resolves
// to the ticket it was exchanged for (one more hop).
enum class TicketKind : uint8_t { native = 0, foreign = 1 };

enum class Policy : uint8_t { P1 = 1, P2 = 2, P3 = 3 };

inline const char *policy_name(Policy p) {
  switch (p) {
    case Policy::P1: return "P1";
    case Policy::P2: return "P2";
    case Policy::P3: return "P3";
  }
  return "?";
}

inline Policy parse_policy(const std::string &s) {
  if (s == "P1" || s == "p1") return Policy::P1;
  if (s == "P2" || s == "p2") return Policy::P2;
  if (s == "P3" || s == "p3") return Policy::P3;
  throw Error(Errc::invalid_argument, "unknown policy '" + s + "'");
}

// Commitment a requester makes to the authority a credential is destined
// for: H(authority id, random opening). The issuer that signs it cannot tell
// which authority is inside; the target authority checks the opening.
inline Digest authority_commitment(const std::string &authority_id,
                                   const RandomToken &rnd) {
  ByteWriter w;
  w.str(authority_id);
  w.raw(rnd.bytes);
  return sha256(w.peek());
}

struct LongTermCertificate {
  static constexpr const char *kName = "long_term_certificate";

  std::string subject_id;
  Bytes public_key;
  int64_t valid_from = 0;
  int64_t valid_to = 0;
  std::string issuer_id;
  Signature issuer_signature{};

  // Half-open validity: covers valid_from, excludes valid_to.
  bool covers(int64_t t) const { return valid_from <= t && t < valid_to; }

  Bytes signed_body() const {
    ByteWriter w;
    w.str("ltc");
    w.str(subject_id);
    w.blob(public_key);
    w.timestamp(valid_from);
    w.timestamp(valid_to);
    w.str(issuer_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.str(subject_id);
    w.blob(public_key);
    w.timestamp(valid_from);
    w.timestamp(valid_to);
    w.str(issuer_id);
    w.raw(issuer_signature.bytes);
  }

  static LongTermCertificate decode(ByteReader &r) {
    LongTermCertificate c;
    c.subject_id = r.str("ltc.subject_id");
    c.public_key = r.blob("ltc.public_key");
    c.valid_from = r.timestamp("ltc.valid_from");
    c.valid_to = r.timestamp("ltc.valid_to");
    c.issuer_id = r.str("ltc.issuer_id");
    r.raw(c.issuer_signature.bytes, "ltc.signature");
    return c;
  }
};

struct Ticket {
  static constexpr const char *kName = "ticket";

  RandomToken serial{};
  TicketKind kind = TicketKind::native;
  Digest target_digest{};  // commitment to the intended next authority
  Digest binding{};        // issuer-recomputable link back to the holder
  int64_t t_s = 0;
  int64_t t_e = 0;
  std::string issuer_id;
  Signature issuer_signature{};

  bool covers(int64_t t) const { return t_s <= t && t < t_e; }
  bool expired_at(int64_t t) const { return t >= t_e; }

  Bytes signed_body() const {
    ByteWriter w;
    w.str("tkt");
    w.raw(serial.bytes);
    w.u8(static_cast<uint8_t>(kind));
    w.raw(target_digest.bytes);
    w.raw(binding.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    w.str(issuer_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.raw(serial.bytes);
    w.u8(static_cast<uint8_t>(kind));
    w.raw(target_digest.bytes);
    w.raw(binding.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    w.str(issuer_id);
    w.raw(issuer_signature.bytes);
  }

  static Ticket decode(ByteReader &r) {
    Ticket t;
    r.raw(t.serial.bytes, "ticket.serial");
    uint8_t kind = r.u8("ticket.kind");
    if (kind > 1) throw DecodeError("ticket.kind", "unknown value");
    t.kind = static_cast<TicketKind>(kind);
    r.raw(t.target_digest.bytes, "ticket.target_digest");
    r.raw(t.binding.bytes, "ticket.binding");
    t.t_s = r.timestamp("ticket.t_s");
    t.t_e = r.timestamp("ticket.t_e");
    t.issuer_id = r.str("ticket.issuer_id");
    r.raw(t.issuer_signature.bytes, "ticket.signature");
    return t;
  }
};

struct Pseudonym {
  static constexpr const char *kName = "pseudonym";

  RandomToken serial{};
  Bytes public_key;
  Digest binding{};  // issuer-recomputable link back to the ticket
  int64_t t_s = 0;
  int64_t t_e = 0;
  std::string issuer_id;
  Signature issuer_signature{};

  bool covers(int64_t t) const { return t_s <= t && t < t_e; }
  bool expired_at(int64_t t) const { return t >= t_e; }

  Bytes signed_body() const {
    ByteWriter w;
    w.str("psn");
    w.raw(serial.bytes);
    w.blob(public_key);
    w.raw(binding.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    w.str(issuer_id);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.raw(serial.bytes);
    w.blob(public_key);
    w.raw(binding.bytes);
    w.timestamp(t_s);
    w.timestamp(t_e);
    w.str(issuer_id);
    w.raw(issuer_signature.bytes);
  }

  static Pseudonym decode(ByteReader &r) {
    Pseudonym p;
    r.raw(p.serial.bytes, "pseudonym.serial");
    p.public_key = r.blob("pseudonym.public_key");
    r.raw(p.binding.bytes, "pseudonym.binding");
    p.t_s = r.timestamp("pseudonym.t_s");
    p.t_e = r.timestamp("pseudonym.t_e");
    p.issuer_id = r.str("pseudonym.issuer_id");
    r.raw(p.issuer_signature.bytes, "pseudonym.signature");
    return p;
  }
};

// Issuance-policy parameters: gamma is the refill period, tau the lifetime
// of a single pseudonym, grid_epoch anchors the global alignment grid used
// by P3. gamma must be a whole number of tau slots for P2 and P3.
struct PolicyConfig {
  Policy policy = Policy::P1;
  int64_t gamma = 600;
  int64_t tau = 60;
  int64_t grid_epoch = 0;

  void validate() const {
    if (tau <= 0) throw Error(Errc::invalid_argument, "tau must be positive");
    if (gamma <= 0)
      throw Error(Errc::invalid_argument, "gamma must be positive");
    if ((policy == Policy::P2 || policy == Policy::P3) && gamma % tau != 0)
      throw Error(Errc::invalid_argument,
                  "gamma must be a multiple of tau for " +
                      std::string(policy_name(policy)));
  }

  // Full-unlinkability configuration: one pseudonym per refill.
  bool fully_unlinkable() const { return gamma == tau; }
};

// Revocation list segment. from_sequence == 0 means a full list; a delta
// carries only the serials revoked after from_sequence. to_sequence is the
// issuer's revocation counter at signing time.
struct Crl {
  static constexpr const char *kName = "crl";

  std::string issuer_id;
  uint64_t from_sequence = 0;
  uint64_t to_sequence = 0;
  std::vector<RandomToken> serials;
  int64_t issued_at = 0;
  Signature issuer_signature{};

  Bytes signed_body() const {
    ByteWriter w;
    w.str("crl");
    w.str(issuer_id);
    w.u64(from_sequence);
    w.u64(to_sequence);
    w.u32(static_cast<uint32_t>(serials.size()));
    for (const auto &s : serials) w.raw(s.bytes);
    w.timestamp(issued_at);
    return w.take();
  }

  void encode(ByteWriter &w) const {
    w.str(issuer_id);
    w.u64(from_sequence);
    w.u64(to_sequence);
    w.u32(static_cast<uint32_t>(serials.size()));
    for (const auto &s : serials) w.raw(s.bytes);
    w.timestamp(issued_at);
    w.raw(issuer_signature.bytes);
  }

  static Crl decode(ByteReader &r) {
    Crl c;
    c.issuer_id = r.str("crl.issuer_id");
    c.from_sequence = r.u64("crl.from_sequence");
    c.to_sequence = r.u64("crl.to_sequence");
    uint32_t n = r.u32("crl.count");
    c.serials.resize(n);
    for (uint32_t i = 0; i < n; ++i) r.raw(c.serials[i].bytes, "crl.serial");
    c.issued_at = r.timestamp("crl.issued_at");
    r.raw(c.issuer_signature.bytes, "crl.signature");
    return c;
  }
};

template <typename T>
Bytes encode_message(const T &m) {
  ByteWriter w;
  m.encode(w);
  return w.take();
}

template <typename T>
T decode_message(std::span<const uint8_t> buf) {
  ByteReader r(buf);
  T m = T::decode(r);
  r.expect_end(T::kName);
  return m;
}

template <typename T>
bool verify_issuer_signature(const T &m, std::span<const uint8_t> issuer_key) {
  return verify(issuer_key, m.signed_body(), m.issuer_signature);
}

template <typename T>
void sign_as_issuer(T &m, std::span<const uint8_t> issuer_private_key) {
  m.issuer_signature = sign(issuer_private_key, m.signed_body());
}

}  // namespace vpki
