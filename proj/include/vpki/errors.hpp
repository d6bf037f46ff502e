#pragma once

#include <stdexcept>
#include <string>

namespace vpki {

// Machine-readable failure classes. These travel over the wire in error
// responses, so code values are part of the protocol and must stay stable.
enum class Errc : uint16_t {
  ok = 0,
  decode = 1,            // malformed message
  auth = 2,              // signature or identity check failed
  freshness = 3,         // timestamp outside the accepted skew window
  replay = 4,            // nonce or single-use credential seen before
  sybil_rejected = 5,    // overlapping credential interval for the subject
  wrong_target = 6,      // credential bound to a different authority
  policy = 7,            // interval violates the active issuance policy
  possession = 8,        // proof-of-possession check failed
  arity = 9,             // wrong number of keys for the requested interval
  not_found = 10,        // unknown subject / serial
  conflict = 11,         // subject already registered
  expired = 12,          // credential outside its validity period
  revoked = 13,          // credential has been revoked
  tamper = 14,           // recomputed binding digest does not match
  puzzle_required = 15,  // request gate is active and no token chain attached
  puzzle_invalid = 16,   // token chain failed verification
  batch_limit = 17,      // request exceeds a configured batch cap
  unauthorized = 18,     // caller lacks the role for this operation
  invalid_argument = 19, // caller passed an out-of-contract value
  unavailable = 20,      // dependency could not be reached
  internal = 21,         // unexpected server-side failure
};

inline const char *errc_name(Errc c) {
  switch (c) {
    case Errc::ok: return "ok";
    case Errc::decode: return "decode";
    case Errc::auth: return "auth";
    case Errc::freshness: return "freshness";
    case Errc::replay: return "replay";
    case Errc::sybil_rejected: return "sybil_rejected";
    case Errc::wrong_target: return "wrong_target";
    case Errc::policy: return "policy";
    case Errc::possession: return "possession";
    case Errc::arity: return "arity";
    case Errc::not_found: return "not_found";
    case Errc::conflict: return "conflict";
    case Errc::expired: return "expired";
    case Errc::revoked: return "revoked";
    case Errc::tamper: return "tamper";
    case Errc::puzzle_required: return "puzzle_required";
    case Errc::puzzle_invalid: return "puzzle_invalid";
    case Errc::batch_limit: return "batch_limit";
    case Errc::unauthorized: return "unauthorized";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::unavailable: return "unavailable";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string &detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code), detail_(detail) {}
  Errc code() const { return code_; }
  const std::string &detail() const { return detail_; }

private:
  Errc code_;
  std::string detail_;
};

// Raised by the resolution authority when a recomputed binding digest does
// not match the one a service returned; names the dishonest authority.
class TamperEvidence : public Error {
public:
  TamperEvidence(const std::string &authority_id, const std::string &detail)
      : Error(Errc::tamper, "authority '" + authority_id + "': " + detail),
        authority_id_(authority_id) {}
  const std::string &authority_id() const { return authority_id_; }

private:
  std::string authority_id_;
};

// HTTP status used when a service error crosses the wire.
inline int http_status_for(Errc c) {
  switch (c) {
    case Errc::ok: return 200;
    case Errc::decode:
    case Errc::invalid_argument:
    case Errc::arity: return 400;
    case Errc::auth:
    case Errc::freshness: return 401;
    case Errc::unauthorized:
    case Errc::sybil_rejected:
    case Errc::replay:
    case Errc::wrong_target:
    case Errc::policy:
    case Errc::possession:
    case Errc::expired:
    case Errc::revoked:
    case Errc::tamper: return 403;
    case Errc::not_found: return 404;
    case Errc::conflict: return 409;
    case Errc::batch_limit: return 413;
    case Errc::puzzle_required:
    case Errc::puzzle_invalid: return 428;
    case Errc::unavailable: return 503;
    case Errc::internal: return 500;
  }
  return 500;
}

}  // namespace vpki
