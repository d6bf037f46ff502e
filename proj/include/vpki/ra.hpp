#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/crypto.hpp"
#include "vpki/domain.hpp"
#include "vpki/errors.hpp"
#include "vpki/registry.hpp"
#include "vpki/store.hpp"
#include "vpki/wire.hpp"

namespace vpki {

struct RaConfig {
  std::string id = "ra-root";
  int64_t skew = kDefaultSkew;
  // Longest credential chain this authority will walk. A pseudonym resolves
  // through at most: issuing authority -> visited-domain ticket authority ->
  // home ticket authority. Anything longer means someone forged a loop.
  size_t max_hops = 4;
  std::string audit_path;  // append-only audit log; empty = keep in memory only
};

// One authority contact made during a resolution.
struct ResolutionHop {
  std::string authority_id;
  std::string revealed;  // "ticket <serial>" or "credential <subject>"
};

struct ResolutionResult {
  LongTermCertificate ltc;  // the identity at the end of the chain
  std::vector<ResolutionHop> hops;
};

// Walks a pseudonym back to the enrolled identity behind it. Each authority
// on the chain reveals only its own link, and every reveal is checked by
// recomputing the binding digest locally: a mismatch is held against the
// authority that produced it, not silently dropped.
class ResolutionAuthority {
public:
  ResolutionAuthority(RaConfig config, KeyPair keys,
                      std::shared_ptr<const Registry> registry, Clock clock)
      : cfg_(std::move(config)), keys_(std::move(keys)),
        registry_(std::move(registry)), clock_(std::move(clock)),
        audit_(cfg_.audit_path) {}

  void set_channel(const std::string &authority_id, Channel &ch) {
    channels_[authority_id] = &ch;
  }

  const std::string &id() const { return cfg_.id; }

  // Resolve a pseudonym to the identity that requested it. With
  // revoke_pseudonyms the issuing authority also lists every still-valid
  // sibling pseudonym of the same ticket; with revoke_credential the home
  // authority additionally blocks the subject from new tickets.
  ResolutionResult resolve(const Pseudonym &pseudonym,
                           bool revoke_pseudonyms = false,
                           bool revoke_credential = false) {
    ResolutionResult result;

    // Step one: the pseudonym's issuer reveals the ticket that paid for it.
    ResolvePseudonymRequest prq;
    prq.requester_id = cfg_.id;
    prq.pseudonym = pseudonym;
    prq.revoke = revoke_pseudonyms ? 1 : 0;
    prq.requester_signature = sign(keys_.private_key, prq.signed_body());
    auto pr = call<ResolvePseudonymResponse>(
        pseudonym.issuer_id, Op::resolve_pseudonym_request,
        Op::resolve_pseudonym_response, prq);
    if (!verify(registry_->public_key_of(pseudonym.issuer_id),
                pr.signed_body(), pr.authority_signature))
      throw Error(Errc::auth, "resolution response signature check failed");
    if (compute_pseudonym_binding(pr.ticket.binding, pseudonym.public_key,
                                  pseudonym.t_s, pseudonym.t_e,
                                  pr.binding_rnd) != pseudonym.binding)
      throw TamperEvidence(pseudonym.issuer_id,
                           "revealed ticket does not open the pseudonym "
                           "binding");
    result.hops.push_back(
        {pseudonym.issuer_id, "ticket " + pr.ticket.serial.hex()});

    // Step two: walk tickets back to the home authority. A foreign ticket
    // chains to the home-domain ticket it was traded for; a native ticket
    // chains to the enrolled credential.
    Ticket current = pr.ticket;
    for (size_t hop = 0; hop < cfg_.max_hops; ++hop) {
      ResolveTicketRequest trq;
      trq.requester_id = cfg_.id;
      trq.has_ticket = 1;
      trq.ticket = current;
      trq.revoke = revoke_credential ? 1 : 0;
      trq.requester_signature = sign(keys_.private_key, trq.signed_body());
      auto tr = call<ResolveTicketResponse>(current.issuer_id,
                                            Op::resolve_ticket_request,
                                            Op::resolve_ticket_response, trq);
      if (!verify(registry_->public_key_of(current.issuer_id),
                  tr.signed_body(), tr.authority_signature))
        throw Error(Errc::auth, "resolution response signature check failed");

      if (tr.chains_to_ticket) {
        if (compute_ticket_binding(encode_message(*tr.chained_ticket),
                                   current.t_s, current.t_e,
                                   tr.binding_rnd) != current.binding)
          throw TamperEvidence(current.issuer_id,
                               "revealed ticket does not open the presented "
                               "ticket's binding");
        result.hops.push_back(
            {current.issuer_id, "ticket " + tr.chained_ticket->serial.hex()});
        current = *tr.chained_ticket;
        continue;
      }

      if (compute_ticket_binding(encode_message(*tr.ltc), current.t_s,
                                 current.t_e,
                                 tr.binding_rnd) != current.binding)
        throw TamperEvidence(current.issuer_id,
                             "revealed credential does not open the ticket "
                             "binding");
      if (!verify_issuer_signature(
              *tr.ltc, registry_->public_key_of(tr.ltc->issuer_id)))
        throw Error(Errc::auth, "revealed credential signature check failed");
      result.hops.push_back(
          {current.issuer_id, "credential " + tr.ltc->subject_id});
      result.ltc = *tr.ltc;
      audit(pseudonym, result, revoke_pseudonyms, revoke_credential);
      return result;
    }
    throw Error(Errc::internal, "resolution chain exceeded the hop limit");
  }

private:
  void audit(const Pseudonym &pseudonym, const ResolutionResult &result,
             bool revoked_pseudonyms, bool revoked_credential) {
    nlohmann::json hops = nlohmann::json::array();
    for (const auto &h : result.hops)
      hops.push_back({{"authority", h.authority_id}, {"revealed", h.revealed}});
    audit_.append({{"at", clock_()},
                   {"pseudonym", pseudonym.serial.hex()},
                   {"subject", result.ltc.subject_id},
                   {"hops", hops},
                   {"revoked_pseudonyms", revoked_pseudonyms},
                   {"revoked_credential", revoked_credential}});
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

  RaConfig cfg_;
  KeyPair keys_;
  std::shared_ptr<const Registry> registry_;
  Clock clock_;
  JsonlStore audit_;
  std::map<std::string, Channel *> channels_;
};

}  // namespace vpki
