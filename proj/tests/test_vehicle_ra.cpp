#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <thread>

#include "vpki/ltca.hpp"
#include "vpki/pca.hpp"
#include "vpki/ra.hpp"
#include "vpki/vehicle.hpp"

using namespace vpki;

namespace {

// Passes responses through unchanged until armed with a mutator; used to
// model an authority that answers with a valid signature over a lie, and a
// network that corrupts messages outright.
class MutatingChannel : public Channel {
public:
  MutatingChannel(WireService &service, Clock clock)
      : inner_(service, std::move(clock)) {}

  void arm(std::function<void(MessageEnvelope &)> mutate) {
    mutate_ = std::move(mutate);
  }

  MessageEnvelope roundtrip(const MessageEnvelope &request) override {
    MessageEnvelope resp = inner_.roundtrip(request);
    if (mutate_) mutate_(resp);
    return resp;
  }

private:
  InProcessChannel inner_;
  std::function<void(MessageEnvelope &)> mutate_;
};

// Two domains, one resolution authority, everything talking over channels.
struct World {
  int64_t now = 100000;
  Clock clk = [this] { return now; };

  KeyPair hl_keys = generate_keypair();   // home ticket authority
  KeyPair hp_keys = generate_keypair();   // home pseudonym authority
  KeyPair rl_keys = generate_keypair();   // remote ticket authority
  KeyPair rp_keys = generate_keypair();   // remote pseudonym authority
  KeyPair ra_keys = generate_keypair();

  std::shared_ptr<Registry> registry = std::make_shared<Registry>();
  std::unique_ptr<Ltca> hl, rl;
  std::unique_ptr<Pca> hp, rp;
  std::unique_ptr<MutatingChannel> ch_hl, ch_hp, ch_rl, ch_rp;
  std::unique_ptr<ResolutionAuthority> ra;

  explicit World(PolicyConfig policy = {Policy::P1, 600, 60, 0},
                 GateConfig gate = {}) {
    registry->add({"ltca-home", AuthorityKind::ltca, "home", "",
                   hl_keys.public_key});
    registry->add({"pca-home", AuthorityKind::pca, "home", "",
                   hp_keys.public_key});
    registry->add({"ltca-remote", AuthorityKind::ltca, "remote", "",
                   rl_keys.public_key});
    registry->add({"pca-remote", AuthorityKind::pca, "remote", "",
                   rp_keys.public_key});
    registry->add({"ra-root", AuthorityKind::ra, "", "", ra_keys.public_key});

    hl = std::make_unique<Ltca>(LtcaConfig{"ltca-home", "home"}, hl_keys,
                                registry, clk);
    rl = std::make_unique<Ltca>(LtcaConfig{"ltca-remote", "remote"}, rl_keys,
                                registry, clk);
    PcaConfig hc;
    hc.id = "pca-home";
    hc.domain = "home";
    hc.policy = policy;
    hc.gate = gate;
    hp = std::make_unique<Pca>(hc, hp_keys, registry, clk);
    PcaConfig rc;
    rc.id = "pca-remote";
    rc.domain = "remote";
    rc.policy = policy;
    rp = std::make_unique<Pca>(rc, rp_keys, registry, clk);

    ch_hl = std::make_unique<MutatingChannel>(*hl, clk);
    ch_hp = std::make_unique<MutatingChannel>(*hp, clk);
    ch_rl = std::make_unique<MutatingChannel>(*rl, clk);
    ch_rp = std::make_unique<MutatingChannel>(*rp, clk);

    ra = std::make_unique<ResolutionAuthority>(RaConfig{}, ra_keys, registry,
                                               clk);
    ra->set_channel("ltca-home", *ch_hl);
    ra->set_channel("pca-home", *ch_hp);
    ra->set_channel("ltca-remote", *ch_rl);
    ra->set_channel("pca-remote", *ch_rp);
  }

  std::unique_ptr<VehicleClient> vehicle(
      const std::string &id, PolicyConfig policy = {Policy::P1, 600, 60, 0}) {
    VehicleConfig vc;
    vc.subject_id = id;
    vc.policy = policy;
    auto v = std::make_unique<VehicleClient>(vc, registry, clk);
    v->set_channel("ltca-home", *ch_hl);
    v->set_channel("pca-home", *ch_hp);
    v->set_channel("ltca-remote", *ch_rl);
    v->set_channel("pca-remote", *ch_rp);
    v->enroll();
    return v;
  }
};

Errc code_of(const std::function<void()> &fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.code();
  }
  return Errc::ok;
}

}  // namespace

TEST_CASE("a vehicle acquires and verifies a full trip of credentials") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;

  int64_t dep = w.now, dur = 870;  // deliberately not a whole slot count
  RequestPlan plan = v.plan(dep, dur);
  REQUIRE(plan.entries.size() == 1);
  AcquireOutcome out = v.acquire(plan.entries[0]);

  CHECK(out.pseudonym_count == 15);
  CHECK_FALSE(out.solved_gate);
  REQUIRE(v.held().size() == 15);
  CHECK(v.latencies_ms().size() == 1);
  CHECK(v.latencies_ms()[0] > 0.0);

  // Exactly one pseudonym covers each instant of the trip, none outside it.
  CHECK(v.current_pseudonym(dep - 1) == nullptr);
  CHECK(v.current_pseudonym(dep + dur) == nullptr);
  for (int64_t at = dep; at < dep + dur; at += 10) {
    const HeldPseudonym *h = v.current_pseudonym(at);
    REQUIRE(h != nullptr);
    CHECK(h->pseudonym.covers(at));
    // The private key matches the credential the vehicle would present.
    Bytes probe = {0x01, 0x02, 0x03};
    CHECK(verify(h->pseudonym.public_key, probe,
                 sign(h->keys.private_key, probe)));
  }
  CHECK(v.unused_after(dep + dur) == 0);
}

TEST_CASE("batched acquisition leaves only the planned surplus") {
  PolicyConfig p2{Policy::P2, 600, 60, 0};
  World w(p2);
  auto vp = w.vehicle("v-home", p2);
  VehicleClient &v = *vp;

  int64_t dep = w.now, dur = 900;
  RequestPlan plan = v.plan(dep, dur);
  REQUIRE(plan.entries.size() == 2);
  for (const auto &entry : plan.entries) {
    w.now = entry.request_time;
    v.acquire(entry);
  }
  CHECK(v.held().size() == 20);
  CHECK(v.unused_after(dep + dur) == 5);
  CHECK(v.latencies_ms().size() == 2);
}

TEST_CASE("window-aligned acquisition tracks the grid") {
  PolicyConfig p3{Policy::P3, 600, 60, 0};
  World w(p3);
  auto vp = w.vehicle("v-home", p3);
  VehicleClient &v = *vp;

  int64_t dep = w.now, dur = 900;  // trip [100000, 100900)
  RequestPlan plan = v.plan(dep, dur);
  REQUIRE(plan.entries.size() == 3);
  size_t total = 0;
  for (const auto &entry : plan.entries) {
    w.now = entry.request_time;
    total += v.acquire(entry).pseudonym_count;
  }
  CHECK(total == 24);
  CHECK(v.held().size() == 24);
  CHECK(v.unused_after(dep + dur) == 9);

  // Coverage is gapless from departure to trip end despite the grid lead-in.
  for (int64_t at = dep; at < dep + dur; at += 10)
    CHECK(v.current_pseudonym(at) != nullptr);
}

TEST_CASE("a visiting vehicle trades its ticket and buys locally") {
  World w;
  auto vp = w.vehicle("v-traveler");
  VehicleClient &v = *vp;

  PlanEntry entry{w.now, w.now, w.now + 600, 10};
  AcquireOutcome out = v.acquire_foreign(entry, "ltca-remote", "pca-remote");

  CHECK(out.pseudonym_count == 10);
  REQUIRE(v.held().size() == 10);
  for (const auto &h : v.held()) {
    CHECK(h.pseudonym.issuer_id == "pca-remote");
    CHECK(verify_issuer_signature(h.pseudonym, w.rp_keys.public_key));
  }
  CHECK(w.rp->issued_count() == 10);
  CHECK(w.hp->issued_count() == 0);
}

TEST_CASE("the request gate is solved transparently when demanded") {
  GateConfig gate;
  gate.enabled = true;
  World w({Policy::P1, 600, 60, 0}, gate);
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;

  AcquireOutcome out = v.acquire({w.now, w.now, w.now + 600, 10});
  CHECK(out.solved_gate);
  CHECK(out.pseudonym_count == 10);
  CHECK(v.held().size() == 10);
}

TEST_CASE("the key pool hands out keys and refills in the background") {
  KeyPool pool(4);
  pool.prefill(6);
  CHECK(pool.available() == 6);

  auto got = pool.take(4);
  CHECK(got.size() == 4);
  CHECK(pool.available() == 2);

  // Taking more than the pool holds still succeeds (inline generation).
  got = pool.take(5);
  CHECK(got.size() == 5);
  CHECK(pool.available() == 0);

  pool.start_refill();
  for (int i = 0; i < 200 && pool.available() < 4; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  CHECK(pool.available() >= 4);
  pool.stop_refill();
}

TEST_CASE("a vehicle without a configured channel fails cleanly") {
  World w;
  VehicleConfig vc;
  vc.subject_id = "v-lost";
  VehicleClient v(vc, w.registry, w.clk);
  CHECK(code_of([&] { v.enroll(); }) == Errc::unavailable);
}

TEST_CASE("resolution walks the home chain back to the subject") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;
  v.acquire({w.now, w.now, w.now + 600, 10});

  ResolutionResult r = w.ra->resolve(v.held()[3].pseudonym);
  CHECK(r.ltc.subject_id == "v-home");
  REQUIRE(r.hops.size() == 2);
  CHECK(r.hops[0].authority_id == "pca-home");
  CHECK(r.hops[1].authority_id == "ltca-home");
}

TEST_CASE("resolution walks the foreign chain through both domains") {
  World w;
  auto vp = w.vehicle("v-traveler");
  VehicleClient &v = *vp;
  v.acquire_foreign({w.now, w.now, w.now + 600, 10}, "ltca-remote",
                    "pca-remote");

  ResolutionResult r = w.ra->resolve(v.held()[0].pseudonym);
  CHECK(r.ltc.subject_id == "v-traveler");
  REQUIRE(r.hops.size() == 3);
  CHECK(r.hops[0].authority_id == "pca-remote");
  CHECK(r.hops[1].authority_id == "ltca-remote");
  CHECK(r.hops[2].authority_id == "ltca-home");
}

TEST_CASE("resolution with revocation cuts off credentials and subject") {
  World w;
  auto vp = w.vehicle("v-rogue");
  VehicleClient &v = *vp;
  int64_t dep = w.now;
  v.acquire({dep, dep, dep + 600, 10});

  w.now = dep + 250;  // four slots already behind us
  const HeldPseudonym *h = v.current_pseudonym(w.now);
  REQUIRE(h != nullptr);

  ResolutionResult r = w.ra->resolve(h->pseudonym, true, true);
  CHECK(r.ltc.subject_id == "v-rogue");
  // Expired slots stay off the list; the current and future ones go on it.
  CHECK(w.hp->revoked_count() == 6);
  // The subject is blocked from new tickets after the home-authority hop.
  CHECK(code_of([&] {
          v.acquire({w.now, w.now + 600, w.now + 1200, 10});
        }) == Errc::revoked);
}

TEST_CASE("an issuing authority lying about a binding is caught by name") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;
  v.acquire({w.now, w.now, w.now + 600, 10});
  Pseudonym p = v.held()[0].pseudonym;

  // Valid signature over a wrong opening: only the authority itself can
  // produce this, so the mismatch is evidence against it.
  w.ch_hp->arm([&](MessageEnvelope &env) {
    if (env.op != Op::resolve_pseudonym_response) return;
    auto m = decode_message<ResolvePseudonymResponse>(env.payload);
    m.binding_rnd = random_token();
    m.authority_signature = sign(w.hp_keys.private_key, m.signed_body());
    env.payload = encode_message(m);
  });

  try {
    w.ra->resolve(p);
    FAIL("tampered resolution was accepted");
  } catch (const TamperEvidence &e) {
    CHECK(e.authority_id() == "pca-home");
  }
}

TEST_CASE("a home ticket authority lying about the credential is caught") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;
  v.acquire({w.now, w.now, w.now + 600, 10});
  Pseudonym p = v.held()[0].pseudonym;

  w.ch_hl->arm([&](MessageEnvelope &env) {
    if (env.op != Op::resolve_ticket_response) return;
    auto m = decode_message<ResolveTicketResponse>(env.payload);
    m.binding_rnd = random_token();
    m.authority_signature = sign(w.hl_keys.private_key, m.signed_body());
    env.payload = encode_message(m);
  });

  try {
    w.ra->resolve(p);
    FAIL("tampered resolution was accepted");
  } catch (const TamperEvidence &e) {
    CHECK(e.authority_id() == "ltca-home");
  }
}

TEST_CASE("a lying middle authority in a foreign chain is caught") {
  World w;
  auto vp = w.vehicle("v-traveler");
  VehicleClient &v = *vp;
  v.acquire_foreign({w.now, w.now, w.now + 600, 10}, "ltca-remote",
                    "pca-remote");
  Pseudonym p = v.held()[0].pseudonym;

  w.ch_rl->arm([&](MessageEnvelope &env) {
    if (env.op != Op::resolve_ticket_response) return;
    auto m = decode_message<ResolveTicketResponse>(env.payload);
    m.binding_rnd = random_token();
    m.authority_signature = sign(w.rl_keys.private_key, m.signed_body());
    env.payload = encode_message(m);
  });

  try {
    w.ra->resolve(p);
    FAIL("tampered resolution was accepted");
  } catch (const TamperEvidence &e) {
    CHECK(e.authority_id() == "ltca-remote");
  }
}

TEST_CASE("a corrupted response signature is an auth failure, not evidence") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;
  v.acquire({w.now, w.now, w.now + 600, 10});
  Pseudonym p = v.held()[0].pseudonym;

  // Same lie, but without the authority's signature over it: that only
  // convicts the network, so it must not read as tamper evidence.
  w.ch_hp->arm([&](MessageEnvelope &env) {
    if (env.op != Op::resolve_pseudonym_response) return;
    auto m = decode_message<ResolvePseudonymResponse>(env.payload);
    m.binding_rnd = random_token();
    env.payload = encode_message(m);
  });

  try {
    w.ra->resolve(p);
    FAIL("corrupted resolution was accepted");
  } catch (const TamperEvidence &) {
    FAIL("network corruption misread as authority evidence");
  } catch (const Error &e) {
    CHECK(e.code() == Errc::auth);
  }
}

TEST_CASE("the vehicle refuses a ticket whose binding does not open") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;

  w.ch_hl->arm([&](MessageEnvelope &env) {
    if (env.op != Op::ticket_response) return;
    auto m = decode_message<TicketResponse>(env.payload);
    m.binding_rnd = random_token();
    env.payload = encode_message(m);
  });

  try {
    v.acquire({w.now, w.now, w.now + 600, 10});
    FAIL("unopenable ticket was accepted");
  } catch (const TamperEvidence &e) {
    CHECK(e.authority_id() == "ltca-home");
  }
  CHECK(v.held().empty());
}

TEST_CASE("the vehicle refuses pseudonyms that deviate from the plan") {
  World w;
  auto vp = w.vehicle("v-home");
  VehicleClient &v = *vp;

  SECTION("shifted slot breaks the issuer signature") {
    w.ch_hp->arm([&](MessageEnvelope &env) {
      if (env.op != Op::pseudonym_response) return;
      auto m = decode_message<PseudonymResponse>(env.payload);
      m.pseudonyms[2].t_s += 60;
      env.payload = encode_message(m);
    });
    CHECK(code_of([&] {
            v.acquire({w.now, w.now, w.now + 600, 10});
          }) == Errc::auth);
  }

  SECTION("re-signed shifted slot still fails the plan check") {
    w.ch_hp->arm([&](MessageEnvelope &env) {
      if (env.op != Op::pseudonym_response) return;
      auto m = decode_message<PseudonymResponse>(env.payload);
      m.pseudonyms[2].t_s += 60;
      m.pseudonyms[2].issuer_signature =
          sign(w.hp_keys.private_key, m.pseudonyms[2].signed_body());
      env.payload = encode_message(m);
    });
    CHECK(code_of([&] {
            v.acquire({w.now, w.now, w.now + 600, 10});
          }) == Errc::auth);
  }

  SECTION("unopenable pseudonym binding is evidence against the issuer") {
    w.ch_hp->arm([&](MessageEnvelope &env) {
      if (env.op != Op::pseudonym_response) return;
      auto m = decode_message<PseudonymResponse>(env.payload);
      m.binding_rnds[4] = random_token();
      env.payload = encode_message(m);
    });
    try {
      v.acquire({w.now, w.now, w.now + 600, 10});
      FAIL("unopenable pseudonym was accepted");
    } catch (const TamperEvidence &e) {
      CHECK(e.authority_id() == "pca-home");
    }
  }

  CHECK(v.held().empty());
}
