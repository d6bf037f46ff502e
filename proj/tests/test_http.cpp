#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <thread>
#include <vector>

#include "vpki/http.hpp"
#include "vpki/ltca.hpp"
#include "vpki/pca.hpp"
#include "vpki/ra.hpp"
#include "vpki/vehicle.hpp"

using namespace vpki;

namespace {

struct HttpWorld {
  int64_t now = 100000;
  Clock clk = [this] { return now; };

  KeyPair ltca_keys = generate_keypair();
  KeyPair pca_keys = generate_keypair();
  KeyPair ra_keys = generate_keypair();
  std::shared_ptr<Registry> registry = std::make_shared<Registry>();
  std::unique_ptr<Ltca> ltca;
  std::unique_ptr<Pca> pca;
  std::unique_ptr<HttpServer> ltca_srv, pca_srv;
  int ltca_port = 0, pca_port = 0;

  HttpWorld() {
    registry->add({"ltca-home", AuthorityKind::ltca, "home", "",
                   ltca_keys.public_key});
    registry->add({"pca-home", AuthorityKind::pca, "home", "",
                   pca_keys.public_key});
    registry->add({"ra-root", AuthorityKind::ra, "", "", ra_keys.public_key});
    ltca = std::make_unique<Ltca>(LtcaConfig{"ltca-home", "home"}, ltca_keys,
                                  registry, clk);
    PcaConfig pc;
    pc.id = "pca-home";
    pc.domain = "home";
    pc.policy = {Policy::P1, 600, 60, 0};
    pca = std::make_unique<Pca>(pc, pca_keys, registry, clk);

    ltca_srv = std::make_unique<HttpServer>(*ltca, AuthorityKind::ltca, clk);
    pca_srv = std::make_unique<HttpServer>(*pca, AuthorityKind::pca, clk);
    ltca_port = ltca_srv->start();
    pca_port = pca_srv->start();
  }

  // Channels are per-thread; make a fresh pair for each client.
  std::unique_ptr<VehicleClient> vehicle(const std::string &id,
                                         HttpChannel &lc, HttpChannel &pc) {
    VehicleConfig vc;
    vc.subject_id = id;
    vc.policy = {Policy::P1, 600, 60, 0};
    auto v = std::make_unique<VehicleClient>(vc, registry, clk);
    v->set_channel("ltca-home", lc);
    v->set_channel("pca-home", pc);
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

TEST_CASE("the full protocol runs over sockets") {
  HttpWorld w;
  HttpChannel lc("127.0.0.1", w.ltca_port, AuthorityKind::ltca);
  HttpChannel pc("127.0.0.1", w.pca_port, AuthorityKind::pca);
  auto v = w.vehicle("v-http", lc, pc);

  AcquireOutcome out = v->acquire({w.now, w.now, w.now + 600, 10});
  CHECK(out.pseudonym_count == 10);
  CHECK(v->held().size() == 10);

  // Resolution rides the same transport.
  ResolutionAuthority ra(RaConfig{}, w.ra_keys, w.registry, w.clk);
  ra.set_channel("ltca-home", lc);
  ra.set_channel("pca-home", pc);
  ResolutionResult r = ra.resolve(v->held()[0].pseudonym);
  CHECK(r.ltc.subject_id == "v-http");
  REQUIRE(r.hops.size() == 2);
}

TEST_CASE("typed rejects survive the socket hop") {
  HttpWorld w;
  HttpChannel lc("127.0.0.1", w.ltca_port, AuthorityKind::ltca);
  HttpChannel pc("127.0.0.1", w.pca_port, AuthorityKind::pca);
  auto v = w.vehicle("v-http", lc, pc);
  v->acquire({w.now, w.now, w.now + 600, 10});

  // A second request for an overlapping interval is refused exactly as it
  // would be in process.
  CHECK(code_of([&] {
          v->acquire({w.now, w.now + 300, w.now + 900, 10});
        }) == Errc::sybil_rejected);
}

TEST_CASE("http surface polices its endpoints") {
  HttpWorld w;
  httplib::Client raw("127.0.0.1", w.ltca_port);

  SECTION("health endpoint answers") {
    auto res = raw.Get("/healthz");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "ok");
  }

  SECTION("garbage bodies get a decode error envelope and a 400") {
    std::string junk("\x00\x03not-an-envelope", 18);
    auto res = raw.Post("/ticket", junk, "application/octet-stream");
    REQUIRE(res);
    CHECK(res->status == 400);
  }

  SECTION("an operation posted to the wrong endpoint is refused") {
    MessageEnvelope env =
        make_request(Op::ticket_request, CrlRequest{0}, w.now);
    Bytes body = encode_message(env);
    auto res = raw.Post("/register", std::string(body.begin(), body.end()),
                        "application/octet-stream");
    REQUIRE(res);
    CHECK(res->status == 404);
  }
}

TEST_CASE("concurrent clients share the worker pool") {
  HttpWorld w;
  constexpr int kVehicles = 6;
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < kVehicles; ++i) {
    threads.emplace_back([&, i] {
      try {
        HttpChannel lc("127.0.0.1", w.ltca_port, AuthorityKind::ltca);
        HttpChannel pc("127.0.0.1", w.pca_port, AuthorityKind::pca);
        auto v = w.vehicle("v-" + std::to_string(i), lc, pc);
        if (v->acquire({w.now, w.now, w.now + 600, 10}).pseudonym_count == 10)
          ++ok;
      } catch (...) {
      }
    });
  }
  for (auto &t : threads) t.join();
  CHECK(ok == kVehicles);
  CHECK(w.pca->issued_count() == kVehicles * 10);
}
