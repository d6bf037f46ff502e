#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <json.hpp>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/http.hpp"
#include "vpki/linkability.hpp"
#include "vpki/ltca.hpp"
#include "vpki/pca.hpp"
#include "vpki/policy.hpp"
#include "vpki/stats.hpp"
#include "vpki/trace.hpp"
#include "vpki/vehicle.hpp"

namespace vpki {

// ---- trace replay ----------------------------------------------------------

struct ReplayConfig {
  PolicyConfig policy{};
  double compression = 1.0;   // trace seconds per wall second
  size_t workers = 64;        // event executors; hard cap applies
  bool over_http = false;     // sockets instead of in-process dispatch
  size_t server_workers = 8;  // http worker pool, when over_http
  double failure_budget = 0.01;
  GateConfig gate{};

  static constexpr size_t kWorkerCap = 512;

  // Freshness window that survives the compressed timeline. The check
  // guards against stale messages, i.e. wall-clock delay; under a
  // compression of C every wall second ages a message by C trace seconds,
  // so the window scales to keep a constant two wall seconds of slack.
  int64_t effective_skew() const {
    return std::max<int64_t>(
        kDefaultSkew, static_cast<int64_t>(std::ceil(2.0 * compression)));
  }
};

struct ReplayResult {
  size_t vehicles = 0;
  size_t entries = 0;
  size_t failures = 0;
  size_t pseudonyms_issued = 0;
  size_t pseudonyms_unused = 0;
  size_t expected_unused = 0;
  bool conservation_ok = true;
  bool within_failure_budget = true;
  double wall_seconds = 0;
  LatencyReport latency;
  std::map<std::string, size_t> failure_breakdown;
  Transcript transcript;
  GroundTruth truth;
  nlohmann::json ltca_ledger;
  nlohmann::json pca_ledger;

  nlohmann::json to_json() const {
    nlohmann::json fails = nlohmann::json::object();
    for (const auto &[what, n] : failure_breakdown) fails[what] = n;
    return {{"vehicles", vehicles},
            {"entries", entries},
            {"failures", failures},
            {"failure_breakdown", fails},
            {"pseudonyms_issued", pseudonyms_issued},
            {"pseudonyms_unused", pseudonyms_unused},
            {"expected_unused", expected_unused},
            {"conservation_ok", conservation_ok},
            {"within_failure_budget", within_failure_budget},
            {"wall_seconds", wall_seconds},
            {"latency", latency.to_json()}};
  }
};

// Replays a trip trace against a freshly stood-up domain: every trip plans
// its credential requests under the policy, and each request fires at its
// trace time (compressed onto the wall clock) through a worker pool.
// Acquisition latency is measured inside the vehicle, from ticket request
// to fully verified pseudonyms.
inline ReplayResult run_replay(const ReplayConfig &cfg,
                               const std::vector<TraceRecord> &records) {
  if (records.empty())
    throw Error(Errc::invalid_argument, "empty trace");
  ReplayConfig c = cfg;
  c.policy.validate();
  if (c.compression <= 0)
    throw Error(Errc::invalid_argument, "compression must be positive");
  c.workers = std::min(std::max<size_t>(c.workers, 1),
                       ReplayConfig::kWorkerCap);
  const int64_t skew = c.effective_skew();

  // Plan every trip up front; the event queue holds one entry per request.
  struct VehicleState {
    std::unique_ptr<VehicleClient> client;
    RequestPlan plan;
    int64_t trip_end = 0;
    std::mutex mu;
    size_t failed = 0;
  };
  struct Event {
    int64_t at;
    size_t vehicle;
    PlanEntry entry;
    bool operator>(const Event &o) const { return at > o.at; }
  };

  int64_t first_departure = records.front().departure;
  for (const auto &r : records)
    first_departure = std::min(first_departure, r.departure);

  // Lead time before the first departure covers enrollment and key
  // prefill, which run on the compressed clock too.
  int64_t lead = std::max<int64_t>(
      10, static_cast<int64_t>(std::ceil(
              c.compression * (0.003 * static_cast<double>(records.size())))));
  SimClock sim(first_departure - lead, c.compression);

  KeyPair ltca_keys = generate_keypair();
  KeyPair pca_keys = generate_keypair();
  auto registry = std::make_shared<Registry>();
  registry->add({"ltca-home", AuthorityKind::ltca, "home", "",
                 ltca_keys.public_key});
  registry->add({"pca-home", AuthorityKind::pca, "home", "",
                 pca_keys.public_key});

  LtcaConfig lc{"ltca-home", "home"};
  lc.skew = skew;
  Ltca ltca(lc, ltca_keys, registry, sim.clock());
  PcaConfig pc;
  pc.id = "pca-home";
  pc.domain = "home";
  pc.skew = skew;
  pc.policy = c.policy;
  pc.gate = c.gate;
  Pca pca(pc, pca_keys, registry, sim.clock());

  std::unique_ptr<HttpServer> ltca_srv, pca_srv;
  int ltca_port = 0, pca_port = 0;
  if (c.over_http) {
    ltca_srv = std::make_unique<HttpServer>(ltca, AuthorityKind::ltca,
                                            sim.clock(), c.server_workers);
    pca_srv = std::make_unique<HttpServer>(pca, AuthorityKind::pca,
                                           sim.clock(), c.server_workers);
    ltca_port = ltca_srv->start();
    pca_port = pca_srv->start();
  }
  auto make_channels = [&]() {
    std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> chs;
    if (c.over_http) {
      chs.first = std::make_unique<HttpChannel>("127.0.0.1", ltca_port,
                                                AuthorityKind::ltca);
      chs.second = std::make_unique<HttpChannel>("127.0.0.1", pca_port,
                                                 AuthorityKind::pca);
    } else {
      chs.first = std::make_unique<InProcessChannel>(ltca, sim.clock());
      chs.second = std::make_unique<InProcessChannel>(pca, sim.clock());
    }
    return chs;
  };

  // Enrollment and key prefill happen before any trip departs, so key
  // generation stays out of the acquisition latency.
  auto wall_start = std::chrono::steady_clock::now();
  std::vector<std::unique_ptr<VehicleState>> vehicles;
  vehicles.reserve(records.size());
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
  auto enroll_chs = make_channels();
  size_t total_entries = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    const TraceRecord &r = records[i];
    auto vs = std::make_unique<VehicleState>();
    VehicleConfig vc;
    vc.subject_id = r.vehicle_id;
    vc.policy = c.policy;
    vc.skew = skew;
    vs->client = std::make_unique<VehicleClient>(vc, registry, sim.clock());
    vs->client->set_channel("ltca-home", *enroll_chs.first);
    vs->client->set_channel("pca-home", *enroll_chs.second);
    vs->client->enroll();
    vs->plan = plan_requests(c.policy, r.departure, r.duration);
    vs->trip_end = r.departure + r.duration;
    vs->client->key_pool().prefill(vs->plan.total_keys());
    for (const auto &entry : vs->plan.entries) {
      queue.push({entry.request_time, i, entry});
      ++total_entries;
    }
    vehicles.push_back(std::move(vs));
  }

  LatencySink sink;
  std::mutex qmu;
  size_t worker_count = std::min(c.workers, total_entries);
  std::vector<std::thread> workers;
  workers.reserve(worker_count);
  for (size_t wi = 0; wi < worker_count; ++wi) {
    workers.emplace_back([&] {
      auto chs = make_channels();
      for (;;) {
        Event ev{0, 0, {}};
        {
          std::lock_guard<std::mutex> lk(qmu);
          if (queue.empty()) break;
          ev = queue.top();
          queue.pop();
        }
        sim.sleep_until(ev.at);
        VehicleState &vs = *vehicles[ev.vehicle];
        std::lock_guard<std::mutex> vlk(vs.mu);
        vs.client->set_channel("ltca-home", *chs.first);
        vs.client->set_channel("pca-home", *chs.second);
        try {
          AcquireOutcome out = vs.client->acquire(ev.entry);
          sink.record(out.latency_ms);
        } catch (const Error &e) {
          sink.record_failure(errc_name(e.code()));
          ++vs.failed;
        } catch (const std::exception &) {
          sink.record_failure("exception");
          ++vs.failed;
        }
      }
    });
  }
  for (auto &w : workers) w.join();

  ReplayResult res;
  res.vehicles = records.size();
  res.entries = total_entries;
  res.failures = sink.failure_count();
  res.failure_breakdown = sink.failures();
  res.latency = sink.report();
  res.wall_seconds =
      std::chrono::duration_cast<std::chrono::duration<double>>(
          std::chrono::steady_clock::now() - wall_start)
          .count();
  res.within_failure_budget =
      static_cast<double>(res.failures) <=
      c.failure_budget * static_cast<double>(total_entries);

  // Book-keeping must balance: every issued credential is either consumed
  // by the trip or accounted as planned surplus. Vehicles with failed
  // requests are excluded from the strict per-vehicle check.
  for (size_t i = 0; i < vehicles.size(); ++i) {
    VehicleState &vs = *vehicles[i];
    const auto &held = vs.client->held();
    res.pseudonyms_issued += held.size();
    size_t unused = vs.client->unused_after(vs.trip_end);
    res.pseudonyms_unused += unused;
    if (vs.failed == 0) {
      size_t expected = vs.plan.total_keys();
      size_t expected_unused =
          count_unused(vs.plan, c.policy.tau, vs.trip_end);
      res.expected_unused += expected_unused;
      if (held.size() != expected || unused != expected_unused)
        res.conservation_ok = false;
    }
    for (const auto &h : held) {
      res.transcript.observations.push_back(
          {h.pseudonym.serial.hex(), h.pseudonym.t_s, h.pseudonym.t_e});
      res.truth.owner_of[h.pseudonym.serial.hex()] =
          vs.client->subject_id();
    }
  }
  res.ltca_ledger = ltca.export_ledger();
  res.pca_ledger = pca.export_ledger();
  return res;
}

// ---- resource-exhaustion experiment ---------------------------------------

struct DdosConfig {
  size_t legit_clients = 4;
  double legit_rps_per_client = 80.0;  // open-loop request pacing
  size_t slots_per_acquire = 5;        // batch size of each honest request
  double leg_seconds = 3.0;
  double warmup_seconds = 0.8;  // setup window before measurement starts
  int attack_rps = 400;        // junk request rate the attackers aim for
  size_t attack_threads = 2;
  uint32_t gate_stages = 5;
  size_t server_workers = 8;
  size_t prefill_keys = 1500;  // per legit client; keygen off the hot path
};

struct DdosLeg {
  std::string name;
  size_t legit_ok = 0;
  size_t legit_failed = 0;
  size_t attack_sent = 0;
  size_t attack_succeeded = 0;  // forged requests that yielded credentials
  LatencyReport latency;

  nlohmann::json to_json() const {
    return {{"name", name},
            {"legit_ok", legit_ok},
            {"legit_failed", legit_failed},
            {"attack_sent", attack_sent},
            {"attack_succeeded", attack_succeeded},
            {"latency", latency.to_json()}};
  }
};

struct DdosReport {
  DdosLeg baseline;   // no attack, gate off
  DdosLeg attacked;   // attack, gate off
  DdosLeg defended;   // attack, gate on

  nlohmann::json to_json() const {
    return {{"baseline", baseline.to_json()},
            {"attacked", attacked.to_json()},
            {"defended", defended.to_json()},
            {"attack_credentials_total",
             baseline.attack_succeeded + attacked.attack_succeeded +
                 defended.attack_succeeded}};
  }
};

namespace detail {

// A well-formed request carrying forged signatures end to end. The server
// cannot tell until it pays for the signature checks — unless the gate
// demands tokens first.
inline Bytes forged_pseudonym_request(int64_t now) {
  auto fill_signature = [](Signature &s) {
    Bytes r = random_bytes(s.bytes.size());
    std::copy(r.begin(), r.end(), s.bytes.begin());
  };
  Ticket t;
  t.issuer_id = "ltca-home";
  t.serial = random_token();
  t.target_digest = sha256(random_bytes(32));
  t.t_s = now;
  t.t_e = now + 600;
  t.binding = sha256(random_bytes(32));
  fill_signature(t.issuer_signature);

  PseudonymRequest req;
  req.reveal = random_token();
  req.t_s = now;
  req.t_e = now + 60;
  req.ticket = t;
  PseudonymKey k;
  k.public_key = Bytes(kPublicKeySize, 0x04);
  fill_signature(k.possession_signature);
  req.keys.push_back(std::move(k));
  return encode_message(make_request(Op::pseudonym_request, req, now));
}

inline std::string frame_http_post(const Bytes &envelope) {
  return "POST /pseudonyms HTTP/1.1\r\n"
         "Host: 127.0.0.1\r\n"
         "Content-Type: application/octet-stream\r\n"
         "Content-Length: " +
         std::to_string(envelope.size()) +
         "\r\n"
         "Connection: close\r\n\r\n" +
         std::string(envelope.begin(), envelope.end());
}

// Drives one flooder thread: issues forged requests at `rps` through
// non-blocking connects and never waits on the server. Writing through a
// request/response loop would throttle the attacker to the victim's own
// latency; a real flood fires at its chosen rate and lets the victim drown.
// A connection the kernel cannot establish promptly (accept queue overflow
// under the flood's own pressure) is abandoned past its deadline — it still
// counts as issued, exactly as a flood counts what it fires, not what the
// victim absorbs.
inline void run_flooder(int port, double rps,
                        std::chrono::steady_clock::time_point start,
                        std::atomic<bool> &stop, std::atomic<size_t> &sent,
                        const Clock &clk) {
  struct Pending {
    int fd;
    std::chrono::steady_clock::time_point deadline;
    std::string msg;
  };
  constexpr size_t kMaxPending = 256;  // bounds open fds under heavy drops
  std::vector<Pending> pending;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);

  // Returns true once the entry is finished (payload written or given up).
  auto try_finish = [](Pending &p) {
    pollfd pf{p.fd, POLLOUT, 0};
    int r = ::poll(&pf, 1, 0);
    if (r <= 0 || !(pf.revents & POLLOUT) ||
        (pf.revents & (POLLERR | POLLHUP))) {
      if (pf.revents & (POLLERR | POLLHUP)) return true;
      return std::chrono::steady_clock::now() > p.deadline;
    }
    ::send(p.fd, p.msg.data(), p.msg.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
    ::shutdown(p.fd, SHUT_WR);
    return true;
  };

  std::this_thread::sleep_until(start);
  auto next = start;
  auto step =
      std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / rps));
  while (!stop.load(std::memory_order_relaxed)) {
    next += step;
    std::this_thread::sleep_until(next);

    for (size_t i = 0; i < pending.size();) {
      if (try_finish(pending[i])) {
        ::close(pending[i].fd);
        pending[i] = std::move(pending.back());
        pending.pop_back();
      } else {
        ++i;
      }
    }

    std::string msg = frame_http_post(forged_pseudonym_request(clk()));
    ++sent;  // issued now, whatever becomes of it
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK, 0);
    if (fd < 0) continue;
    int rc = ::connect(fd, reinterpret_cast<const sockaddr *>(&addr),
                       sizeof addr);
    if (rc == 0) {
      ::send(fd, msg.data(), msg.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
      ::shutdown(fd, SHUT_WR);
      ::close(fd);
    } else if (errno == EINPROGRESS && pending.size() < kMaxPending) {
      pending.push_back({fd,
                         std::chrono::steady_clock::now() +
                             std::chrono::milliseconds(250),
                         std::move(msg)});
    } else {
      ::close(fd);
    }
  }
  for (auto &p : pending) ::close(p.fd);
}

}  // namespace detail

// One leg: legitimate closed-loop clients acquiring credentials while (if
// armed) attackers flood the pseudonym authority with forged requests.
inline DdosLeg run_ddos_leg(const DdosConfig &cfg, const std::string &name,
                            bool attack, bool gate_on) {
  DdosLeg leg;
  leg.name = name;

  Clock clk = system_clock_fn();
  KeyPair ltca_keys = generate_keypair();
  KeyPair pca_keys = generate_keypair();
  auto registry = std::make_shared<Registry>();
  registry->add({"ltca-home", AuthorityKind::ltca, "home", "",
                 ltca_keys.public_key});
  registry->add({"pca-home", AuthorityKind::pca, "home", "",
                 pca_keys.public_key});
  Ltca ltca(LtcaConfig{"ltca-home", "home"}, ltca_keys, registry, clk);
  PcaConfig pc;
  pc.id = "pca-home";
  pc.domain = "home";
  pc.policy = {Policy::P1, 600, 60, 0};
  pc.gate.enabled = gate_on;
  pc.gate.stages = cfg.gate_stages;
  Pca pca(pc, pca_keys, registry, clk);
  HttpServer ltca_srv(ltca, AuthorityKind::ltca, clk, cfg.server_workers);
  HttpServer pca_srv(pca, AuthorityKind::pca, clk, cfg.server_workers);
  int lp = ltca_srv.start(), pp = pca_srv.start();

  LatencySink sink;
  std::atomic<bool> stop{false};
  std::atomic<size_t> attack_sent{0}, attack_ok{0};

  // Everyone holds at a common start line past the setup window, so
  // enrollment and key-pool prefill never contaminate the measurements and
  // the legs stay comparable.
  auto start = std::chrono::steady_clock::now() +
               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                   std::chrono::duration<double>(cfg.warmup_seconds));

  // Legitimate clients: enroll, then acquire fixed-width batches at a fixed
  // open-loop rate, each iteration over a fresh non-overlapping interval.
  // Open-loop pacing is what makes interference visible: a closed loop
  // would slow its own sending when the service degrades and flatter the
  // latency numbers; fixed-rate arrivals push queueing delay into the
  // samples instead. Client phases are staggered so the pacers do not fire
  // in lockstep bursts.
  std::vector<std::thread> legit;
  std::atomic<size_t> legit_ok{0}, legit_failed{0};
  for (size_t ci = 0; ci < cfg.legit_clients; ++ci) {
    legit.emplace_back([&, ci] {
      try {
        HttpChannel lch("127.0.0.1", lp, AuthorityKind::ltca);
        HttpChannel pch("127.0.0.1", pp, AuthorityKind::pca);
        VehicleConfig vc;
        vc.subject_id = "legit-" + std::to_string(ci);
        vc.policy = {Policy::P1, 600, 60, 0};
        VehicleClient v(vc, registry, clk);
        v.set_channel("ltca-home", lch);
        v.set_channel("pca-home", pch);
        v.enroll();
        v.key_pool().prefill(cfg.prefill_keys);
        int64_t base = clk() + 3600;
        auto step = std::chrono::duration_cast<
            std::chrono::steady_clock::duration>(std::chrono::duration<double>(
            1.0 / cfg.legit_rps_per_client));
        auto next = start + step * ci / cfg.legit_clients;
        std::this_thread::sleep_until(next);
        int64_t width = 60 * static_cast<int64_t>(cfg.slots_per_acquire);
        for (int64_t i = 0; !stop.load(std::memory_order_relaxed); ++i) {
          next += step;
          std::this_thread::sleep_until(next);
          PlanEntry entry{clk(), base + i * width, base + (i + 1) * width,
                          cfg.slots_per_acquire};
          try {
            AcquireOutcome out = v.acquire(entry);
            sink.record(out.latency_ms);
            ++legit_ok;
          } catch (const Error &) {
            ++legit_failed;
          }
        }
      } catch (const std::exception &) {
        ++legit_failed;
      }
    });
  }

  std::vector<std::thread> attackers;
  if (attack) {
    // Flooders deliver the configured rate fire-and-forget: they never wait
    // for a response, so the rate holds even when the server is drowning.
    double per_thread_rps = static_cast<double>(cfg.attack_rps) /
                            static_cast<double>(cfg.attack_threads);
    for (size_t ai = 0; ai < cfg.attack_threads; ++ai) {
      attackers.emplace_back([&, per_thread_rps] {
        detail::run_flooder(pp, per_thread_rps, start, stop, attack_sent, clk);
      });
    }
    // One prober does wait for answers: it keeps confirming that forged
    // requests never come back as credentials. The flood sends the same
    // shape of request, so the prober's rejections speak for the flood too.
    attackers.emplace_back([&] {
      HttpChannel pch("127.0.0.1", pp, AuthorityKind::pca);
      std::this_thread::sleep_until(start);
      while (!stop.load(std::memory_order_relaxed)) {
        Bytes raw = detail::forged_pseudonym_request(clk());
        ++attack_sent;
        try {
          MessageEnvelope env = decode_message<MessageEnvelope>(raw);
          MessageEnvelope resp = pch.roundtrip(env);
          if (resp.op == Op::pseudonym_response) ++attack_ok;
        } catch (const std::exception &) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    });
  }

  std::this_thread::sleep_until(
      start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                  std::chrono::duration<double>(cfg.leg_seconds)));
  stop = true;
  for (auto &t : legit) t.join();
  for (auto &t : attackers) t.join();

  leg.legit_ok = legit_ok;
  leg.legit_failed = legit_failed;
  leg.attack_sent = attack_sent;
  leg.attack_succeeded = attack_ok;
  leg.latency = sink.report();
  return leg;
}

inline DdosReport run_ddos(const DdosConfig &cfg) {
  DdosReport report;
  report.baseline = run_ddos_leg(cfg, "baseline", false, false);
  report.attacked = run_ddos_leg(cfg, "attacked", true, false);
  report.defended = run_ddos_leg(cfg, "defended", true, true);
  return report;
}

}  // namespace vpki
