// Umbrella command-line tool: key and registry management, authority
// servers, a vehicle-side client, resolution, trace tooling, the replay
// harness, and the analysis commands.

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vpki/harness.hpp"
#include "vpki/http.hpp"
#include "vpki/linkability.hpp"
#include "vpki/ltca.hpp"
#include "vpki/pca.hpp"
#include "vpki/ra.hpp"
#include "vpki/trace.hpp"
#include "vpki/vehicle.hpp"

using namespace vpki;

namespace {

// ---- small shared helpers --------------------------------------------------

void save_keypair(const std::string &path, const KeyPair &kp) {
  nlohmann::json j{{"public_key", to_hex(kp.public_key)},
                   {"private_key", to_hex(kp.private_key)}};
  std::ofstream out(path);
  if (!out) throw Error(Errc::unavailable, "cannot write " + path);
  out << j.dump(2) << "\n";
}

KeyPair load_keypair(const std::string &path) {
  nlohmann::json j = load_json(path);
  KeyPair kp;
  kp.public_key = from_hex(j.at("public_key").get<std::string>());
  kp.private_key = from_hex(j.at("private_key").get<std::string>());
  return kp;
}

std::pair<std::string, int> split_endpoint(const std::string &ep) {
  auto colon = ep.rfind(':');
  if (colon == std::string::npos)
    throw Error(Errc::invalid_argument, "endpoint must be host:port: " + ep);
  return {ep.substr(0, colon), std::stoi(ep.substr(colon + 1))};
}

// Open an http channel to every authority in the registry that advertises
// an endpoint.
std::map<std::string, std::unique_ptr<HttpChannel>> channels_from_registry(
    const Registry &reg) {
  std::map<std::string, std::unique_ptr<HttpChannel>> out;
  for (const auto &[id, info] : reg.entries()) {
    if (info.endpoint.empty() || info.kind == AuthorityKind::ra) continue;
    auto [host, port] = split_endpoint(info.endpoint);
    out[id] = std::make_unique<HttpChannel>(host, port, info.kind);
  }
  return out;
}

PolicyConfig policy_from(const std::string &name, int64_t gamma, int64_t tau,
                         int64_t grid_epoch) {
  PolicyConfig cfg{parse_policy(name), gamma, tau, grid_epoch};
  cfg.validate();
  return cfg;
}

void write_or_print(const std::string &path, const nlohmann::json &j) {
  if (path.empty())
    std::cout << j.dump(2) << "\n";
  else
    save_json(path, j);
}

volatile std::sig_atomic_t g_stop = 0;

void serve_forever(HttpServer &srv, const std::string &what, int port) {
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  std::cerr << what << " listening on port " << port << "\n";
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  srv.stop();
}

// ---- subcommand wiring -----------------------------------------------------

struct ServeCommon {
  std::string id, domain = "home", registry_path, key_path, store_path;
  std::string host = "0.0.0.0";
  int port = 0;
  int64_t skew = kDefaultSkew;
};

void add_serve_flags(CLI::App *cmd, ServeCommon &s) {
  cmd->add_option("--id", s.id, "authority identifier")->required();
  cmd->add_option("--domain", s.domain, "domain name");
  cmd->add_option("--registry", s.registry_path, "registry json")->required();
  cmd->add_option("--key", s.key_path, "key pair json")->required();
  cmd->add_option("--store", s.store_path, "append-only event log (jsonl)");
  cmd->add_option("--host", s.host, "bind address");
  cmd->add_option("--port", s.port, "listen port")->required();
  cmd->add_option("--skew", s.skew, "freshness window, seconds");
}

struct PolicyFlags {
  std::string policy = "P1";
  int64_t gamma = 600, tau = 60, grid_epoch = 0;
};

void add_policy_flags(CLI::App *cmd, PolicyFlags &p) {
  cmd->add_option("--policy", p.policy, "P1, P2 or P3");
  cmd->add_option("--gamma", p.gamma, "request period, seconds");
  cmd->add_option("--tau", p.tau, "pseudonym slot width, seconds");
  cmd->add_option("--grid-epoch", p.grid_epoch, "window grid anchor (P3)");
}

int run(int argc, char **argv) {
  CLI::App app{"anonymous-credential infrastructure workbench"};
  app.require_subcommand(1);

  // keygen ------------------------------------------------------------------
  std::string keygen_out;
  auto *keygen = app.add_subcommand("keygen", "generate a key pair file");
  keygen->add_option("--out", keygen_out, "output json path")->required();
  keygen->callback([&] {
    save_keypair(keygen_out, generate_keypair());
    std::cerr << "wrote " << keygen_out << "\n";
  });

  // registry-add ------------------------------------------------------------
  struct {
    std::string file, id, kind, domain, endpoint, key_path;
  } ra_args;
  auto *regadd = app.add_subcommand(
      "registry-add", "add or update an authority in a registry file");
  regadd->add_option("--file", ra_args.file, "registry json")->required();
  regadd->add_option("--id", ra_args.id, "authority id")->required();
  regadd->add_option("--kind", ra_args.kind, "ltca | pca | ra")->required();
  regadd->add_option("--domain", ra_args.domain, "domain name");
  regadd->add_option("--endpoint", ra_args.endpoint, "host:port");
  regadd->add_option("--key", ra_args.key_path, "key pair json (public half "
                                                "is recorded)")
      ->required();
  regadd->callback([&] {
    Registry reg;
    if (std::ifstream(ra_args.file).good())
      reg = Registry::load(ra_args.file);
    KeyPair kp = load_keypair(ra_args.key_path);
    reg.add({ra_args.id, parse_authority_kind(ra_args.kind), ra_args.domain,
             ra_args.endpoint, kp.public_key});
    reg.save(ra_args.file);
    std::cerr << "registered " << ra_args.id << " in " << ra_args.file << "\n";
  });

  // ltca serve --------------------------------------------------------------
  ServeCommon ltca_args;
  auto *ltca_cmd = app.add_subcommand("ltca", "serve a ticket authority");
  add_serve_flags(ltca_cmd, ltca_args);
  ltca_cmd->callback([&] {
    auto registry =
        std::make_shared<Registry>(Registry::load(ltca_args.registry_path));
    LtcaConfig cfg{ltca_args.id, ltca_args.domain};
    cfg.skew = ltca_args.skew;
    cfg.store_path = ltca_args.store_path;
    Ltca service(cfg, load_keypair(ltca_args.key_path), registry,
                 system_clock_fn());
    HttpServer srv(service, AuthorityKind::ltca, system_clock_fn());
    srv.set_ledger([&service] { return service.export_ledger(); });
    int port = srv.start(ltca_args.host, ltca_args.port);
    serve_forever(srv, "ticket authority " + ltca_args.id, port);
  });

  // pca serve ---------------------------------------------------------------
  ServeCommon pca_args;
  PolicyFlags pca_policy;
  bool pca_gate = false;
  double pca_gate_trigger = 0.0;
  auto *pca_cmd = app.add_subcommand("pca", "serve a pseudonym authority");
  add_serve_flags(pca_cmd, pca_args);
  add_policy_flags(pca_cmd, pca_policy);
  pca_cmd->add_flag("--gate", pca_gate, "always demand request-gate tokens");
  pca_cmd->add_option("--gate-trigger", pca_gate_trigger,
                      "demand tokens above this request rate (0 = never)");
  pca_cmd->callback([&] {
    auto registry =
        std::make_shared<Registry>(Registry::load(pca_args.registry_path));
    PcaConfig cfg;
    cfg.id = pca_args.id;
    cfg.domain = pca_args.domain;
    cfg.skew = pca_args.skew;
    cfg.policy = policy_from(pca_policy.policy, pca_policy.gamma,
                             pca_policy.tau, pca_policy.grid_epoch);
    cfg.store_path = pca_args.store_path;
    cfg.gate.enabled = pca_gate;
    cfg.gate.trigger_rps = pca_gate_trigger;
    Pca service(cfg, load_keypair(pca_args.key_path), registry,
                system_clock_fn());
    HttpServer srv(service, AuthorityKind::pca, system_clock_fn());
    srv.set_ledger([&service] { return service.export_ledger(); });
    int port = srv.start(pca_args.host, pca_args.port);
    serve_forever(srv, "pseudonym authority " + pca_args.id, port);
  });

  // vehicle -----------------------------------------------------------------
  struct {
    std::string id, registry_path, ltca = "ltca-home", pca = "pca-home";
    std::string out;
    int64_t depart = 0, duration = 600;
    bool now = false;
  } veh;
  PolicyFlags veh_policy;
  auto *veh_cmd = app.add_subcommand(
      "vehicle", "enroll, plan a trip and acquire its credentials");
  veh_cmd->add_option("--id", veh.id, "vehicle identifier")->required();
  veh_cmd->add_option("--registry", veh.registry_path, "registry json")
      ->required();
  veh_cmd->add_option("--ltca", veh.ltca, "home ticket authority id");
  veh_cmd->add_option("--pca", veh.pca, "home pseudonym authority id");
  add_policy_flags(veh_cmd, veh_policy);
  veh_cmd->add_option("--depart", veh.depart,
                      "trip departure, epoch seconds (default: now)");
  veh_cmd->add_option("--duration", veh.duration, "trip duration, seconds");
  veh_cmd->add_option("--out", veh.out, "write acquired credentials (json)");
  veh_cmd->callback([&] {
    auto registry =
        std::make_shared<Registry>(Registry::load(veh.registry_path));
    auto channels = channels_from_registry(*registry);
    Clock clk = system_clock_fn();
    VehicleConfig vc;
    vc.subject_id = veh.id;
    vc.policy = policy_from(veh_policy.policy, veh_policy.gamma,
                            veh_policy.tau, veh_policy.grid_epoch);
    vc.home_ltca = veh.ltca;
    vc.home_pca = veh.pca;
    VehicleClient v(vc, registry, clk);
    for (auto &[id, ch] : channels) v.set_channel(id, *ch);
    v.enroll();
    std::cerr << "enrolled " << veh.id << "\n";

    int64_t depart = veh.depart == 0 ? clk() : veh.depart;
    RequestPlan plan = v.plan(depart, veh.duration);
    v.key_pool().prefill(plan.total_keys());
    nlohmann::json entries = nlohmann::json::array();
    for (const auto &entry : plan.entries) {
      while (clk() < entry.request_time)
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
      AcquireOutcome out = v.acquire(entry);
      std::cerr << "acquired " << out.pseudonym_count << " pseudonyms for ["
                << entry.t_s << ", " << entry.t_e << ")\n";
      entries.push_back({{"request_time", entry.request_time},
                         {"t_s", entry.t_s},
                         {"t_e", entry.t_e},
                         {"keys", entry.key_count},
                         {"latency_ms", out.latency_ms},
                         {"solved_gate", out.solved_gate}});
    }
    nlohmann::json creds = nlohmann::json::array();
    for (const auto &h : v.held())
      creds.push_back({{"serial", h.pseudonym.serial.hex()},
                       {"t_s", h.pseudonym.t_s},
                       {"t_e", h.pseudonym.t_e},
                       {"issuer", h.pseudonym.issuer_id},
                       {"encoded", to_hex(encode_message(h.pseudonym))}});
    write_or_print(veh.out, {{"subject", veh.id},
                             {"departure", depart},
                             {"duration", veh.duration},
                             {"entries", entries},
                             {"pseudonyms", creds}});
  });

  // resolve -----------------------------------------------------------------
  struct {
    std::string registry_path, key_path, creds_path, hex;
    size_t index = 0;
    bool revoke = false, revoke_ltc = false;
  } res_args;
  auto *res_cmd = app.add_subcommand(
      "resolve", "resolve a pseudonym back to its enrolled subject");
  res_cmd->add_option("--registry", res_args.registry_path, "registry json")
      ->required();
  res_cmd->add_option("--key", res_args.key_path,
                      "resolution authority key pair json")
      ->required();
  res_cmd->add_option("--pseudonyms", res_args.creds_path,
                      "credentials file from the vehicle command");
  res_cmd->add_option("--index", res_args.index,
                      "which pseudonym in the file (default first)");
  res_cmd->add_option("--hex", res_args.hex, "encoded pseudonym, hex");
  res_cmd->add_flag("--revoke", res_args.revoke,
                    "also revoke every sibling pseudonym of its ticket");
  res_cmd->add_flag("--revoke-ltc", res_args.revoke_ltc,
                    "also block the subject from new tickets");
  res_cmd->callback([&] {
    std::string hex = res_args.hex;
    if (hex.empty()) {
      if (res_args.creds_path.empty())
        throw Error(Errc::invalid_argument,
                    "need --pseudonyms or --hex");
      nlohmann::json creds = load_json(res_args.creds_path);
      const auto &list = creds.at("pseudonyms");
      if (res_args.index >= list.size())
        throw Error(Errc::invalid_argument, "index out of range");
      hex = list.at(res_args.index).at("encoded").get<std::string>();
    }
    Pseudonym p = decode_message<Pseudonym>(from_hex(hex));
    auto registry =
        std::make_shared<Registry>(Registry::load(res_args.registry_path));
    auto channels = channels_from_registry(*registry);
    ResolutionAuthority ra(RaConfig{}, load_keypair(res_args.key_path),
                           registry, system_clock_fn());
    for (auto &[id, ch] : channels) ra.set_channel(id, *ch);
    ResolutionResult r =
        ra.resolve(p, res_args.revoke, res_args.revoke_ltc);
    nlohmann::json hops = nlohmann::json::array();
    for (const auto &h : r.hops)
      hops.push_back({{"authority", h.authority_id},
                      {"revealed", h.revealed}});
    std::cout << nlohmann::json{{"subject", r.ltc.subject_id},
                                {"hops", hops},
                                {"revoked_pseudonyms", res_args.revoke},
                                {"revoked_subject", res_args.revoke_ltc}}
                     .dump(2)
              << "\n";
  });

  // synth -------------------------------------------------------------------
  SynthSpec synth_spec;
  std::string synth_out;
  auto *synth = app.add_subcommand("synth", "synthesize a trip trace");
  synth->add_option("--count", synth_spec.count, "number of trips");
  synth->add_option("--seed", synth_spec.seed, "rng seed");
  synth->add_option("--preset", synth_spec.preset, "lust | tapas");
  synth->add_option("--horizon", synth_spec.horizon,
                    "departure window, seconds");
  synth->add_option("--origin", synth_spec.origin, "first possible departure");
  synth->add_option("--out", synth_out, "output csv")->required();
  synth->callback([&] {
    auto records = synthesize_trace(synth_spec);
    save_trace_csv(synth_out, records);
    std::cerr << "wrote " << records.size() << " trips to " << synth_out
              << "\n";
  });

  // convert -----------------------------------------------------------------
  struct {
    std::string in, out;
    int vehicle_col = 0, depart_col = 1, duration_col = 2;
    char delim = ',';
    bool skip_header = false;
  } conv;
  auto *convert = app.add_subcommand(
      "convert", "convert a columnar trip listing to the canonical trace csv");
  convert->add_option("--in", conv.in, "input file")->required();
  convert->add_option("--out", conv.out, "output csv")->required();
  convert->add_option("--vehicle-col", conv.vehicle_col,
                      "column holding the vehicle id");
  convert->add_option("--depart-col", conv.depart_col,
                      "column holding the departure time, epoch seconds");
  convert->add_option("--duration-col", conv.duration_col,
                      "column holding the trip duration, seconds");
  convert->add_option("--delim", conv.delim, "field delimiter");
  convert->add_flag("--skip-header", conv.skip_header,
                    "ignore the first input line");
  convert->callback([&] {
    std::ifstream in(conv.in);
    if (!in) throw Error(Errc::unavailable, "cannot open " + conv.in);
    std::vector<TraceRecord> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 && conv.skip_header) continue;
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::istringstream row(line);
      std::string field;
      while (std::getline(row, field, conv.delim)) cols.push_back(field);
      int need = std::max({conv.vehicle_col, conv.depart_col,
                           conv.duration_col});
      if (static_cast<int>(cols.size()) <= need)
        throw Error(Errc::decode, conv.in + " line " +
                                      std::to_string(lineno) +
                                      ": too few columns");
      try {
        records.push_back({cols[conv.vehicle_col],
                           std::stoll(cols[conv.depart_col]),
                           std::stoll(cols[conv.duration_col])});
      } catch (const std::exception &) {
        throw Error(Errc::decode, conv.in + " line " +
                                      std::to_string(lineno) +
                                      ": non-numeric time column");
      }
    }
    save_trace_csv(conv.out, records);
    std::cerr << "wrote " << records.size() << " trips to " << conv.out
              << "\n";
  });

  // replay ------------------------------------------------------------------
  struct {
    std::string trace, report, transcript, truth, ledger_dir;
    double compress = 1.0;
    size_t workers = 64;
    bool http = false, gate = false;
  } rp;
  PolicyFlags rp_policy;
  auto *replay = app.add_subcommand(
      "replay", "replay a trip trace against a fresh domain");
  replay->add_option("--trace", rp.trace, "trace csv")->required();
  add_policy_flags(replay, rp_policy);
  replay->add_option("--compress", rp.compress,
                     "trace seconds per wall second");
  replay->add_option("--workers", rp.workers, "request executors");
  replay->add_flag("--http", rp.http, "run over local sockets");
  replay->add_flag("--gate", rp.gate, "enable the request gate");
  replay->add_option("--report", rp.report, "write the run report (json)");
  replay->add_option("--transcript", rp.transcript,
                     "write the eavesdropper transcript (json)");
  replay->add_option("--truth", rp.truth,
                     "write the ground-truth ownership map (json)");
  replay->add_option("--ledgers", rp.ledger_dir,
                     "directory for the authorities' ledgers");
  replay->callback([&] {
    ReplayConfig cfg;
    cfg.policy = policy_from(rp_policy.policy, rp_policy.gamma, rp_policy.tau,
                             rp_policy.grid_epoch);
    cfg.compression = rp.compress;
    cfg.workers = rp.workers;
    cfg.over_http = rp.http;
    cfg.gate.enabled = rp.gate;
    ReplayResult res = run_replay(cfg, load_trace_csv(rp.trace));
    if (!rp.transcript.empty()) save_json(rp.transcript,
                                          res.transcript.to_json());
    if (!rp.truth.empty()) save_json(rp.truth, res.truth.to_json());
    if (!rp.ledger_dir.empty()) {
      save_json(rp.ledger_dir + "/ltca-home.json", res.ltca_ledger);
      save_json(rp.ledger_dir + "/pca-home.json", res.pca_ledger);
    }
    write_or_print(rp.report, res.to_json());
    if (!res.within_failure_budget || !res.conservation_ok)
      throw Error(Errc::internal, "replay failed its own book-keeping");
  });

  // linkcheck ---------------------------------------------------------------
  struct {
    std::string transcript, truth, out;
    int64_t tolerance = 0;
  } lc;
  auto *linkcheck = app.add_subcommand(
      "linkcheck", "run the timing-linkage analysis on a transcript");
  linkcheck->add_option("--transcript", lc.transcript, "transcript json")
      ->required();
  linkcheck->add_option("--truth", lc.truth, "ground-truth json")->required();
  linkcheck->add_option("--tolerance", lc.tolerance,
                        "candidate window slack, seconds");
  linkcheck->add_option("--out", lc.out, "write the report (json)");
  linkcheck->callback([&] {
    LinkReport r =
        timing_link(Transcript::from_json(load_json(lc.transcript)),
                    GroundTruth::from_json(load_json(lc.truth)),
                    lc.tolerance);
    write_or_print(lc.out, r.to_json());
  });

  // collude -----------------------------------------------------------------
  std::vector<std::string> collude_paths;
  std::string collude_out;
  auto *collude_cmd = app.add_subcommand(
      "collude", "join authority ledgers and report what they reveal");
  collude_cmd->add_option("--ledger", collude_paths,
                          "ledger json (repeatable)")
      ->required();
  collude_cmd->add_option("--out", collude_out, "write the report (json)");
  collude_cmd->callback([&] {
    std::vector<nlohmann::json> ledgers;
    for (const auto &p : collude_paths) ledgers.push_back(load_json(p));
    CollusionReport r = collude(ledgers);
    write_or_print(collude_out, r.to_json());
  });

  // ddos --------------------------------------------------------------------
  DdosConfig ddos_cfg;
  std::string ddos_out;
  auto *ddos = app.add_subcommand(
      "ddos", "run the flood experiment: baseline, attacked, defended");
  ddos->add_option("--clients", ddos_cfg.legit_clients, "honest clients");
  ddos->add_option("--legit-rate", ddos_cfg.legit_rps_per_client,
                   "honest requests per second per client");
  ddos->add_option("--rate", ddos_cfg.attack_rps, "junk requests per second");
  ddos->add_option("--threads", ddos_cfg.attack_threads, "attacker threads");
  ddos->add_option("--server-workers", ddos_cfg.server_workers,
                   "worker threads per authority server");
  ddos->add_option("--leg-seconds", ddos_cfg.leg_seconds,
                   "duration of each leg");
  ddos->add_option("--out", ddos_out, "write the report (json)");
  ddos->callback([&] {
    DdosReport r = run_ddos(ddos_cfg);
    write_or_print(ddos_out, r.to_json());
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return run(argc, argv);
  } catch (const Error &e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what()
              << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
