#pragma once

#include <map>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

// The default listen backlog (5) collapses under connection floods before
// the request ever reaches the worker pool; a real deployment sits behind a
// normally-tuned accept queue.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#endif
// Disable Nagle on both ends: request/response exchanges of small frames
// otherwise serialize on the 40 ms delayed-ACK timer, and every latency
// number becomes a property of the TCP stack instead of the service.
#ifndef CPPHTTPLIB_TCP_NODELAY
#define CPPHTTPLIB_TCP_NODELAY true
#endif

#include <httplib.h>

#include "vpki/channel.hpp"
#include "vpki/clock.hpp"
#include "vpki/errors.hpp"
#include "vpki/registry.hpp"
#include "vpki/wire.hpp"

namespace vpki {

// Route table per authority kind. Envelopes are the protocol; the paths
// give each operation a stable, nameable endpoint.
inline std::vector<std::pair<std::string, std::set<Op>>> routes_for(
    AuthorityKind kind) {
  switch (kind) {
    case AuthorityKind::ltca:
      return {{"/register", {Op::register_request}},
              {"/ticket", {Op::ticket_request}},
              {"/exchange", {Op::exchange_request}},
              {"/resolve", {Op::resolve_ticket_request}}};
    case AuthorityKind::pca:
      return {{"/pseudonyms", {Op::pseudonym_request}},
              {"/resolve", {Op::resolve_pseudonym_request}},
              {"/crl", {Op::crl_request}},
              {"/ocsp", {Op::ocsp_request}},
              {"/puzzle", {Op::puzzle_request}}};
    case AuthorityKind::ra:
      return {};
  }
  return {};
}

inline std::string path_for(Op op, AuthorityKind kind) {
  for (const auto &[path, ops] : routes_for(kind))
    if (ops.count(op)) return path;
  throw Error(Errc::invalid_argument,
              std::string("no endpoint serves ") + op_name(op));
}

// Serves one wire service over HTTP. Bodies are binary envelopes both ways;
// the status code mirrors the embedded error envelope, so a client can act
// on either. Requests are handled by a fixed worker pool.
class HttpServer {
public:
  HttpServer(WireService &service, AuthorityKind kind, Clock clock,
             size_t workers = 8)
      : service_(service), clock_(std::move(clock)) {
    svr_.new_task_queue = [workers] {
      return new httplib::ThreadPool(workers);
    };
    for (const auto &[path, ops] : routes_for(kind)) {
      std::set<Op> allowed = ops;
      svr_.Post(path, [this, allowed](const httplib::Request &req,
                                      httplib::Response &res) {
        handle(req, res, allowed);
      });
    }
    svr_.Get("/healthz", [](const httplib::Request &, httplib::Response &res) {
      res.set_content("ok", "text/plain");
    });
  }

  // Expose the authority's issuance books at GET /ledger (JSON). Wire this
  // before start().
  void set_ledger(std::function<nlohmann::json()> fn) {
    svr_.Get("/ledger", [fn = std::move(fn)](const httplib::Request &,
                                             httplib::Response &res) {
      res.set_content(fn().dump(2), "application/json");
    });
  }

  ~HttpServer() { stop(); }

  // Bind to an ephemeral port and serve from a background thread.
  // Returns the bound port.
  int start(const std::string &host = "127.0.0.1", int port = 0) {
    int bound = port == 0 ? svr_.bind_to_any_port(host)
                          : (svr_.bind_to_port(host, port) ? port : -1);
    if (bound <= 0)
      throw Error(Errc::unavailable, "cannot bind http server");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
    port_ = bound;
    return bound;
  }

  int port() const { return port_; }

  // Block until the server is stopped (serve-forever mode).
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  void stop() {
    if (thread_.joinable()) {
      svr_.stop();
      thread_.join();
    }
  }

private:
  void handle(const httplib::Request &req, httplib::Response &res,
              const std::set<Op> &allowed) {
    // Cheap op peek (first two bytes) so a request posted to the wrong
    // endpoint is refused before any real decoding happens.
    if (req.body.size() >= 2) {
      Op op = static_cast<Op>((static_cast<uint16_t>(
                                   static_cast<uint8_t>(req.body[0]))
                               << 8) |
                              static_cast<uint8_t>(req.body[1]));
      if (!allowed.count(op)) {
        res.status = 404;
        res.set_content("wrong endpoint for operation", "text/plain");
        return;
      }
    }
    Bytes raw(req.body.begin(), req.body.end());
    WireResult r = process_wire(service_, raw, clock_);
    res.status = r.http_status;
    res.set_content(std::string(r.body.begin(), r.body.end()),
                    "application/octet-stream");
  }

  WireService &service_;
  Clock clock_;
  httplib::Server svr_;
  std::thread thread_;
  int port_ = -1;
};

// Channel that carries envelopes to an HttpServer. One keep-alive
// connection per channel instance; not shared across threads.
class HttpChannel : public Channel {
public:
  HttpChannel(const std::string &host, int port, AuthorityKind kind)
      : cli_(host, port), kind_(kind) {
    cli_.set_keep_alive(true);
    cli_.set_read_timeout(30, 0);
    cli_.set_write_timeout(30, 0);
  }

  MessageEnvelope roundtrip(const MessageEnvelope &request) override {
    Bytes raw = encode_message(request);
    auto res = cli_.Post(path_for(request.op, kind_),
                         std::string(raw.begin(), raw.end()),
                         "application/octet-stream");
    if (!res)
      throw Error(Errc::unavailable,
                  "http round trip failed: " + httplib::to_string(res.error()));
    Bytes body(res->body.begin(), res->body.end());
    return decode_message<MessageEnvelope>(body);
  }

private:
  httplib::Client cli_;
  AuthorityKind kind_;
};

}  // namespace vpki
