#pragma once

#include <memory>

#include "vpki/clock.hpp"
#include "vpki/errors.hpp"
#include "vpki/wire.hpp"

namespace vpki {

// A service endpoint seen from the wire: one envelope in, one envelope out.
// Implementations must throw Error (not return partial state) on rejects.
class WireService {
public:
  virtual ~WireService() = default;
  virtual MessageEnvelope handle(const MessageEnvelope &request) = 0;
};

struct WireResult {
  int http_status = 200;
  Bytes body;
};

// Run one raw request through a service, converting rejects into signed-off
// error envelopes. Both the in-process and the socket transport funnel
// through here, so a request is serialized, decoded and policed identically
// no matter how it arrives.
inline WireResult process_wire(WireService &service, const Bytes &raw,
                               const Clock &now) {
  RandomToken echo{};
  try {
    MessageEnvelope request = decode_message<MessageEnvelope>(raw);
    echo = request.nonce;
    MessageEnvelope response = service.handle(request);
    return {200, encode_message(response)};
  } catch (const DecodeError &e) {
    ErrorResponse err{static_cast<uint16_t>(Errc::decode), e.what(), 0};
    MessageEnvelope env;
    env.op = Op::error_response;
    env.nonce = echo.next();
    env.sent_at = now();
    env.payload = encode_message(err);
    return {http_status_for(Errc::decode), encode_message(env)};
  } catch (const Error &e) {
    uint32_t aux = 0;
    if (e.code() == Errc::puzzle_required) {
      // The gate tells the client how many stages it expects.
      aux = static_cast<uint32_t>(std::strtoul(e.detail().c_str(), nullptr, 10));
    }
    ErrorResponse err{static_cast<uint16_t>(e.code()),
                      e.code() == Errc::puzzle_required ? "request gate active"
                                                        : e.detail(),
                      aux};
    MessageEnvelope env;
    env.op = Op::error_response;
    env.nonce = echo.next();
    env.sent_at = now();
    env.payload = encode_message(err);
    return {http_status_for(e.code()), encode_message(env)};
  }
}

// Client-side view of a transport to one service.
class Channel {
public:
  virtual ~Channel() = default;
  virtual MessageEnvelope roundtrip(const MessageEnvelope &request) = 0;
};

// Thrown client-side when a service demands a token chain before it will
// serve the request; carries the expected chain length.
class PuzzleRequired : public Error {
public:
  explicit PuzzleRequired(uint32_t stages)
      : Error(Errc::puzzle_required,
              "gate expects " + std::to_string(stages) + " stages"),
        stages_(stages) {}
  uint32_t stages() const { return stages_; }

private:
  uint32_t stages_;
};

// Check a response envelope against the request that produced it and decode
// the expected payload. Error envelopes re-raise the service's reject.
template <typename Payload>
Payload expect_response(const MessageEnvelope &request,
                        const MessageEnvelope &response, Op expected_op) {
  if (response.op == Op::error_response) {
    auto err = decode_message<ErrorResponse>(response.payload);
    if (err.code == static_cast<uint16_t>(Errc::puzzle_required))
      throw PuzzleRequired(err.aux);
    if (err.code == 0 || err.code > static_cast<uint16_t>(Errc::internal))
      throw Error(Errc::internal, "unclassified service error: " + err.message);
    throw Error(static_cast<Errc>(err.code), err.message);
  }
  if (response.op != expected_op)
    throw Error(Errc::decode, std::string("unexpected response kind ") +
                                  op_name(response.op));
  if (response.nonce != request.nonce.next())
    throw Error(Errc::auth, "response nonce does not echo the request");
  return decode_message<Payload>(response.payload);
}

// Transport that short-circuits to a service in the same process while still
// passing through the full serialization path.
class InProcessChannel : public Channel {
public:
  InProcessChannel(WireService &service, Clock clock)
      : service_(service), clock_(std::move(clock)) {}

  MessageEnvelope roundtrip(const MessageEnvelope &request) override {
    WireResult r = process_wire(service_, encode_message(request), clock_);
    return decode_message<MessageEnvelope>(r.body);
  }

private:
  WireService &service_;
  Clock clock_;
};

}  // namespace vpki
