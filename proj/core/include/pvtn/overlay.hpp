// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "pvtn/messaging.hpp"
#include "pvtn/world.hpp"

namespace pvtn {

// How a message finds its destination endpoint. Hop count, not content,
// is the only thing that differs: every variant carries the same envelope.
enum class RouteMode : std::uint8_t {
  OverlayLookup = 0,  // via a deterministic set of upper-layer relays
  DirectIp = 1,       // straight to the endpoint
  GatewayRelay = 2,   // via the destination tenant's gateway
  VirgoIdPath = 3,    // down the tree path from the root
};

const char* route_mode_name(RouteMode m);
std::optional<RouteMode> route_mode_from_name(const std::string& s);

struct TraceLine {
  Tick tick = 0;
  std::string kind;
  std::string from;
  std::string to;
  std::string msg;
  std::string trace;
  std::string detail;

  std::string render() const;
};

struct AssertionResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

class Trace {
 public:
  void event(Tick tick, const std::string& kind, const std::string& from,
             const std::string& to, const std::string& msg, TraceId trace_id,
             const std::string& detail);
  void event_raw(Tick tick, const std::string& kind, const std::string& from,
                 const std::string& to, const std::string& msg,
                 const std::string& trace, const std::string& detail);
  void note_assertion(const std::string& name, bool pass,
                      const std::string& detail);

  const std::vector<TraceLine>& lines() const { return lines_; }
  const std::vector<AssertionResult>& assertions() const { return asserts_; }
  bool all_assertions_pass() const;
  // Full trace file: event lines, snapshot, assertion results.
  std::string render(const std::string& snapshot) const;

 private:
  std::vector<TraceLine> lines_;
  std::vector<AssertionResult> asserts_;
};

// Everything the network ever carried, for eavesdropping adversaries and
// privacy scans. Session records are plaintext application traffic between
// endpoints that share no keys (certificate presentation, liveness answers).
struct WireRecord {
  Tick tick = 0;
  EndpointId src = 0;
  EndpointId dst = 0;
  bool session = false;
  Bytes bytes;
};

struct DeliverEvent {
  Envelope env;
  EndpointId src = 0;
  std::vector<EndpointId> path;  // relay hops, destination last
  std::size_t hop = 0;
};

struct SessionEvent {
  EndpointId src = 0;
  EndpointId dst = 0;
  TraceId trace_id = 0;
  std::string channel;
  Bytes payload;
};

struct TimeoutEvent {
  EndpointId at = 0;
  TraceId trace_id = 0;
  std::string key;
};

using SimEvent = std::variant<DeliverEvent, SessionEvent, TimeoutEvent>;

// Receives events at their destination. Implemented by the protocol engine.
// `src` models the incoming connection: replies to a peer whose key arrived
// inside the message itself (join candidates) go back over it.
class SimHandler {
 public:
  virtual ~SimHandler() = default;
  virtual void on_deliver(EndpointId at, EndpointId src,
                          const Envelope& env) = 0;
  virtual void on_session(const SessionEvent& ev) = 0;
  virtual void on_timeout(const TimeoutEvent& ev) = 0;
};

// Interposes on the network: sees every transmission, may drop or replace
// message events before final delivery, may act at scheduled points.
class NetworkTap {
 public:
  struct Verdict {
    enum Kind { Pass, Drop, Replace } kind = Pass;
    std::string why;
    Envelope replacement;
    Bytes session_replacement;
  };
  virtual ~NetworkTap() = default;
  virtual void on_wire(const WireRecord& rec) { (void)rec; }
  virtual Verdict on_final_hop(const SimEvent& ev) {
    (void)ev;
    return {};
  }
  virtual void on_scheduled(const std::string& key) { (void)key; }
};

// Single-threaded discrete-event loop over a logical tick clock. Every hop
// costs one tick; events at the same tick run in scheduling order. Identical
// seeds and scripts give byte-identical traces.
class Simulator {
 public:
  Simulator(World& world, Rng& rng, Tick max_ticks);

  World& world() { return world_; }
  Rng& rng() { return rng_; }
  Tick now() const { return now_; }
  Tick max_ticks() const { return max_ticks_; }
  TraceId fresh_trace_id() { return rng_.next_u64(); }
  Trace& trace() { return trace_; }
  const std::vector<WireRecord>& wire() const { return wire_; }
  void set_handler(SimHandler* h) { handler_ = h; }
  void set_tap(NetworkTap* t) { tap_ = t; }

  Result<std::vector<EndpointId>> route(RouteMode mode, EndpointId dst) const;

  // Sends an envelope; the route is resolved now, delivery happens one tick
  // per hop. A send that cannot be routed is traced and reported.
  Status send(EndpointId src, EndpointId dst, RouteMode mode,
              const Envelope& env);
  Status send_direct(EndpointId src, EndpointId dst, const Envelope& env);
  // Plaintext session traffic (no shared keys between the endpoints).
  void send_session(EndpointId src, EndpointId dst, TraceId trace_id,
                    const std::string& channel, const Bytes& payload);
  void schedule_timeout(Tick at, EndpointId node, TraceId trace_id,
                        const std::string& key);
  void schedule_adversary(Tick at, const std::string& key);
  // Adversary-originated envelope, delivered directly.
  void inject(EndpointId dst, const Envelope& env, const std::string& why);

  // Drains the queue. Fails with NonTermination if the clock would pass the
  // tick bound with events still pending.
  Result<Tick> run_until_quiescent();

  std::string endpoint_token(EndpointId id) const;
  std::uint64_t sends_for(TraceId trace_id) const;
  std::uint64_t total_sends() const { return total_sends_; }

 private:
  void push(Tick at, SimEvent ev);
  void deliver(const DeliverEvent& ev);

  World& world_;
  Rng& rng_;
  Tick max_ticks_;
  Tick now_ = 0;
  std::uint64_t seq_ = 0;
  std::map<std::pair<Tick, std::uint64_t>, SimEvent> queue_;
  Trace trace_;
  std::vector<WireRecord> wire_;
  SimHandler* handler_ = nullptr;
  NetworkTap* tap_ = nullptr;
  std::map<TraceId, std::uint64_t> sends_per_trace_;
  std::uint64_t total_sends_ = 0;
};

}  // namespace pvtn
