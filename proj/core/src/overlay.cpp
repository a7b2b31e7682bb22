// SPDX-License-Identifier: Apache-2.0
#include "pvtn/overlay.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace pvtn {

const char* route_mode_name(RouteMode m) {
  switch (m) {
    case RouteMode::OverlayLookup: return "overlay";
    case RouteMode::DirectIp: return "direct";
    case RouteMode::GatewayRelay: return "gateway";
    case RouteMode::VirgoIdPath: return "idpath";
  }
  return "?";
}

std::optional<RouteMode> route_mode_from_name(const std::string& s) {
  if (s == "overlay") return RouteMode::OverlayLookup;
  if (s == "direct") return RouteMode::DirectIp;
  if (s == "gateway") return RouteMode::GatewayRelay;
  if (s == "idpath") return RouteMode::VirgoIdPath;
  return std::nullopt;
}

std::string TraceLine::render() const {
  std::ostringstream os;
  os << tick << " | " << kind << " | " << from << " | " << to << " | " << msg
     << " | " << trace << " | " << (detail.empty() ? "-" : detail);
  return os.str();
}

static std::string trace_id_token(TraceId id) {
  if (id == 0) return "-";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(id));
  return buf;
}

void Trace::event(Tick tick, const std::string& kind, const std::string& from,
                  const std::string& to, const std::string& msg,
                  TraceId trace_id, const std::string& detail) {
  event_raw(tick, kind, from, to, msg, trace_id_token(trace_id), detail);
}

void Trace::event_raw(Tick tick, const std::string& kind,
                      const std::string& from, const std::string& to,
                      const std::string& msg, const std::string& trace,
                      const std::string& detail) {
  lines_.push_back(TraceLine{tick, kind, from, to, msg, trace, detail});
}

void Trace::note_assertion(const std::string& name, bool pass,
                           const std::string& detail) {
  asserts_.push_back(AssertionResult{name, pass, detail});
}

bool Trace::all_assertions_pass() const {
  return std::all_of(asserts_.begin(), asserts_.end(),
                     [](const AssertionResult& a) { return a.pass; });
}

std::string Trace::render(const std::string& snapshot) const {
  std::ostringstream os;
  os << "# events\n";
  for (const auto& l : lines_) os << l.render() << "\n";
  os << "# snapshot\n" << snapshot;
  os << "# assertions\n";
  for (const auto& a : asserts_) {
    os << (a.pass ? "PASS " : "FAIL ") << a.name;
    if (!a.detail.empty()) os << " " << a.detail;
    os << "\n";
  }
  return os.str();
}

Simulator::Simulator(World& world, Rng& rng, Tick max_ticks)
    : world_(world), rng_(rng), max_ticks_(max_ticks) {}

std::string Simulator::endpoint_token(EndpointId id) const {
  if (const NodeRecord* rec = world_.find(id)) {
    return rec->name.empty() ? rec->node_id.hex8() : rec->name;
  }
  auto st = world_.storages.find(id);
  if (st != world_.storages.end()) {
    return st->second.name.empty() ? st->second.node_id.hex8()
                                   : st->second.name;
  }
  return id == 0 ? "external" : "ep" + std::to_string(id);
}

std::uint64_t Simulator::sends_for(TraceId trace_id) const {
  auto it = sends_per_trace_.find(trace_id);
  return it == sends_per_trace_.end() ? 0 : it->second;
}

Result<std::vector<EndpointId>> Simulator::route(RouteMode mode,
                                                 EndpointId dst) const {
  if (!world_.find(dst) && !world_.storages.count(dst)) return Err::NotFound;
  switch (mode) {
    case RouteMode::DirectIp:
      return std::vector<EndpointId>{dst};
    case RouteMode::GatewayRelay: {
      const NodeRecord* rec = world_.find(dst);
      if (!rec || !rec->tenant) return Err::DeliveryFailed;
      auto t = world_.tenants.find(*rec->tenant);
      if (t == world_.tenants.end() || !t->second.gateway) {
        return Err::DeliveryFailed;
      }
      if (*t->second.gateway == dst) return std::vector<EndpointId>{dst};
      return std::vector<EndpointId>{*t->second.gateway, dst};
    }
    case RouteMode::VirgoIdPath: {
      // Down the tree from the root: the destination's ancestor chain.
      auto path = world_.path_to_root(dst);
      if (path.empty()) return Err::DeliveryFailed;
      std::reverse(path.begin(), path.end());
      return path;
    }
    case RouteMode::OverlayLookup: {
      // Deterministic relay choice: the two top-layer members with the
      // smallest digests across the whole overlay, then the destination.
      std::vector<std::pair<Digest, EndpointId>> uppers;
      for (const auto& [tid, info] : world_.tenants) {
        for (EndpointId m : world_.tenant_members(tid)) {
          if (m == dst) continue;
          if (world_.depth_of(m) <= 1) {
            uppers.emplace_back(world_.find(m)->node_id, m);
          }
        }
      }
      std::sort(uppers.begin(), uppers.end());
      std::vector<EndpointId> path;
      for (std::size_t i = 0; i < uppers.size() && i < 2; ++i) {
        path.push_back(uppers[i].second);
      }
      path.push_back(dst);
      return path;
    }
  }
  return Err::InvalidArgument;
}

void Simulator::push(Tick at, SimEvent ev) {
  queue_.emplace(std::make_pair(at, seq_++), std::move(ev));
}

Status Simulator::send(EndpointId src, EndpointId dst, RouteMode mode,
                       const Envelope& env) {
  auto path = route(mode, dst);
  if (!path) {
    trace_.event(now_, "send-fail", endpoint_token(src), endpoint_token(dst),
                 msg_type_name(env.declared_type), env.trace_id,
                 std::string("err=") + err_name(path.error()));
    return path.error();
  }
  trace_.event(now_, "send", endpoint_token(src), endpoint_token(dst),
               msg_type_name(env.declared_type), env.trace_id,
               std::string("mode=") + route_mode_name(mode) +
                   " hops=" + std::to_string(path.value().size()));
  WireRecord rec{now_, src, dst, false, env.wire_bytes()};
  wire_.push_back(rec);
  if (tap_) tap_->on_wire(rec);
  ++sends_per_trace_[env.trace_id];
  ++total_sends_;
  push(now_ + 1, DeliverEvent{env, src, path.take(), 0});
  return ok_status();
}

Status Simulator::send_direct(EndpointId src, EndpointId dst,
                              const Envelope& env) {
  return send(src, dst, RouteMode::DirectIp, env);
}

void Simulator::send_session(EndpointId src, EndpointId dst, TraceId trace_id,
                             const std::string& channel, const Bytes& payload) {
  trace_.event(now_, "session", endpoint_token(src), endpoint_token(dst),
               channel, trace_id, "");
  WireRecord rec{now_, src, dst, true, payload};
  wire_.push_back(rec);
  if (tap_) tap_->on_wire(rec);
  push(now_ + 1, SessionEvent{src, dst, trace_id, channel, payload});
}

void Simulator::schedule_timeout(Tick at, EndpointId node, TraceId trace_id,
                                 const std::string& key) {
  push(at, TimeoutEvent{node, trace_id, key});
}

void Simulator::schedule_adversary(Tick at, const std::string& key) {
  push(at, TimeoutEvent{0, 0, "adv!" + key});
}

void Simulator::inject(EndpointId dst, const Envelope& env,
                       const std::string& why) {
  trace_.event(now_, "inject", "adversary", endpoint_token(dst),
               msg_type_name(env.declared_type), env.trace_id, why);
  WireRecord rec{now_, 0, dst, false, env.wire_bytes()};
  wire_.push_back(rec);
  if (tap_) tap_->on_wire(rec);
  push(now_ + 1, DeliverEvent{env, 0, {dst}, 0});
}

void Simulator::deliver(const DeliverEvent& ev) {
  EndpointId at = ev.path[ev.hop];
  if (ev.hop + 1 < ev.path.size()) {
    trace_.event(now_, "relay", endpoint_token(at),
                 endpoint_token(ev.path[ev.hop + 1]), "-", ev.env.trace_id,
                 "");
    DeliverEvent next = ev;
    next.hop += 1;
    push(now_ + 1, std::move(next));
    return;
  }
  NetworkTap::Verdict verdict;
  if (tap_) verdict = tap_->on_final_hop(SimEvent{ev});
  if (verdict.kind == NetworkTap::Verdict::Drop) {
    trace_.event(now_, "drop", "adversary", endpoint_token(at),
                 msg_type_name(ev.env.declared_type), ev.env.trace_id,
                 verdict.why);
    return;
  }
  const Envelope& env =
      verdict.kind == NetworkTap::Verdict::Replace ? verdict.replacement
                                                   : ev.env;
  if (verdict.kind == NetworkTap::Verdict::Replace) {
    trace_.event(now_, "tamper", "adversary", endpoint_token(at),
                 msg_type_name(env.declared_type), env.trace_id, verdict.why);
  }
  trace_.event(now_, "deliver", endpoint_token(ev.src), endpoint_token(at),
               msg_type_name(env.declared_type), env.trace_id, "");
  if (handler_) handler_->on_deliver(at, ev.src, env);
}

Result<Tick> Simulator::run_until_quiescent() {
  while (!queue_.empty()) {
    auto it = queue_.begin();
    Tick at = it->first.first;
    SimEvent ev = std::move(it->second);
    queue_.erase(it);
    if (at > max_ticks_) {
      trace_.event(now_, "halt", "-", "-", "-", 0,
                   "tick-bound-exceeded max=" + std::to_string(max_ticks_));
      return Err::NonTermination;
    }
    now_ = std::max(now_, at);
    if (auto* d = std::get_if<DeliverEvent>(&ev)) {
      deliver(*d);
    } else if (auto* s = std::get_if<SessionEvent>(&ev)) {
      NetworkTap::Verdict verdict;
      if (tap_) verdict = tap_->on_final_hop(ev);
      if (verdict.kind == NetworkTap::Verdict::Drop) {
        trace_.event(now_, "drop", "adversary", endpoint_token(s->dst),
                     s->channel, s->trace_id, verdict.why);
        continue;
      }
      SessionEvent delivered = *s;
      if (verdict.kind == NetworkTap::Verdict::Replace) {
        delivered.payload = verdict.session_replacement;
        trace_.event(now_, "tamper", "adversary", endpoint_token(s->dst),
                     s->channel, s->trace_id, verdict.why);
      }
      trace_.event(now_, "session-deliver", endpoint_token(s->src),
                   endpoint_token(s->dst), s->channel, s->trace_id, "");
      if (handler_) handler_->on_session(delivered);
    } else if (auto* t = std::get_if<TimeoutEvent>(&ev)) {
      if (t->key.rfind("adv!", 0) == 0) {
        if (tap_) tap_->on_scheduled(t->key.substr(4));
      } else if (handler_) {
        handler_->on_timeout(*t);
      }
    }
  }
  return now_;
}

}  // namespace pvtn
