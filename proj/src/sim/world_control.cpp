#include "world.hpp"

#include <algorithm>

namespace awima::sim::detail {

namespace {

ojson promise_json(const QosPromise& q) { return {{"bandwidth", q.avgBandwidth}, {"duration", q.duration}, {"cost", q.cost}}; }

QosPromise promise_from(const ojson& j) {
  return QosPromise{j.at("bandwidth").get<double>(), j.at("duration").get<double>(), j.at("cost").get<double>()};
}

ojson beacon_json(const Beacon& b) {
  return {{"sp", to_string(b.sp)},     {"goodness", b.goodness}, {"bandwidth", b.availBandwidth},
          {"cost", b.cost},            {"remaining", b.remainingDuration}, {"at", b.at},
          {"x", b.position.x},         {"y", b.position.y}};
}

Beacon beacon_from(const ojson& j) {
  Beacon b;
  b.sp = *parse_node_id(j.at("sp").get<std::string>());
  b.goodness = j.at("goodness").get<double>();
  b.availBandwidth = j.at("bandwidth").get<double>();
  b.cost = j.at("cost").get<double>();
  b.remainingDuration = j.at("remaining").get<double>();
  b.at = j.at("at").get<SimTime>();
  b.position = {j.at("x").get<double>(), j.at("y").get<double>()};
  return b;
}

NodeId node_at(const ojson& j, const char* key) { return *parse_node_id(j.at(key).get<std::string>()); }

ControlSession active_session(SessionKind kind, NodeId a, NodeId b, const SymmetricKey& k) {
  return ControlSession{k.keyId, {a, b}, k, kind, SessionState::Active};
}

const char* purpose_name(AssocPurpose p) {
  switch (p) {
    case AssocPurpose::Initial: return "initial";
    case AssocPurpose::Leg: return "leg";
    case AssocPurpose::Handoff: return "handoff";
  }
  return "?";
}

}  // namespace

// ---- notes ----

std::optional<SymmetricKey> World::note_key(NodeId from, NodeId to) const {
  const ControlSession* s = nullptr;
  if (from.role == Role::Client && to == server_id()) {
    s = clients_.at(from)->book.active(SessionKind::ClientServer, to);
  } else if (from.role == Role::ServiceProvider && to == server_id()) {
    s = sps_.at(from)->book.active(SessionKind::SpServer, to);
  } else if (from == server_id() && to.role == Role::Client) {
    s = server_->book.active(SessionKind::ClientServer, to);
  } else if (from == server_id() && to.role == Role::ServiceProvider) {
    s = server_->book.active(SessionKind::SpServer, to);
  }
  if (s == nullptr) return std::nullopt;
  return s->key;
}

void World::note(NodeId from, NodeId to, NoteKind k, const ojson& body, NodeId via) {
  const auto key = note_key(from, to);
  if (!key) {
    emit("NOTE_FAIL", from, {{"kind", to_string(k)}, {"to", to_string(to)}});
    return;
  }
  ojson doc = body;
  doc["kind"] = to_string(k);
  const std::string text = doc.dump();
  Envelope env = reg_.seal(*key, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  emit("NOTE", from, {{"kind", to_string(k)}, {"to", to_string(to)}, {"keyRef", env.keyRef}});
  send(from, via, NoteMsg{from, to, k, std::move(env)});
}

std::optional<ojson> World::open_note(const NoteMsg& m, const SessionBook& book, SessionKind kind, NodeId peer) {
  const ControlSession* s = book.active(kind, peer);
  if (s == nullptr) {
    emit("SECURITY_ALERT", book.owner(), {{"reason", "note without session"}, {"from", to_string(peer)}});
    return std::nullopt;
  }
  try {
    const Bytes plain = open(s->key, m.env);
    return ojson::parse(plain.begin(), plain.end());
  } catch (const std::exception&) {
    emit("SECURITY_ALERT", book.owner(), {{"reason", "note failed to open"}, {"from", to_string(peer)}});
    return std::nullopt;
  }
}

void World::send_ctl(NodeId from, NodeId hop, ControlMessage m) {
  ojson d = {{"kind", to_string(m.kind)}, {"from", to_string(m.from)}, {"to", to_string(m.to)}};
  if (auto ref = envelope_key_ref(m)) d["keyRef"] = *ref;
  emit("CTL", from, std::move(d));
  send(from, hop, CtlMsg{std::move(m)});
}

// ---- service provider ----

void World::sp_start(SpNode& s) {
  HandshakeContext ctx{reg_, s.rng, &s.creds, nullptr, std::nullopt, std::nullopt};
  auto start = start_handshake(SessionKind::SpServer, s.st.id, server_id(), std::nullopt, ctx);
  s.hs = std::move(start.state);
  send_ctl(s.st.id, server_id(), std::move(start.first));
}

void World::sp_beacon(SpNode& s) {
  if (!s.alive || ended_) return;
  s.st.position = s.motion.at(q_.now());
  drain_energy(s.st, sc_.beaconInterval);
  if (auto b = emit_beacon(s.st, q_.now())) {
    emit("BEACON", s.st.id, {{"bandwidth", b->availBandwidth}, {"goodness", b->goodness}});
    for (const auto& [cid, c] : clients_) send(s.st.id, cid, BeaconMsg{*b});
  }
  SpNode* node = &s;
  q_.schedule(q_.now() + sc_.beaconInterval, [this, node] { sp_beacon(*node); });
}

void World::sp_on_ctl(SpNode& s, NodeId hop, CtlMsg& msg) {
  const NodeId me = s.st.id;
  const ControlMessage& m = msg.m;
  if (m.to != me) {
    // Relay between a client and the Server; the SP holds no key for it.
    if (m.to == server_id() || m.to.role == Role::Client) send(me, m.to, std::move(msg));
    return;
  }
  try {
    if (hop == server_id()) {
      const ControlSession* xs = s.book.active(SessionKind::SpServer, server_id());
      if (m.kind == MessageKind::AuthNotify && xs != nullptr) {
        const NodeId c = open_auth_notify(m, xs->key);
        s.authorized.insert(c);
        emit("AUTH_NOTIFY", me, {{"client", to_string(c)}});
      } else if (m.kind == MessageKind::KeyRelay && xs != nullptr) {
        const RelayedKey rk = open_key_relay(m, xs->key);
        if (rk.kind != SessionKind::SpClient || rk.a != me) throw Error(ErrorCode::ProtocolViolation, "foreign key");
        s.clientKeys[rk.b] = rk.key;
        s.book.put(rk.b, active_session(SessionKind::SpClient, me, rk.b, rk.key));
        s.authorized.insert(rk.b);
        emit("KEY_STAGED", me, {{"client", to_string(rk.b)}});
        send_ctl(me, server_id(), make_key_accept(reg_, me, server_id(), rk.key));
      } else if (s.hs && !s.hs->terminal()) {
        HandshakeContext ctx{reg_, s.rng, &s.creds, nullptr, std::nullopt, std::nullopt};
        auto r = step_handshake(*s.hs, m, ctx);
        s.hs = r.state;
        for (auto& out : r.out) send_ctl(me, server_id(), std::move(out));
        if (r.session) {
          s.book.put(server_id(), *r.session);
          emit("SESSION_UP", me, {{"peer", "S0"}, {"kind", "SpServer"}});
          note(me, server_id(), NoteKind::Register, {{"protocol", s.st.wwan.protocol}}, server_id());
        } else if (s.hs->status == HandshakeStatus::Aborted) {
          emit("REGISTER_FAIL", me, {{"error", to_string(*s.hs->error)}});
        }
      }
    } else if (hop.role == Role::Client && m.kind == MessageKind::KeyRelay) {
      auto it = s.clientKeys.find(hop);
      if (it == s.clientKeys.end()) throw Error(ErrorCode::MissingSession, "no K_SP,C");
      const RelayedKey rk = open_key_relay(m, it->second);
      s.linkKeys[hop] = rk.key;
      emit("LINK_KEY", me, {{"client", to_string(hop)}});
      send_ctl(me, hop, make_key_accept(reg_, me, hop, rk.key));
    }
  } catch (const Error& e) {
    emit("SECURITY_ALERT", me, {{"reason", e.what()}, {"from", to_string(hop)}});
  }
}

void World::sp_on_note(SpNode& s, NodeId hop, NoteMsg& m) {
  const NodeId me = s.st.id;
  if (m.to != me) {
    if (m.to == server_id() || m.to.role == Role::Client) send(me, m.to, std::move(m));
    return;
  }
  if (hop != server_id()) return;
  auto body = open_note(m, s.book, SessionKind::SpServer, server_id());
  if (!body) return;
  switch (m.kind) {
    case NoteKind::RegisterOk: {
      if (s.st.registered) break;
      s.st.registered = true;
      s.st.goodness.value = body->at("goodness").get<double>();
      emit("REGISTERED", me, {{"goodness", s.st.goodness.value}});
      SpNode* node = &s;
      q_.schedule(q_.now(), [this, node] {
        if (!node->alive) return;
        // first beacon goes out without an energy charge
        if (auto b = emit_beacon(node->st, q_.now())) {
          emit("BEACON", node->st.id, {{"bandwidth", b->availBandwidth}, {"goodness", b->goodness}});
          for (const auto& [cid, c] : clients_) send(node->st.id, cid, BeaconMsg{*b});
        }
        q_.schedule(q_.now() + sc_.beaconInterval, [this, node] { sp_beacon(*node); });
      });
      break;
    }
    case NoteKind::KeyRequest: {
      // This SP generates K_SP,C and sends it to the Server for relaying.
      const NodeId c = node_at(*body, "client");
      const SymmetricKey k = reg_.keygen(s.rng);
      s.clientKeys[c] = k;
      s.book.put(c, active_session(SessionKind::SpClient, me, c, k));
      s.authorized.insert(c);
      emit("KEY_STAGED", me, {{"client", to_string(c)}});
      const auto* xs = s.book.active(SessionKind::SpServer, server_id());
      send_ctl(me, server_id(), make_key_relay(reg_, me, server_id(), xs->key, {SessionKind::SpClient, me, c, k}));
      break;
    }
    case NoteKind::HandoffNotice: {
      HandoffPlan p;
      p.id = body->at("plan").get<std::uint64_t>();
      p.client = node_at(*body, "client");
      p.from = me;
      p.to = node_at(*body, "to");
      p.drainMode = body->at("mode").get<std::string>() == "DirectLink" ? DrainMode::DirectLink : DrainMode::ViaServer;
      p.drainTimer = body->at("drain_timer").get<SimTime>();
      p.advance(HandoffState::PreAuthed);
      p.advance(HandoffState::Executing);
      s.notices[p.client] = p;
      break;
    }
    default: break;
  }
}

void World::sp_close(SpNode& s, NodeId c, CloseReason why) {
  const SessionRecord r = close_session(s.st, c, why, q_.now());
  s.authorized.erase(c);
  s.linkKeys.erase(c);
  emit("SESSION_END", s.st.id, {{"client", to_string(c)}, {"reason", to_string(why)}});
  note(s.st.id, server_id(), NoteKind::SessionRecord,
       {{"client", to_string(c)},
        {"promise", promise_json(r.promise)},
        {"elapsed", r.elapsed},
        {"bytes", r.bytesCarried},
        {"delivered", r.deliveredBandwidth},
        {"completion", r.completionRatio},
        {"reason", static_cast<int>(r.reason)}},
       server_id());
}

void World::sp_on_radio(SpNode& s, RadioMsg& m) {
  const NodeId me = s.st.id;
  const NodeId c = m.client;
  switch (m.kind) {
    case RadioKind::AssocRequest: {
      const AdmitDecision d = admit_client(s.st, c, m.promise, sc_.weights, q_.now());
      RadioMsg reply{RadioKind::AssocDeny, c, me, m.promise, {}, m.leg};
      if (d.admitted) {
        try {
          reply.dhcp = lease_dhcp(s.st, c);
          reply.kind = RadioKind::AssocAccept;
          s.st.standby.erase(c);
          emit("ADMIT", me, {{"client", to_string(c)}, {"dhcp", to_string(reply.dhcp)},
                             {"bandwidth", m.promise.avgBandwidth}, {"leg", m.leg}});
        } catch (const Error& e) {
          s.st.admitted.erase(c);
          emit("DENY", me, {{"client", to_string(c)}, {"reason", "dhcp"}});
        }
      } else {
        emit("DENY", me, {{"client", to_string(c)}, {"reason", d.reason}});
      }
      send(me, c, reply);
      break;
    }
    case RadioKind::Disassoc: {
      if (s.st.admitted.count(c) == 0) break;
      const auto lease = s.st.dhcp_of(c);
      sp_close(s, c, s.withdrawn ? CloseReason::Withdraw : CloseReason::Handoff);
      auto n = s.notices.find(c);
      if (n != s.notices.end() && lease) {
        Drain d;
        d.plan = n->second;
        d.plan.advance(HandoffState::Draining);
        d.plan.deadline = q_.now() + d.plan.drainTimer;
        d.rq.at = me;
        d.rq.deadline = d.plan.deadline;
        d.to = d.plan.to;
        d.oldDhcp = lease->value;
        s.notices.erase(n);
        emit("DRAIN", me, {{"client", to_string(c)}, {"plan", d.plan.id}, {"deadline", d.plan.deadline}});
        const SimTime deadline = d.plan.deadline;
        s.drains[c] = std::move(d);
        SpNode* node = &s;
        q_.schedule(deadline, [this, node, c] {
          auto it = node->drains.find(c);
          if (it == node->drains.end()) return;
          sp_residual(*node, it->second, {});
        });
      } else if (lease) {
        s.nat->remove_inside(lease->value);
      }
      break;
    }
    case RadioKind::Standby: {
      if (s.st.registered && s.st.admitted.count(c) == 0 && s.st.standby.size() < s.st.lightweightSlots) {
        s.st.standby.insert(c);
        send(me, c, RadioMsg{RadioKind::StandbyOk, c, me, {}, {}, false});
      }
      break;
    }
    default: break;
  }
}

void World::sp_withdraw_now(SpNode& s) {
  s.withdrawn = true;
  const std::vector<NodeId> served = sp_withdraw(s.st, {});
  ojson list = ojson::array();
  for (NodeId c : served) list.push_back(to_string(c));
  emit("SP_WITHDRAW", s.st.id, {{"clients", list}});
  note(s.st.id, server_id(), NoteKind::Withdraw, {{"clients", list}}, server_id());
  for (NodeId c : served) send(s.st.id, c, RadioMsg{RadioKind::WithdrawNotice, c, s.st.id, {}, {}, false});
}

// ---- client ----

void World::sync(ClientNode& c) { c.st.position = c.motion.at(q_.now()); }

void World::client_start(ClientNode& c) {
  emit("CLIENT_START", c.st.id, {{"bandwidth", c.st.needs.avgBandwidth}});
  client_tick(c);
}

std::optional<NodeId> World::client_relay(const ClientNode& c) const {
  const SimTime now = q_.now();
  auto fresh = [&](NodeId sp) {
    auto it = c.heard.find(sp);
    return it != c.heard.end() && now - it->second.at <= kBeaconFreshness;
  };
  if (c.st.association && fresh(*c.st.association)) return c.st.association;
  std::optional<NodeId> best;
  double bestQ = -1;
  for (const auto& [sp, b] : c.heard) {
    if (!fresh(sp)) continue;
    const double q = link_quality(distance(c.st.position, b.position), c.st.range);
    if (q > bestQ) {
      bestQ = q;
      best = sp;
    }
  }
  return best;
}

std::vector<Ranked> World::client_candidates(const ClientNode& c) const {
  std::vector<Beacon> heard;
  for (const auto& [sp, b] : c.heard) {
    if (c.st.association == sp) continue;
    auto a = c.avoid.find(sp);
    if (a != c.avoid.end() && a->second > q_.now()) continue;
    heard.push_back(b);
  }
  try {
    return client_discover(c.st, heard, q_.now(), sc_.adhoc.bandwidth, sc_.weights.client);
  } catch (const Error&) {
    return {};
  }
}

void World::client_connect(ClientNode& c) {
  const auto ranked = client_candidates(c);
  if (ranked.empty()) return;
  NodeId primary = ranked.front().sp;
  QosPromise promise = c.st.needs;
  if (c.spec.parallel && ranked.size() > 1) {
    std::vector<Candidate> cands;
    for (const auto& r : ranked) cands.push_back(Candidate{r.sp, c.heard.at(r.sp).availBandwidth, r.utility, true});
    try {
      c.plan = plan_parallel(c.st.id, cands, c.st.needs.avgBandwidth, c.st.radios);
      ojson legs = ojson::array();
      for (const auto& l : c.plan->legs) legs.push_back({{"sp", to_string(l.sp)}, {"units", l.units}});
      emit("PLAN", c.st.id, {{"mode", to_string(c.plan->mode)}, {"legs", legs}, {"best_effort", c.plan->bestEffort}});
      primary = c.plan->legs.front().sp;
      promise.avgBandwidth = c.st.needs.avgBandwidth * c.plan->legs.front().fraction();
    } catch (const Error&) {
      c.plan.reset();
    }
  }
  c.pending = PendingAssoc{primary, AssocPurpose::Initial, 0};
  c.pendingSince = q_.now();
  send(c.st.id, primary, RadioMsg{RadioKind::AssocRequest, c.st.id, primary, promise, {}, false});
}

void World::client_tick(ClientNode& c) {
  if (ended_) return;
  sync(c);
  const SimTime now = q_.now();
  const SimTime lostAfter = kMissedBeaconThreshold * sc_.beaconInterval + sc_.beaconInterval / 2;
  auto silent = [&](NodeId sp) {
    auto it = c.heard.find(sp);
    return it == c.heard.end() || now - it->second.at > lostAfter;
  };

  if (c.pending && now - c.pendingSince > 2 * kSeconds) {
    if (c.pending->purpose == AssocPurpose::Handoff && c.handoff) {
      note(c.st.id, server_id(), NoteKind::HandoffAbort, {{"plan", c.pending->plan}, {"reason", "timeout"}},
           client_relay(c).value_or(c.pending->sp));
      c.handoff.reset();
    }
    c.pending.reset();
  }
  if (c.st.association && silent(*c.st.association)) client_lost_sp(c, *c.st.association);
  std::vector<NodeId> legs;
  for (const auto& [sp, a] : c.legDhcp) legs.push_back(sp);
  for (NodeId sp : legs) {
    if (silent(sp)) client_lost_sp(c, sp);
  }

  if (!c.st.tunnel) {
    const bool haveSession = c.book.active(SessionKind::ClientServer, server_id()) != nullptr;
    if (!c.st.association && !c.pending) {
      client_connect(c);
    } else if (c.st.association && !haveSession && c.hs && c.hs->status == HandshakeStatus::Aborted) {
      c.hs.reset();
      c.pending.reset();
      disassociate(c.st);
    }
  } else {
    if (c.handoff && c.handoff->plan == 0 && now - c.handoff->since > 5 * kSeconds) c.handoff.reset();
    const bool idle = !c.handoff && !c.pending && (c.lastRequest < 0 || now - c.lastRequest >= 3 * kSeconds);
    if (!c.st.association) {
      if (idle) client_request_handoff(c, c.lastAssoc, "lost");
    } else {
      if (c.boundEpoch != c.bindEpoch && now - c.lastBind >= kSeconds) client_bind(c);
      if (idle && c.leaving == c.st.association) {
        client_request_handoff(c, std::nullopt, "withdraw");
      } else if (idle && !c.plan && c.heard.count(*c.st.association) != 0) {
        const double q = link_quality(distance(c.st.position, c.heard.at(*c.st.association).position), c.st.range);
        if (q < c.spec.handoffQuality) {
          const auto cands = client_candidates(c);
          if (!cands.empty()) {
            const Beacon& best = c.heard.at(cands.front().sp);
            if (link_quality(distance(c.st.position, best.position), c.st.range) > q) {
              client_request_handoff(c, std::nullopt, "link_quality");
            }
          }
        }
      }
    }
    if (now - c.lastReport >= sc_.reportInterval) {
      c.lastReport = now;
      client_report(c);
      if (!c.plan) client_standby(c);
    }
  }
  ClientNode* node = &c;
  q_.schedule(now + 250 * kMillis, [this, node] { client_tick(*node); });
}

void World::client_on_beacon(ClientNode& c, const Beacon& b) {
  c.heard[b.sp] = b;
}

void World::client_on_ctl(ClientNode& c, CtlMsg& msg) {
  const ControlMessage& m = msg.m;
  const NodeId me = c.st.id;
  if (m.to != me) return;
  try {
    if (m.from == server_id()) {
      const ControlSession* xs = c.book.active(SessionKind::ClientServer, server_id());
      if (m.kind == MessageKind::KeyRelay && xs != nullptr) {
        const RelayedKey rk = open_key_relay(m, xs->key);
        if (rk.kind != SessionKind::SpClient || rk.b != me) throw Error(ErrorCode::ProtocolViolation, "foreign key");
        c.spKeys[rk.a] = rk.key;
        c.book.put(rk.a, active_session(SessionKind::SpClient, rk.a, me, rk.key));
        emit("KEY_STAGED", me, {{"sp", to_string(rk.a)}});
        if (auto relay = client_relay(c)) send_ctl(me, *relay, make_key_accept(reg_, me, server_id(), rk.key));
      } else if (c.hs && !c.hs->terminal()) {
        HandshakeContext ctx{reg_, c.rng, &c.creds, nullptr, std::nullopt, std::nullopt};
        auto r = step_handshake(*c.hs, m, ctx);
        c.hs = r.state;
        const auto relay = client_relay(c);
        for (auto& out : r.out) {
          if (relay) send_ctl(me, *relay, std::move(out));
        }
        if (r.session) {
          c.book.put(server_id(), *r.session);
          emit("SESSION_UP", me, {{"peer", "S0"}, {"kind", "ClientServer"}});
          ojson flows = ojson::array();
          for (const auto& f : c.spec.flows) {
            if (f.direction != Direction::Down) continue;
            flows.push_back({{"index", f.index},
                             {"rel", f.reliability == Reliability::Reliable ? "reliable" : "unreliable"},
                             {"packets", f.packets},
                             {"payload", f.payload},
                             {"interval", f.interval},
                             {"start", f.start}});
          }
          QosPromise promise = c.st.needs;
          if (c.plan) promise.avgBandwidth *= c.plan->legs.front().fraction();
          note(me, server_id(), NoteKind::TunnelRequest,
               {{"needs", promise_json(c.st.needs)},
                {"promise", promise_json(promise)},
                {"range", c.st.range},
                {"x", c.st.position.x},
                {"y", c.st.position.y},
                {"flows", flows}},
               relay.value_or(*c.st.association));
          c.tunnelRequested = true;
        } else if (c.hs->status == HandshakeStatus::Aborted) {
          emit("HANDSHAKE_FAIL", me, {{"error", to_string(*c.hs->error)}});
        }
      }
    } else if (m.from.role == Role::ServiceProvider && m.kind == MessageKind::Accept) {
      auto it = c.pendingWk.find(m.from);
      if (it != c.pendingWk.end() && verify_key_accept(m, it->second)) {
        c.linkKeys[m.from] = it->second;
        c.pendingWk.erase(it);
        emit("LINK_KEY", me, {{"sp", to_string(m.from)}});
      }
    }
  } catch (const Error& e) {
    emit("SECURITY_ALERT", me, {{"reason", e.what()}, {"from", to_string(m.from)}});
  }
}

void World::client_on_note(ClientNode& c, NoteMsg& m) {
  if (m.to != c.st.id || m.from != server_id()) return;
  auto body = open_note(m, c.book, SessionKind::ClientServer, server_id());
  if (!body) return;
  const NodeId me = c.st.id;
  sync(c);
  switch (m.kind) {
    case NoteKind::TunnelGrant: {
      if (c.st.tunnel || !c.st.association) break;
      Tunnel t;
      t.client = me;
      t.vpnAddr = make_address(AddressKind::ClientVpn, body->at("vpn").get<std::uint32_t>());
      t.tunnelKey.keyId = body->at("key_id").get<std::uint64_t>();
      const std::string hex = body->at("key").get<std::string>();
      for (std::size_t i = 0; i < t.tunnelKey.material.size(); ++i) {
        t.tunnelKey.material[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
      }
      c.st.tunnel = t;
      c.originalVpn = t.vpnAddr;
      c.originalKey = t.tunnelKey;
      c.pathAuthorized = true;
      emit("TUNNEL_UP", me, {{"vpn", to_string(t.vpnAddr)}, {"key", t.tunnelKey.keyId}, {"via", to_string(*c.st.association)}});
      const NodeId sp = *c.st.association;
      if (c.spKeys.count(sp) != 0) {
        const SymmetricKey wk = reg_.keygen(c.rng);
        c.pendingWk[sp] = wk;
        send_ctl(me, sp, make_key_relay(reg_, me, sp, c.spKeys.at(sp), {SessionKind::SpClient, sp, me, wk}));
      }
      c.bindEpoch = 1;
      client_bind(c);
      if (c.plan) {
        for (const auto& l : c.plan->legs) {
          if (l.sp == sp) continue;
          QosPromise pr = c.st.needs;
          pr.avgBandwidth *= l.fraction();
          send(me, l.sp, RadioMsg{RadioKind::AssocRequest, me, l.sp, pr, {}, true});
        }
        client_plan_changed(c);
      }
      client_start_flows(c);
      break;
    }
    case NoteKind::KeyRequest: {
      // This client generates K_SP,C.
      const NodeId sp = node_at(*body, "sp");
      const SymmetricKey k = reg_.keygen(c.rng);
      c.spKeys[sp] = k;
      c.book.put(sp, active_session(SessionKind::SpClient, sp, me, k));
      emit("KEY_STAGED", me, {{"sp", to_string(sp)}});
      const auto* xs = c.book.active(SessionKind::ClientServer, server_id());
      if (auto relay = client_relay(c)) {
        send_ctl(me, *relay, make_key_relay(reg_, me, server_id(), xs->key, {SessionKind::SpClient, sp, me, k}));
      }
      break;
    }
    case NoteKind::HandoffGo: {
      const std::uint64_t plan = body->at("plan").get<std::uint64_t>();
      const NodeId to = node_at(*body, "to");
      const bool lost = body->at("lost").get<bool>();
      const NodeId from = node_at(*body, "from");
      c.handoff = ClientHandoff{plan, from, to, lost, q_.now()};
      if (!in_range(me, to) || c.spKeys.count(to) == 0) {
        emit("HANDOFF_UNREACHABLE", me, {{"plan", plan}, {"to", to_string(to)}});
        note(me, server_id(), NoteKind::HandoffAbort, {{"plan", plan}, {"reason", "unreachable"}},
             client_relay(c).value_or(to));
        c.handoff.reset();
        break;
      }
      c.pending = PendingAssoc{to, AssocPurpose::Handoff, plan};
      c.pendingSince = q_.now();
      send(me, to, RadioMsg{RadioKind::AssocRequest, me, to, c.st.needs, {}, false});
      break;
    }
    case NoteKind::HandoffAbort: {
      c.handoff.reset();
      if (c.pending && c.pending->purpose == AssocPurpose::Handoff) c.pending.reset();
      emit("HANDOFF_ABORTED", me, {{"plan", body->at("plan")}, {"reason", body->at("reason")}});
      break;
    }
    case NoteKind::LegReady: {
      const NodeId sp = node_at(*body, "sp");
      if (c.legDhcp.count(sp) != 0) {
        c.legsReady.insert(sp);
        client_plan_changed(c);
      }
      break;
    }
    case NoteKind::BindAck: {
      const std::uint64_t epoch = body->at("epoch").get<std::uint64_t>();
      if (epoch != c.bindEpoch || c.boundEpoch == epoch) break;
      c.boundEpoch = epoch;
      if (c.st.tunnel) c.st.tunnel->state = TunnelState::Up;
      if (c.handoff && c.handoff->plan != 0 && c.st.association == c.handoff->to) c.handoff.reset();
      for (auto& [idx, f] : c.tx) {
        if (f.arq) f.arq->expedite(q_.now());
      }
      client_pump(c);
      break;
    }
    default: break;
  }
}

void World::client_on_radio(ClientNode& c, RadioMsg& m) {
  const NodeId me = c.st.id;
  sync(c);
  switch (m.kind) {
    case RadioKind::AssocAccept: {
      if (m.leg) {
        if (!c.plan || !c.plan->leg(m.sp) || !c.st.tunnel) break;
        c.legDhcp[m.sp] = m.dhcp;
        emit("ASSOCIATE", me, {{"sp", to_string(m.sp)}, {"dhcp", to_string(m.dhcp)}, {"purpose", "leg"}});
        note(me, server_id(), NoteKind::LegRequest, {{"sp", to_string(m.sp)}, {"promise", promise_json(m.promise)}},
             client_relay(c).value_or(m.sp));
        break;
      }
      if (!c.pending || c.pending->sp != m.sp) {
        // Nobody asked; give the slot back.
        send(me, m.sp, RadioMsg{RadioKind::Disassoc, me, m.sp, {}, {}, false});
        break;
      }
      const PendingAssoc why = *c.pending;
      c.pending.reset();
      client_associated(c, m.sp, m.dhcp, why);
      break;
    }
    case RadioKind::AssocDeny: {
      c.avoid[m.sp] = q_.now() + 5 * kSeconds;
      emit("DENIED", me, {{"sp", to_string(m.sp)}, {"leg", m.leg}});
      if (m.leg) {
        if (c.plan && c.plan->leg(m.sp) && c.plan->legs.size() > 1) {
          try {
            c.plan = reallocate(*c.plan, c.st.needs.avgBandwidth, LegEvent{LegEvent::Kind::Lost, m.sp, 0, 0});
            client_plan_changed(c);
          } catch (const Error&) {
          }
        }
        break;
      }
      if (!c.pending || c.pending->sp != m.sp) break;
      if (c.pending->purpose == AssocPurpose::Handoff) {
        note(me, server_id(), NoteKind::HandoffAbort, {{"plan", c.pending->plan}, {"reason", "denied"}},
             client_relay(c).value_or(m.sp));
        c.handoff.reset();
      } else if (c.plan) {
        c.plan.reset();
      }
      c.pending.reset();
      break;
    }
    case RadioKind::StandbyOk: {
      if (c.st.association != m.sp && c.st.lightweight.size() < 2) {
        c.st.lightweight.insert(m.sp);
        emit("LIGHTWEIGHT", me, {{"sp", to_string(m.sp)}});
      }
      break;
    }
    case RadioKind::WithdrawNotice: {
      emit("WITHDRAW_NOTICE", me, {{"sp", to_string(m.sp)}});
      if (c.st.association == m.sp) {
        c.leaving = m.sp;
        if (c.st.tunnel) c.st.tunnel->state = TunnelState::Rebinding;
      }
      break;
    }
    default: break;
  }
}

void World::client_associated(ClientNode& c, NodeId spId, Address dhcp, const PendingAssoc& why) {
  const NodeId me = c.st.id;
  const std::optional<NodeId> prev = c.st.association;
  accept_association(c.st, spId, dhcp);
  c.avoid.erase(spId);
  emit("ASSOCIATE", me, {{"sp", to_string(spId)}, {"dhcp", to_string(dhcp)}, {"purpose", purpose_name(why.purpose)}});
  if (why.purpose == AssocPurpose::Initial) {
    if (c.book.active(SessionKind::ClientServer, server_id()) == nullptr) {
      HandshakeContext ctx{reg_, c.rng, &c.creds, nullptr, std::nullopt, std::nullopt};
      auto start = start_handshake(SessionKind::ClientServer, me, server_id(), spId, ctx);
      c.hs = std::move(start.state);
      send_ctl(me, spId, std::move(start.first));
    }
    return;
  }
  // Handoff: make-before-break, then leave the old SP.
  if (prev && *prev != spId) {
    emit("DISASSOCIATE", me, {{"sp", to_string(*prev)}, {"plan", why.plan}, {"to", to_string(spId)}});
    send(me, *prev, RadioMsg{RadioKind::Disassoc, me, *prev, {}, {}, false});
  }
  c.leaving.reset();
  c.pathAuthorized = c.spKeys.count(spId) != 0;
  if (c.plan) {
    // A parallel client that moves its primary drops back to a single path.
    c.plan.reset();
    c.legDhcp.clear();
    c.legsReady.clear();
    client_plan_changed(c);
  }
  if (c.pathAuthorized) {
    const SymmetricKey wk = reg_.keygen(c.rng);
    c.pendingWk[spId] = wk;
    send_ctl(me, spId, make_key_relay(reg_, me, spId, c.spKeys.at(spId), {SessionKind::SpClient, spId, me, wk}));
  }
  ++c.bindEpoch;
  client_bind(c);
}

void World::client_lost_sp(ClientNode& c, NodeId spId) {
  emit("SP_LOST", c.st.id, {{"sp", to_string(spId)}});
  c.heard.erase(spId);
  if (c.st.association == spId) {
    c.lastAssoc = spId;
    disassociate(c.st);
    c.pathAuthorized = false;
    if (c.st.tunnel) c.st.tunnel->state = TunnelState::Rebinding;
    if (c.pending && c.pending->sp == spId) c.pending.reset();
    if (c.plan) {
      c.plan.reset();
      c.legDhcp.clear();
      c.legsReady.clear();
      client_plan_changed(c);
    }
    client_request_handoff(c, spId, "lost");
    return;
  }
  if (c.legDhcp.erase(spId) != 0) {
    c.legsReady.erase(spId);
    if (c.plan) {
      try {
        c.plan = reallocate(*c.plan, c.st.needs.avgBandwidth, LegEvent{LegEvent::Kind::Lost, spId, 0, 0});
      } catch (const Error&) {
        c.plan.reset();
      }
    }
    ojson legs = ojson::array();
    if (c.plan) {
      for (const auto& l : c.plan->legs) legs.push_back({{"sp", to_string(l.sp)}, {"units", l.units}});
    }
    emit("LEG_LOST", c.st.id, {{"sp", to_string(spId)}, {"legs", legs}});
    if (auto relay = client_relay(c)) {
      note(c.st.id, server_id(), NoteKind::LegLost, {{"sp", to_string(spId)}}, *relay);
    }
    client_plan_changed(c);
  }
}

void World::client_request_handoff(ClientNode& c, std::optional<NodeId> lost, const char* reason) {
  const auto relay = client_relay(c);
  if (!relay) return;
  const std::optional<NodeId> from = lost ? lost : c.st.association;
  if (!from) return;
  ojson cands = ojson::array();
  for (const auto& r : client_candidates(c)) {
    if (r.sp == *from) continue;
    cands.push_back({{"sp", to_string(r.sp)}, {"utility", r.utility}});
  }
  c.lastRequest = q_.now();
  c.handoff = ClientHandoff{0, *from, {}, lost.has_value(), q_.now()};
  note(c.st.id, server_id(), NoteKind::HandoffRequest,
       {{"from", to_string(*from)}, {"lost", lost.has_value()}, {"reason", reason}, {"candidates", cands}}, *relay);
}

void World::client_report(ClientNode& c) {
  const auto relay = client_relay(c);
  if (!relay) return;
  ojson heard = ojson::array();
  for (const auto& [sp, b] : c.heard) heard.push_back(beacon_json(b));
  note(c.st.id, server_id(), NoteKind::NeighborReport,
       {{"x", c.st.position.x}, {"y", c.st.position.y}, {"heard", heard}}, *relay);
}

void World::client_standby(ClientNode& c) {
  if (c.st.lightweight.size() >= 2) return;
  std::size_t asked = c.st.lightweight.size();
  for (const auto& r : client_candidates(c)) {
    if (asked >= 2) break;
    if (c.st.lightweight.count(r.sp) != 0 || c.st.association == r.sp) continue;
    send(c.st.id, r.sp, RadioMsg{RadioKind::Standby, c.st.id, r.sp, {}, {}, false});
    ++asked;
  }
}

void World::client_plan_changed(ClientNode& c) {
  c.wrrLegs.clear();
  std::vector<std::uint64_t> weights;
  if (c.plan) {
    for (const auto& l : c.plan->legs) {
      const bool ready = l.sp == c.st.association || c.legsReady.count(l.sp) != 0;
      if (!ready || l.units == 0) continue;
      c.wrrLegs.push_back(l.sp);
      weights.push_back(l.units);
    }
  }
  c.wrr = weights.empty() ? SmoothWrr{} : SmoothWrr(weights);
  const bool tdm = c.plan && c.plan->mode == ParallelMode::SingleRadioTdm;
  if (tdm && c.slots.empty()) {
    const SimTime base = q_.now();
    c.slots = schedule_tdm(*c.plan, sc_.tdmQuantum, sc_.duration - base);
    for (auto& s : c.slots) {
      s.start += base;
      s.end += base;
    }
    c.slotIndex = 0;
    if (!c.slots.empty()) {
      ClientNode* node = &c;
      const std::uint64_t gen = c.slots.size();
      q_.schedule(c.slots.front().start, [this, node, gen] { client_tdm_slot(*node, gen); });
    }
  } else if (!tdm && !c.slots.empty()) {
    // Leaving time sharing: whatever waits goes out on the association.
    c.slots.clear();
    c.slotSp.reset();
    for (auto& [sp, queue] : c.tdmQueue) {
      while (!queue.empty()) {
        if (c.st.association) client_transmit(c, *c.st.association, std::move(queue.front()));
        queue.pop_front();
      }
    }
  }
}

// ---- server ----

void World::server_send_ctl(ControlMessage m) {
  NodeId hop = m.to;
  if (m.to.role == Role::Client) {
    auto it = server_->relayOf.find(m.to);
    if (it == server_->relayOf.end()) return;
    hop = it->second;
  }
  send_ctl(server_id(), hop, std::move(m));
}

void World::server_note(NodeId to, NoteKind k, const ojson& body) {
  NodeId via = to;
  if (to.role == Role::Client) {
    auto it = server_->relayOf.find(to);
    if (it == server_->relayOf.end()) return;
    via = it->second;
  }
  note(server_id(), to, k, body, via);
}

void World::server_on_ctl(NodeId hop, CtlMsg& msg) {
  ServerNode& sv = *server_;
  const ControlMessage& m = msg.m;
  const NodeId peer = m.from;
  if (m.to != server_id()) return;
  if (peer.role == Role::Client) sv.relayOf[peer] = hop;
  HandshakeContext ctx{reg_, sv.rng, nullptr, &sv.st.identity, std::nullopt, std::nullopt};
  switch (m.kind) {
    case MessageKind::CertRequest: {
      const SessionKind kind = peer.role == Role::Client ? SessionKind::ClientServer : SessionKind::SpServer;
      std::optional<NodeId> relay;
      if (kind == SessionKind::ClientServer) relay = hop;
      sv.hs[peer] = responder_state(kind, server_id(), peer, relay);
      [[fallthrough]];
    }
    case MessageKind::KeyProposal:
    case MessageKind::Credentials:
    case MessageKind::Reject: {
      auto it = sv.hs.find(peer);
      if (it == sv.hs.end()) return;
      auto r = step_handshake(it->second, m, ctx);
      it->second = r.state;
      for (auto& out : r.out) server_send_ctl(std::move(out));
      if (it->second.status == HandshakeStatus::Aborted) {
        emit("HANDSHAKE_FAIL", server_id(), {{"peer", to_string(peer)}, {"error", to_string(*it->second.error)}});
      }
      break;
    }
    case MessageKind::KeyRelay: server_key_relay(peer, m); break;
    case MessageKind::Accept: server_key_ack(peer, m); break;
    default:
      emit("SECURITY_ALERT", server_id(), {{"reason", "unexpected control message"}, {"from", to_string(peer)}});
      break;
  }
}

void World::server_confirm(NodeId peer, const Envelope& e) {
  ServerNode& sv = *server_;
  auto it = sv.hs.find(peer);
  if (it == sv.hs.end() || it->second.status != HandshakeStatus::AwaitingConfirm) return;
  HandshakeContext ctx{reg_, sv.rng, nullptr, &sv.st.identity, std::nullopt, std::nullopt};
  if (it->second.relay) {
    if (const auto* xs = sv.book.active(SessionKind::SpServer, *it->second.relay)) ctx.relayKey = xs->key;
  }
  auto r = confirm_handshake(it->second, peer, e, ctx);
  it->second = r.state;
  if (!r.session) {
    emit("HANDSHAKE_FAIL", server_id(), {{"peer", to_string(peer)}, {"error", to_string(*it->second.error)}});
    return;
  }
  sv.book.put(peer, *r.session);
  emit("SESSION_UP", server_id(), {{"peer", to_string(peer)}, {"kind", to_string(r.session->kind)}});
  for (auto& out : r.out) server_send_ctl(std::move(out));
}

void World::server_on_note(NodeId hop, NoteMsg& m) {
  ServerNode& sv = *server_;
  if (m.to != server_id()) return;
  const NodeId peer = m.from;
  const SessionKind kind = peer.role == Role::Client ? SessionKind::ClientServer : SessionKind::SpServer;
  if (peer.role == Role::Client) sv.relayOf[peer] = hop;
  if (sv.book.active(kind, peer) == nullptr) server_confirm(peer, m.env);
  auto body = open_note(m, sv.book, kind, peer);
  if (!body) return;
  const SimTime now = q_.now();
  switch (m.kind) {
    case NoteKind::Register: {
      if (sv.st.identity.registry.count(peer) == 0) break;
      sv.registered.insert(peer);
      sv.st.graph.place(peer, sps_.count(peer) ? Position{} : Position{});
      emit("REGISTER", server_id(), {{"sp", to_string(peer)}, {"protocol", body->at("protocol")}});
      server_note(peer, NoteKind::RegisterOk, {{"goodness", sv.st.goodness_of(peer).value}});
      break;
    }
    case NoteKind::TunnelRequest: {
      if (sv.tunnels.find(peer) != nullptr) break;
      ServerClient& sc = sv.clients[peer];
      sc.needs = promise_from(body->at("needs"));
      sc.range = body->at("range").get<double>();
      sc.position = {body->at("x").get<double>(), body->at("y").get<double>()};
      for (const auto& f : body->at("flows")) {
        FlowSpec fs;
        fs.index = f.at("index").get<std::uint32_t>();
        fs.direction = Direction::Down;
        fs.reliability = f.at("rel").get<std::string>() == "reliable" ? Reliability::Reliable : Reliability::Unreliable;
        fs.packets = f.at("packets").get<std::uint64_t>();
        fs.payload = f.at("payload").get<std::size_t>();
        fs.interval = f.at("interval").get<SimTime>();
        fs.start = f.at("start").get<SimTime>();
        sc.downFlows.push_back(fs);
      }
      const Tunnel& t = sv.tunnels.open_tunnel(peer, *sv.book.active(SessionKind::ClientServer, peer), reg_, sv.rng);
      emit("TUNNEL_OPEN", server_id(), {{"client", to_string(peer)}, {"vpn", to_string(t.vpnAddr)}, {"key", t.tunnelKey.keyId}});
      const NodeId spId = *sv.hs.at(peer).relay;
      sc.serving[spId] = Serving{promise_from(body->at("promise")), now, 0};
      server_stage_key(KeyJob{peer, spId, KeyPurpose::Initial, 0});
      break;
    }
    case NoteKind::NeighborReport: {
      NeighborReport r;
      r.reporter = peer;
      r.position = {body->at("x").get<double>(), body->at("y").get<double>()};
      r.at = now;
      for (const auto& b : body->at("heard")) r.heard.push_back(beacon_from(b));
      ServerClient& sc = sv.clients[peer];
      if (update_graph(sv.st, sv.book, r, sc.range > 0 ? sc.range : 1.0)) {
        sc.position = r.position;
        sc.lastHeard = r.heard;
        sc.reportAt = now;
        emit("GRAPH_UPDATE", server_id(), {{"reporter", to_string(peer)}, {"heard", r.heard.size()},
                                          {"edges", sv.st.graph.edge_count()}});
      }
      break;
    }
    case NoteKind::HandoffRequest: {
      const NodeId from = node_at(*body, "from");
      const bool lost = body->at("lost").get<bool>();
      std::vector<Ranked> cands;
      for (const auto& r : body->at("candidates")) cands.push_back(Ranked{node_at(r, "sp"), r.at("utility").get<double>()});
      if (sv.activePlan.count(peer) != 0) break;
      if (lost) server_vanish_record(peer, from);
      server_handoff(peer, HandoffInitiator::Client, from, std::move(cands), lost);
      break;
    }
    case NoteKind::HandoffAbort: {
      const std::uint64_t id = body->at("plan").get<std::uint64_t>();
      auto it = sv.plans.find(id);
      if (it != sv.plans.end() && it->second.plan.client == peer) server_abort(id, ErrorCode::Rejected);
      break;
    }
    case NoteKind::SessionRecord: {
      SessionRecord r;
      r.sp = peer;
      r.client = node_at(*body, "client");
      r.promise = promise_from(body->at("promise"));
      r.elapsed = body->at("elapsed").get<double>();
      r.bytesCarried = body->at("bytes").get<double>();
      r.deliveredBandwidth = body->at("delivered").get<double>();
      r.completionRatio = body->at("completion").get<double>();
      r.reason = static_cast<CloseReason>(body->at("reason").get<int>());
      auto it = sv.clients.find(r.client);
      if (it != sv.clients.end()) it->second.serving.erase(peer);
      server_ingest(r);
      break;
    }
    case NoteKind::LegRequest: {
      const NodeId spId = node_at(*body, "sp");
      sv.clients[peer].serving[spId] = Serving{promise_from(body->at("promise")), now, 0};
      server_stage_key(KeyJob{peer, spId, KeyPurpose::Leg, 0});
      break;
    }
    case NoteKind::LegLost: {
      server_vanish_record(peer, node_at(*body, "sp"));
      break;
    }
    case NoteKind::Withdraw: {
      sv.registered.erase(peer);
      for (const auto& c : body->at("clients")) {
        const NodeId cid = *parse_node_id(c.get<std::string>());
        auto it = sv.clients.find(cid);
        if (it == sv.clients.end() || sv.tunnels.find(cid) == nullptr) continue;
        const auto path = sv.tunnels.return_path(cid);
        // Legs on the withdrawing SP are the client's business; only move primaries.
        if (!path || path->value != sps_.at(peer)->st.publicAddr.value) continue;
        server_handoff(cid, HandoffInitiator::Sp, peer, server_candidates(cid, peer), false);
      }
      break;
    }
    default: break;
  }
}

std::vector<Ranked> World::server_candidates(NodeId c, NodeId from) const {
  auto it = server_->clients.find(c);
  if (it == server_->clients.end()) return {};
  const ServerClient& sc = it->second;
  ClientState view;
  view.id = c;
  view.position = sc.position;
  view.range = sc.range;
  view.needs = sc.needs;
  std::vector<Beacon> heard;
  for (const auto& b : sc.lastHeard) {
    if (b.sp != from && server_->registered.count(b.sp) != 0) heard.push_back(b);
  }
  try {
    return client_discover(view, heard, q_.now(), sc_.adhoc.bandwidth, sc_.weights.client,
                           sc_.reportInterval + 3 * sc_.beaconInterval);
  } catch (const Error&) {
    return {};
  }
}

void World::server_handoff(NodeId c, HandoffInitiator who, NodeId from, std::vector<Ranked> cands, bool lost) {
  ServerNode& sv = *server_;
  if (sv.activePlan.count(c) != 0 || sv.tunnels.find(c) == nullptr) return;
  HandoffPlan plan = request_handoff(who, c, from, std::move(cands), sv.book, q_.now(), sc_.drainMode, sc_.drainTimer);
  plan.id = sv.nextPlan++;
  if (!plan.terminal() && (sv.registered.count(plan.to) == 0 || sv.book.active(SessionKind::SpServer, plan.to) == nullptr)) {
    plan.abort(ErrorCode::TargetInvalid);
  }
  if (plan.terminal()) {
    emit("HANDOFF_ABORT", server_id(), {{"plan", plan.id}, {"client", to_string(c)}, {"from", to_string(from)},
                                       {"initiator", to_string(who)}, {"reason", to_string(*plan.abortReason)}});
    server_note(c, NoteKind::HandoffAbort, {{"plan", plan.id}, {"reason", to_string(*plan.abortReason)}});
    return;
  }
  emit("HANDOFF_REQUEST", server_id(), {{"plan", plan.id}, {"client", to_string(c)}, {"from", to_string(from)},
                                       {"to", to_string(plan.to)}, {"initiator", to_string(who)}, {"lost", lost}});
  const std::uint64_t id = plan.id;
  sv.plans[id] = ServerPlan{plan, lost, sv.tunnels.return_path(c)};
  sv.activePlan[c] = id;
  q_.schedule(q_.now() + 5 * kSeconds, [this, id] {
    auto it = server_->plans.find(id);
    if (it == server_->plans.end()) return;
    const HandoffState st = it->second.plan.state;
    if (st != HandoffState::Draining && !it->second.plan.terminal()) server_abort(id, ErrorCode::NoPath);
  });
  server_stage_key(KeyJob{c, plan.to, KeyPurpose::Handoff, id});
}

void World::server_abort(std::uint64_t planId, ErrorCode why) {
  ServerNode& sv = *server_;
  auto it = sv.plans.find(planId);
  if (it == sv.plans.end() || it->second.plan.terminal()) return;
  ServerPlan& p = it->second;
  p.plan.abort(why);
  const NodeId c = p.plan.client;
  emit("HANDOFF_ABORT", server_id(), {{"plan", planId}, {"client", to_string(c)}, {"reason", to_string(why)}});
  if (!p.lost && p.oldPath && !sv.tunnels.return_path(c)) sv.tunnels.set_return_path(c, *p.oldPath);
  sv.staging.erase({c, p.plan.to});
  auto a = sv.activePlan.find(c);
  if (a != sv.activePlan.end() && a->second == planId) sv.activePlan.erase(a);
  server_note(c, NoteKind::HandoffAbort, {{"plan", planId}, {"reason", to_string(why)}});
  server_pump(c);
}

void World::server_stage_key(const KeyJob& job) {
  ServerNode& sv = *server_;
  const auto* xcs = sv.book.active(SessionKind::ClientServer, job.client);
  const auto* xsps = sv.book.active(SessionKind::SpServer, job.sp);
  if (xcs == nullptr || xsps == nullptr) {
    emit("KEY_STAGE_FAIL", server_id(), {{"client", to_string(job.client)}, {"sp", to_string(job.sp)}});
    if (job.purpose == KeyPurpose::Handoff) server_abort(job.plan, ErrorCode::MissingSession);
    return;
  }
  Staging& st = sv.staging[{job.client, job.sp}];
  st = Staging{job, std::nullopt, false, false};
  emit("KEY_STAGE", server_id(), {{"client", to_string(job.client)}, {"sp", to_string(job.sp)},
                                 {"generator", static_cast<int>(sc_.generator)}});
  switch (sc_.generator) {
    case KeyGenerator::Server: {
      const SymmetricKey k = reg_.keygen(sv.rng);
      st.key = k;
      const RelayedKey rk{SessionKind::SpClient, job.sp, job.client, k};
      server_send_ctl(make_key_relay(reg_, server_id(), job.client, xcs->key, rk));
      server_send_ctl(make_key_relay(reg_, server_id(), job.sp, xsps->key, rk));
      break;
    }
    case KeyGenerator::Client:
      server_note(job.client, NoteKind::KeyRequest, {{"sp", to_string(job.sp)}});
      break;
    case KeyGenerator::Sp:
      server_note(job.sp, NoteKind::KeyRequest, {{"client", to_string(job.client)}});
      break;
  }
}

void World::server_key_relay(NodeId peer, const ControlMessage& m) {
  ServerNode& sv = *server_;
  const SessionKind kind = peer.role == Role::Client ? SessionKind::ClientServer : SessionKind::SpServer;
  const auto* xs = sv.book.active(kind, peer);
  if (xs == nullptr) return;
  try {
    const RelayedKey rk = open_key_relay(m, xs->key);
    const NodeId c = rk.b;
    const NodeId spId = rk.a;
    auto it = sv.staging.find({c, spId});
    if (rk.kind != SessionKind::SpClient || it == sv.staging.end() || (peer != c && peer != spId)) {
      throw Error(ErrorCode::ProtocolViolation, "unsolicited key relay");
    }
    it->second.key = rk.key;
    if (peer == c) {
      it->second.clientHas = true;
      server_send_ctl(make_key_relay(reg_, server_id(), spId, sv.book.active(SessionKind::SpServer, spId)->key, rk));
    } else {
      it->second.spHas = true;
      server_send_ctl(make_key_relay(reg_, server_id(), c, sv.book.active(SessionKind::ClientServer, c)->key, rk));
    }
  } catch (const Error& e) {
    emit("SECURITY_ALERT", server_id(), {{"reason", e.what()}, {"from", to_string(peer)}});
  }
}

void World::server_key_ack(NodeId peer, const ControlMessage& m) {
  ServerNode& sv = *server_;
  for (auto it = sv.staging.begin(); it != sv.staging.end(); ++it) {
    Staging& st = it->second;
    if (!st.key || (st.job.client != peer && st.job.sp != peer)) continue;
    if (!verify_key_accept(m, *st.key)) continue;
    if (peer == st.job.client) st.clientHas = true;
    if (peer == st.job.sp) st.spHas = true;
    if (st.clientHas && st.spHas) {
      const KeyJob job = st.job;
      sv.staging.erase(it);
      server_key_done(job);
    }
    return;
  }
}

void World::server_key_done(const KeyJob& job) {
  ServerNode& sv = *server_;
  const NodeId c = job.client;
  switch (job.purpose) {
    case KeyPurpose::Initial: {
      const Tunnel* t = sv.tunnels.find(c);
      if (t == nullptr) return;
      server_note(c, NoteKind::TunnelGrant,
                  {{"vpn", t->vpnAddr.value}, {"key_id", t->tunnelKey.keyId}, {"key", to_hex(t->tunnelKey.material)}});
      sv.clients[c].granted = true;
      server_start_flows(c);
      break;
    }
    case KeyPurpose::Leg:
      server_note(c, NoteKind::LegReady, {{"sp", to_string(job.sp)}});
      break;
    case KeyPurpose::Handoff: {
      auto it = sv.plans.find(job.plan);
      if (it == sv.plans.end() || it->second.plan.terminal()) return;
      ServerPlan& p = it->second;
      p.plan.advance(HandoffState::PreAuthed);
      emit("HANDOFF_PREAUTH", server_id(), {{"plan", p.plan.id}, {"client", to_string(c)}, {"to", to_string(p.plan.to)}});
      if (!p.lost) {
        server_note(p.plan.from, NoteKind::HandoffNotice,
                    {{"plan", p.plan.id}, {"client", to_string(c)}, {"to", to_string(p.plan.to)},
                     {"drain_timer", p.plan.drainTimer}, {"mode", to_string(p.plan.drainMode)}});
      }
      server_note(c, NoteKind::HandoffGo,
                  {{"plan", p.plan.id}, {"from", to_string(p.plan.from)}, {"to", to_string(p.plan.to)}, {"lost", p.lost}});
      p.plan.advance(HandoffState::Executing);
      sv.clients[c].serving[p.plan.to] = Serving{sv.clients[c].needs, q_.now(), 0};
      emit("HANDOFF_EXECUTE", server_id(), {{"plan", p.plan.id}, {"client", to_string(c)}, {"to", to_string(p.plan.to)}});
      sv.tunnels.clear_return_path(c);
      break;
    }
  }
}

void World::server_on_bind(NodeId c, NodeId hop, const BindFrame& b, Address path) {
  ServerNode& sv = *server_;
  ServerClient& sc = sv.clients[c];
  sv.relayOf[c] = hop;
  if (b.epoch > sc.epoch) {
    sc.epoch = b.epoch;
    sv.tunnels.set_return_path(c, path);
    sc.lastPath = path;
    emit("TUNNEL_REBIND", server_id(), {{"client", to_string(c)}, {"via", to_string(hop)}, {"epoch", b.epoch}});
    auto a = sv.activePlan.find(c);
    if (a != sv.activePlan.end()) {
      ServerPlan& p = sv.plans.at(a->second);
      if (p.plan.state == HandoffState::Executing && p.plan.to == hop) {
        p.plan.advance(HandoffState::Draining);
        p.plan.deadline = q_.now() + p.plan.drainTimer;
        emit("HANDOFF_DRAIN", server_id(), {{"plan", p.plan.id}, {"deadline", p.plan.deadline}});
        const std::uint64_t id = p.plan.id;
        q_.schedule(p.plan.deadline, [this, id, c] {
          ServerPlan& sp = server_->plans.at(id);
          if (sp.plan.state != HandoffState::Draining) return;
          sp.plan.advance(HandoffState::Complete);
          emit("HANDOFF_COMPLETE", server_id(), {{"plan", id}, {"client", to_string(c)}});
          auto act = server_->activePlan.find(c);
          if (act != server_->activePlan.end() && act->second == id) server_->activePlan.erase(act);
        });
      }
    }
    for (auto& [fid, f] : sv.tx) {
      if (fid.client == c && f.arq) f.arq->expedite(q_.now());
    }
  }
  server_note(c, NoteKind::BindAck, {{"epoch", b.epoch}});
  server_pump(c);
}

void World::server_ingest(const SessionRecord& r) {
  const RevenueSplit split = ingest_record(server_->st, r, sc_.revenue);
  emit("SESSION_CLOSE", server_id(), {{"sp", to_string(r.sp)},
                                      {"client", to_string(r.client)},
                                      {"reason", to_string(r.reason)},
                                      {"elapsed", r.elapsed},
                                      {"cost", r.promise.cost},
                                      {"bandwidth", r.promise.avgBandwidth},
                                      {"completion", r.completionRatio},
                                      {"score", score_session(r)}});
  emit("GOODNESS", server_id(), {{"sp", to_string(r.sp)}, {"value", server_->st.goodness_of(r.sp).value}});
  emit("REVENUE", server_id(), {{"sp", to_string(r.sp)},
                                {"total", split.total},
                                {"service_provider", split.serviceProvider},
                                {"server", split.server},
                                {"carrier", split.carrier}});
}

void World::server_vanish_record(NodeId c, NodeId spId) {
  auto cit = server_->clients.find(c);
  if (cit == server_->clients.end()) return;
  auto it = cit->second.serving.find(spId);
  if (it == cit->second.serving.end()) return;
  // The SP is gone and cannot report; the Server closes the session itself.
  SpState ghost;
  ghost.id = spId;
  ghost.admitted[c] = AdmittedSession{it->second.promise, it->second.opened, 0};
  cit->second.serving.erase(it);
  server_ingest(close_session(ghost, c, CloseReason::Vanish, q_.now()));
}

}  // namespace awima::sim::detail
