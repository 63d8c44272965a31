#include "awima/handoff.hpp"

#include <algorithm>

namespace awima {

const char* to_string(HandoffInitiator i) noexcept {
  switch (i) {
    case HandoffInitiator::Client: return "Client";
    case HandoffInitiator::Server: return "Server";
    case HandoffInitiator::Sp: return "Sp";
  }
  return "?";
}

const char* to_string(DrainMode m) noexcept { return m == DrainMode::ViaServer ? "ViaServer" : "DirectLink"; }

const char* to_string(HandoffState s) noexcept {
  switch (s) {
    case HandoffState::Requested: return "Requested";
    case HandoffState::PreAuthed: return "PreAuthed";
    case HandoffState::Executing: return "Executing";
    case HandoffState::Draining: return "Draining";
    case HandoffState::Complete: return "Complete";
    case HandoffState::Aborted: return "Aborted";
  }
  return "?";
}

void HandoffPlan::advance(HandoffState next) {
  if (terminal()) throw Error(ErrorCode::ProtocolViolation, "handoff plan already finished");
  if (next == HandoffState::Aborted) {
    state = next;
    return;
  }
  if (static_cast<int>(next) != static_cast<int>(state) + 1) {
    throw Error(ErrorCode::ProtocolViolation,
                std::string("handoff cannot go from ") + to_string(state) + " to " + to_string(next));
  }
  state = next;
}

void HandoffPlan::abort(ErrorCode why) {
  advance(HandoffState::Aborted);
  abortReason = why;
}

HandoffPlan request_handoff(HandoffInitiator initiator, NodeId client, NodeId from, std::vector<Ranked> candidates,
                            const SessionBook& serverBook, SimTime now, DrainMode mode, SimTime drainTimer) {
  HandoffPlan plan;
  plan.client = client;
  plan.from = from;
  plan.to = from;
  plan.initiator = initiator;
  plan.drainMode = mode;
  plan.drainTimer = drainTimer;
  plan.requestedAt = now;
  if (serverBook.active(SessionKind::ClientServer, client) == nullptr) {
    plan.abort(ErrorCode::MissingSession);
    return plan;
  }
  std::erase_if(candidates, [&](const Ranked& r) { return r.sp == from; });
  if (candidates.empty()) {
    plan.abort(ErrorCode::NoProvider);
    return plan;
  }
  const auto best = std::min_element(candidates.begin(), candidates.end(), [](const Ranked& a, const Ranked& b) {
    if (a.utility != b.utility) return a.utility > b.utility;
    return a.sp < b.sp;
  });
  plan.to = best->sp;
  return plan;
}

PreauthResult preauthenticate(HandoffPlan& plan, const SpState& target, Books books, KeyGenerator generator,
                              KeyRegistry& reg, SeededRng& rng) {
  if (plan.state != HandoffState::Requested) throw Error(ErrorCode::ProtocolViolation, "pre-auth needs a Requested plan");
  PreauthResult out;
  if (!target.registered || books.target.active(SessionKind::SpServer, server_id()) == nullptr) {
    plan.abort(ErrorCode::TargetInvalid);
    return out;
  }
  try {
    auto est = establish_sp_client(books.client, books.target, books.server, generator, reg, rng);
    out.session = est.session;
    out.messages = std::move(est.messages);
  } catch (const Error& e) {
    plan.abort(e.code());
    return out;
  }
  plan.advance(HandoffState::PreAuthed);
  return out;
}

ExecuteResult execute_handoff(HandoffPlan& plan, ClientState& c, SpState& target, bool targetReachable, bool fromAlive,
                              const Books& books, const UtilityWeights& w, KeyRegistry& reg, SeededRng& rng,
                              SimTime now) {
  if (plan.state != HandoffState::PreAuthed) throw Error(ErrorCode::ProtocolViolation, "execute needs a PreAuthed plan");
  plan.advance(HandoffState::Executing);
  ExecuteResult out;
  auto fail = [&](ErrorCode why) {
    plan.abort(why);
    if (fromAlive && c.association == plan.from) {
      out.fellBack = true;
    } else if (c.tunnel) {
      c.tunnel->state = TunnelState::Rebinding;
    }
    return out;
  };
  if (!targetReachable) return fail(ErrorCode::NoPath);
  const ClientState before = c;
  const bool targetHadSession = target.admitted.count(c.id) != 0;
  try {
    out.association = associate(c, target, w, now);
    out.link = establish_link_key(books.client, books.target, reg, rng).link;
  } catch (const Error& e) {
    // Undo a half-made association so the client is never split.
    if (out.association && !targetHadSession) close_session(target, c.id, CloseReason::Handoff, now);
    c = before;
    out.association.reset();
    return fail(e.code());
  }
  if (c.tunnel) c.tunnel->state = TunnelState::Up;
  plan.deadline = now + plan.drainTimer;
  plan.advance(HandoffState::Draining);
  return out;
}

DrainStep drain_residual(HandoffPlan& plan, ResidualQueue& rq, SimTime now, bool spsInRange) {
  if (plan.state != HandoffState::Draining) throw Error(ErrorCode::ProtocolViolation, "drain needs a Draining plan");
  DrainStep step;
  DrainRoute route = DrainRoute::ViaServer;
  if (now >= rq.deadline) {
    route = DrainRoute::Drop;
  } else if (plan.drainMode == DrainMode::DirectLink && spsInRange) {
    route = DrainRoute::DirectLink;
  }
  // Uplink residuals are already headed for the Server.
  const DrainRoute upRoute = route == DrainRoute::Drop ? DrainRoute::Drop : DrainRoute::ViaServer;
  for (auto& p : rq.uplink) step.uplink.emplace_back(std::move(p), upRoute);
  for (auto& p : rq.downlink) step.downlink.emplace_back(std::move(p), route);
  rq.uplink.clear();
  rq.downlink.clear();
  step.finished = now >= rq.deadline;
  if (step.finished) plan.advance(HandoffState::Complete);
  return step;
}

std::vector<NodeId> sp_withdraw(SpState& sp, std::vector<ClientState*> clients) {
  std::vector<NodeId> out;
  for (const auto& [id, s] : sp.admitted) out.push_back(id);
  for (auto* c : clients) {
    if (c != nullptr && c->association == sp.id && c->tunnel) c->tunnel->state = TunnelState::Rebinding;
  }
  sp.registered = false;
  return out;
}

}  // namespace awima
