#include "awima/sim/report.hpp"

#include "awima/policy.hpp"

#include <algorithm>

namespace awima::sim {

namespace {

template <typename T>
T get_or(const ojson& j, const char* key, T def) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return def;
  return it->get<T>();
}

HandoffStats* find_plan(std::vector<HandoffStats>& hs, std::uint64_t plan) {
  for (auto& h : hs) {
    if (h.plan == plan) return &h;
  }
  return nullptr;
}

}  // namespace

Report report_from_trace(const std::vector<TraceEvent>& trace) {
  Report r;
  r.partial = true;
  r.events = trace.size();
  for (const auto& e : trace) {
    const ojson& d = e.detail;
    r.end = std::max(r.end, e.t);
    if (e.cat == "FLOW_SEND") {
      auto& f = r.flows[d.at("flow").get<std::string>()];
      f.direction = d.at("dir").get<std::string>();
      f.reliability = d.at("rel").get<std::string>();
      ++f.sent;
      f.bytesSent += d.at("bytes").get<std::uint64_t>();
    } else if (e.cat == "FLOW_DELIVER") {
      auto& f = r.flows[d.at("flow").get<std::string>()];
      ++f.delivered;
      f.bytesDelivered += d.at("bytes").get<std::uint64_t>();
      f.maxReorder = std::max(f.maxReorder, get_or<std::uint64_t>(d, "reorder", 0));
      if (!d.at("ok").get<bool>()) ++f.integrityErrors;
      f.vpnValues.insert(d.at("vpn").get<std::uint32_t>());
    } else if (e.cat == "FLOW_DUP") {
      ++r.flows[d.at("flow").get<std::string>()].duplicates;
    } else if (e.cat == "TX") {
      auto& l = r.legs[e.node];
      ++l.frames[d.at("via").get<std::string>()];
      l.tunnelKeys.insert(d.at("key").get<std::uint64_t>());
    } else if (e.cat == "PLAN") {
      auto& l = r.legs[e.node];
      l.mode = d.at("mode").get<std::string>();
      l.units.clear();
      for (const auto& leg : d.at("legs")) {
        l.units.emplace_back(leg.at("sp").get<std::string>(), leg.at("units").get<std::uint32_t>());
      }
    } else if (e.cat == "HANDOFF_REQUEST") {
      HandoffStats h;
      h.plan = d.at("plan").get<std::uint64_t>();
      h.client = d.at("client").get<std::string>();
      h.from = d.at("from").get<std::string>();
      h.to = d.at("to").get<std::string>();
      h.initiator = d.at("initiator").get<std::string>();
      h.requested = e.t;
      r.handoffs.push_back(h);
    } else if (e.cat == "HANDOFF_DRAIN") {
      if (auto* h = find_plan(r.handoffs, d.at("plan").get<std::uint64_t>())) h->rebound = e.t;
    } else if (e.cat == "HANDOFF_COMPLETE") {
      if (auto* h = find_plan(r.handoffs, d.at("plan").get<std::uint64_t>())) h->completed = e.t;
    } else if (e.cat == "HANDOFF_ABORT") {
      const auto plan = d.at("plan").get<std::uint64_t>();
      HandoffStats* h = find_plan(r.handoffs, plan);
      if (h == nullptr) {
        HandoffStats fresh;
        fresh.plan = plan;
        fresh.client = d.at("client").get<std::string>();
        fresh.from = get_or<std::string>(d, "from", "");
        fresh.to = get_or<std::string>(d, "to", "");
        fresh.initiator = get_or<std::string>(d, "initiator", "");
        fresh.requested = e.t;
        r.handoffs.push_back(fresh);
        h = &r.handoffs.back();
      }
      h->aborted = e.t;
      h->abortReason = d.at("reason").get<std::string>();
    } else if (e.cat == "GOODNESS") {
      r.goodness[d.at("sp").get<std::string>()].emplace_back(e.t, d.at("value").get<double>());
    } else if (e.cat == "SESSION_CLOSE") {
      SessionRecord rec;
      rec.elapsed = d.at("elapsed").get<double>();
      rec.promise.cost = d.at("cost").get<double>();
      r.revenue.recomputed += session_revenue_milli(rec);
    } else if (e.cat == "REVENUE") {
      ++r.revenue.sessions;
      r.revenue.total += d.at("total").get<std::int64_t>();
      r.revenue.serviceProvider += d.at("service_provider").get<std::int64_t>();
      r.revenue.server += d.at("server").get<std::int64_t>();
      r.revenue.carrier += d.at("carrier").get<std::int64_t>();
      r.revenue.bySp[d.at("sp").get<std::string>()] += d.at("service_provider").get<std::int64_t>();
    } else if (e.cat == "ENERGY") {
      r.energy[e.node] = d.at("remaining").get<double>();
    } else if (e.cat == "TDM_SLOT") {
      r.airtime[e.node][d.at("sp").get<std::string>()] +=
          d.at("end").get<SimTime>() - d.at("start").get<SimTime>();
    } else if (e.cat == "AUDIT") {
      r.spOpenAttempts += d.at("sp_open_attempts").get<std::uint64_t>();
      r.spOpenSuccesses += d.at("sp_open_successes").get<std::uint64_t>();
    } else if (e.cat == "SECURITY_ALERT") {
      ++r.securityAlerts;
    } else if (e.cat == "CODE_RECOVER") {
      ++r.codeRecovered;
    } else if (e.cat == "CODE_FAIL") {
      ++r.codeFailed;
    } else if (e.cat == "DRAIN_DROP") {
      ++r.drainDrops;
    } else if (e.cat == "LINK_STATS") {
      r.links = d;
    } else if (e.cat == "INVARIANT_VIOLATION") {
      r.violations.push_back(d.at("message").get<std::string>());
    } else if (e.cat == "RUN_END") {
      r.partial = false;
    }
  }
  for (auto& [name, f] : r.flows) f.lost = f.sent > f.delivered ? f.sent - f.delivered : 0;
  return r;
}

ojson to_json(const Report& r) {
  ojson j;
  j["partial"] = r.partial;
  j["end"] = r.end;
  j["events"] = r.events;
  ojson flows = ojson::object();
  for (const auto& [name, f] : r.flows) {
    ojson o;
    o["direction"] = f.direction;
    o["reliability"] = f.reliability;
    o["sent"] = f.sent;
    o["delivered"] = f.delivered;
    o["lost"] = f.lost;
    o["duplicates"] = f.duplicates;
    o["max_reorder"] = f.maxReorder;
    o["integrity_errors"] = f.integrityErrors;
    o["bytes_sent"] = f.bytesSent;
    o["bytes_delivered"] = f.bytesDelivered;
    o["vpn_addresses"] = f.vpnValues;
    flows[name] = o;
  }
  j["flows"] = flows;
  ojson hs = ojson::array();
  for (const auto& h : r.handoffs) {
    ojson o;
    o["plan"] = h.plan;
    o["client"] = h.client;
    o["from"] = h.from;
    o["to"] = h.to;
    o["initiator"] = h.initiator;
    o["requested"] = h.requested;
    o["rebound"] = h.rebound ? ojson(*h.rebound) : ojson(nullptr);
    o["latency"] = h.rebound ? ojson(*h.rebound - h.requested) : ojson(nullptr);
    o["completed"] = h.completed ? ojson(*h.completed) : ojson(nullptr);
    o["aborted"] = h.aborted ? ojson(*h.aborted) : ojson(nullptr);
    o["abort_reason"] = h.abortReason;
    hs.push_back(o);
  }
  j["handoffs"] = hs;
  ojson g = ojson::object();
  for (const auto& [sp, points] : r.goodness) {
    ojson arr = ojson::array();
    for (const auto& [t, v] : points) arr.push_back({t, v});
    g[sp] = arr;
  }
  j["goodness"] = g;
  ojson rev;
  rev["sessions"] = r.revenue.sessions;
  rev["total"] = r.revenue.total;
  rev["service_provider"] = r.revenue.serviceProvider;
  rev["server"] = r.revenue.server;
  rev["carrier"] = r.revenue.carrier;
  rev["allocated"] = r.revenue.serviceProvider + r.revenue.server + r.revenue.carrier;
  rev["recomputed"] = r.revenue.recomputed;
  rev["by_sp"] = r.revenue.bySp;
  j["revenue"] = rev;
  j["energy"] = r.energy;
  j["airtime"] = r.airtime;
  ojson legs = ojson::object();
  for (const auto& [node, l] : r.legs) {
    ojson o;
    o["mode"] = l.mode;
    o["frames"] = l.frames;
    o["tunnel_keys"] = l.tunnelKeys;
    ojson units = ojson::array();
    for (const auto& [sp, u] : l.units) units.push_back({{"sp", sp}, {"units", u}});
    o["units"] = units;
    legs[node] = o;
  }
  j["legs"] = legs;
  j["sp_open_attempts"] = r.spOpenAttempts;
  j["sp_open_successes"] = r.spOpenSuccesses;
  j["security_alerts"] = r.securityAlerts;
  j["code_recovered"] = r.codeRecovered;
  j["code_failed"] = r.codeFailed;
  j["drain_drops"] = r.drainDrops;
  j["violations"] = r.violations;
  j["links"] = r.links;
  return j;
}

std::vector<std::string> check_preauth_order(const std::vector<TraceEvent>& trace) {
  std::vector<std::string> bad;
  std::set<std::pair<std::string, std::string>> staged;  // (client, sp)
  std::set<std::uint64_t> executed;
  std::set<std::uint64_t> disassociated;
  for (const auto& e : trace) {
    if (e.cat == "KEY_STAGED" && e.detail.contains("sp")) {
      staged.emplace(e.node, e.detail.at("sp").get<std::string>());
    } else if (e.cat == "HANDOFF_EXECUTE") {
      executed.insert(e.detail.at("plan").get<std::uint64_t>());
    } else if (e.cat == "DISASSOCIATE" && e.detail.contains("plan")) {
      const auto plan = e.detail.at("plan").get<std::uint64_t>();
      disassociated.insert(plan);
      const auto to = e.detail.at("to").get<std::string>();
      if (staged.count({e.node, to}) == 0) {
        bad.push_back("plan " + std::to_string(plan) + ": " + e.node + " left " +
                      e.detail.at("sp").get<std::string>() + " before holding the key for " + to);
      }
    } else if (e.cat == "HANDOFF_COMPLETE") {
      const auto plan = e.detail.at("plan").get<std::uint64_t>();
      if (executed.count(plan) == 0) bad.push_back("plan " + std::to_string(plan) + " completed without execute");
    }
  }
  return bad;
}

}  // namespace awima::sim
