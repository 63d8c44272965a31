#include "awima/sim/scenario.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace awima::sim {

using json = nlohmann::json;

const char* to_string(Direction d) noexcept { return d == Direction::Up ? "up" : "down"; }

const char* to_string(TimelineEvent::Kind k) noexcept {
  switch (k) {
    case TimelineEvent::Kind::Move: return "move";
    case TimelineEvent::Kind::SpWithdraw: return "sp_withdraw";
    case TimelineEvent::Kind::SpVanish: return "sp_vanish";
    case TimelineEvent::Kind::Demand: return "demand";
  }
  return "?";
}

namespace {

// Collects every validation problem instead of stopping at the first.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

  void fail(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

  bool object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return false;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
      if (ok.count(k) == 0) fail(join(path, k), "unknown field");
    }
    return true;
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  const json* field(const json& j, const std::string& path, const char* key, bool required) {
    if (!j.is_object()) return nullptr;
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) fail(join(path, key), "missing required field");
      return nullptr;
    }
    return &*it;
  }

  double number(const json& j, const std::string& path, const char* key, double def, double lo, double hi,
                bool required = false) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return def;
    if (!v->is_number()) {
      fail(join(path, key), "expected a number");
      return def;
    }
    const double x = v->get<double>();
    if (!std::isfinite(x) || x < lo || x > hi) {
      std::ostringstream os;
      os << "value " << x << " outside [" << lo << ", " << hi << "]";
      fail(join(path, key), os.str());
      return def;
    }
    return x;
  }

  std::uint64_t integer(const json& j, const std::string& path, const char* key, std::uint64_t def, std::uint64_t lo,
                        std::uint64_t hi, bool required = false) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return def;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      fail(join(path, key), "expected a non-negative integer");
      return def;
    }
    const auto x = v->get<std::uint64_t>();
    if (x < lo || x > hi) {
      fail(join(path, key), "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return def;
    }
    return x;
  }

  SimTime seconds(const json& j, const std::string& path, const char* key, SimTime def, double lo, double hi,
                  bool required = false) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return def;
    const double s = number(j, path, key, to_seconds(def), lo, hi, required);
    return from_seconds(s);
  }

  bool boolean(const json& j, const std::string& path, const char* key, bool def) {
    const json* v = field(j, path, key, false);
    if (v == nullptr) return def;
    if (!v->is_boolean()) {
      fail(join(path, key), "expected true or false");
      return def;
    }
    return v->get<bool>();
  }

  std::string text(const json& j, const std::string& path, const char* key, const std::string& def,
                   bool required = false) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return def;
    if (!v->is_string()) {
      fail(join(path, key), "expected a string");
      return def;
    }
    return v->get<std::string>();
  }

  template <typename E>
  E choice(const json& j, const std::string& path, const char* key, E def,
           std::initializer_list<std::pair<const char*, E>> options, bool required = false) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return def;
    std::string names;
    for (const auto& [name, value] : options) {
      if (v->is_string() && v->get<std::string>() == name) return value;
      names += names.empty() ? name : std::string(", ") + name;
    }
    fail(join(path, key), "expected one of " + names);
    return def;
  }

  Position position(const json& j, const std::string& path, const char* key, bool required) {
    const json* v = field(j, path, key, required);
    if (v == nullptr) return {};
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
      fail(join(path, key), "expected [x, y]");
      return {};
    }
    return {(*v)[0].get<double>(), (*v)[1].get<double>()};
  }

  LinkSpec link(const json& j, const std::string& path, LinkSpec def) {
    if (!object(j, path, {"bandwidth", "latency", "loss", "protocol"})) return def;
    LinkSpec l;
    l.bandwidth = number(j, path, "bandwidth", def.bandwidth, 1e-9, 1e12);
    l.latency = seconds(j, path, "latency", def.latency, 0, 60);
    l.loss = number(j, path, "loss", def.loss, 0, 1);
    return l;
  }

 private:
  std::vector<std::string>& errors_;
};

void read_policy(Reader& r, const json& p, Scenario& s) {
  const std::string path = "policy";
  if (!r.object(p, path, {"alpha", "sp_weights", "client_weights", "sp_threshold", "client_threshold", "revenue"})) return;
  s.alpha = r.number(p, path, "alpha", 0.5, 0, 1);
  if (const json* w = r.field(p, path, "sp_weights", false)) {
    const std::string wp = path + ".sp_weights";
    if (r.object(*w, wp, {"revenue", "energy", "local_load", "goodness"})) {
      s.weights.sp.revenue = r.number(*w, wp, "revenue", 1, 0, 1e9);
      s.weights.sp.energy = r.number(*w, wp, "energy", 1, 0, 1e9);
      s.weights.sp.localLoad = r.number(*w, wp, "local_load", 1, 0, 1e9);
      s.weights.sp.goodness = r.number(*w, wp, "goodness", 1, 0, 1e9);
    }
  }
  if (const json* w = r.field(p, path, "client_weights", false)) {
    const std::string wp = path + ".client_weights";
    if (r.object(*w, wp, {"cost", "duration", "goodness", "bandwidth"})) {
      s.weights.client.cost = r.number(*w, wp, "cost", 1, 0, 1e9);
      s.weights.client.duration = r.number(*w, wp, "duration", 1, 0, 1e9);
      s.weights.client.goodness = r.number(*w, wp, "goodness", 1, 0, 1e9);
      s.weights.client.bandwidth = r.number(*w, wp, "bandwidth", 1, 0, 1e9);
    }
  }
  s.weights.spThreshold = r.number(p, path, "sp_threshold", 0, -1e12, 1e12);
  s.weights.clientThreshold = r.number(p, path, "client_threshold", 0, -1e12, 1e12);
  if (const json* rv = r.field(p, path, "revenue", false)) {
    const std::string rp = path + ".revenue";
    if (r.object(*rv, rp, {"service_provider", "server", "carrier"})) {
      s.revenue.serviceProvider = r.number(*rv, rp, "service_provider", 0.6, 0, 1);
      s.revenue.server = r.number(*rv, rp, "server", 0.25, 0, 1);
      s.revenue.carrier = r.number(*rv, rp, "carrier", 0.15, 0, 1);
      if (!s.revenue.valid()) {
        std::ostringstream os;
        os << "shares sum to " << (s.revenue.serviceProvider + s.revenue.server + s.revenue.carrier) << ", expected 1";
        r.fail(rp, os.str());
      }
    }
  }
}

SpSpec read_sp(Reader& r, const json& j, const std::string& path, SimTime duration) {
  SpSpec sp;
  if (!r.object(j, path,
                {"id", "position", "range", "wwan", "energy", "energy_rate", "energy_reserve", "local_load", "cost",
                 "provisioned_fraction", "lightweight_slots", "available_until", "credentials", "manual"})) {
    return sp;
  }
  sp.id = static_cast<std::uint32_t>(r.integer(j, path, "id", 0, 1, 255, true));
  sp.position = r.position(j, path, "position", true);
  sp.range = r.number(j, path, "range", 0, 1e-9, 1e9, true);
  if (const json* w = r.field(j, path, "wwan", true)) {
    const std::string wp = path + ".wwan";
    sp.wwan.link = r.link(*w, wp, LinkSpec{0, 40 * kMillis, 0});
    sp.wwan.protocol = r.text(*w, wp, "protocol", "LTE");
    if (!(sp.wwan.link.bandwidth > 0)) r.fail(wp + ".bandwidth", "missing required field");
  }
  sp.energy = r.number(j, path, "energy", 1e6, 1e-9, 1e15);
  sp.energyRate = r.number(j, path, "energy_rate", 0.1, 0, 1e9);
  sp.energyReserve = r.number(j, path, "energy_reserve", kDefaultEnergyReserve, 0, 1);
  sp.localLoad = r.number(j, path, "local_load", 0, 0, 1e12);
  sp.cost = r.number(j, path, "cost", 0.01, 0, 1e9);
  sp.provisionedFraction = r.number(j, path, "provisioned_fraction", 1.0, 1e-9, 1);
  sp.lightweightSlots = static_cast<unsigned>(r.integer(j, path, "lightweight_slots", kDefaultLightweightSlots, 0, 1024));
  sp.availableUntil = r.seconds(j, path, "available_until", duration, 0, 1e7);
  sp.credentials = r.boolean(j, path, "credentials", true);
  if (const json* m = r.field(j, path, "manual", false)) {
    const std::string mp = path + ".manual";
    if (!m->is_object()) {
      r.fail(mp, "expected an object of client id to accept/deny");
    } else {
      for (const auto& [k, v] : m->items()) {
        char* end = nullptr;
        const unsigned long id = std::strtoul(k.c_str(), &end, 10);
        if (end == k.c_str() || *end != '\0') {
          r.fail(mp + "." + k, "key must be a client id");
          continue;
        }
        if (v == "accept") {
          sp.manual[static_cast<std::uint32_t>(id)] = ManualDecision::Accept;
        } else if (v == "deny") {
          sp.manual[static_cast<std::uint32_t>(id)] = ManualDecision::Deny;
        } else {
          r.fail(mp + "." + k, "expected accept or deny");
        }
      }
    }
  }
  return sp;
}

FlowSpec read_flow(Reader& r, const json& j, const std::string& path, std::size_t mtu) {
  FlowSpec f;
  if (!r.object(j, path, {"index", "direction", "reliability", "packets", "payload", "interval", "start"})) return f;
  f.index = static_cast<std::uint32_t>(r.integer(j, path, "index", 0, 0, 0xFFFFFFFFu, true));
  f.direction = r.choice(j, path, "direction", Direction::Up, {{"up", Direction::Up}, {"down", Direction::Down}});
  f.reliability = r.choice(j, path, "reliability", Reliability::Reliable,
                           {{"Reliable", Reliability::Reliable}, {"Unreliable", Reliability::Unreliable}}, true);
  f.packets = r.integer(j, path, "packets", 1, 1, 10'000'000, true);
  f.payload = static_cast<std::size_t>(r.integer(j, path, "payload", 1, 1, mtu, true));
  f.interval = r.seconds(j, path, "interval", 0, 1e-6, 3600, true);
  f.start = r.seconds(j, path, "start", 0, 0, 1e7);
  return f;
}

ClientSpec read_client(Reader& r, const json& j, const std::string& path, std::size_t mtu) {
  ClientSpec c;
  if (!r.object(j, path, {"id", "position", "range", "radios", "needs", "parallel", "start", "handoff_quality", "flows"})) {
    return c;
  }
  c.id = static_cast<std::uint32_t>(r.integer(j, path, "id", 0, 1, 0xFFFF, true));
  c.position = r.position(j, path, "position", true);
  c.range = r.number(j, path, "range", 0, 1e-9, 1e9, true);
  c.radios = static_cast<int>(r.integer(j, path, "radios", 1, 1, 8));
  if (const json* n = r.field(j, path, "needs", true)) {
    const std::string np = path + ".needs";
    if (r.object(*n, np, {"bandwidth", "duration", "cost"})) {
      c.needs.avgBandwidth = r.number(*n, np, "bandwidth", 0, 1e-9, 1e12, true);
      c.needs.duration = r.number(*n, np, "duration", 0, 1e-9, 1e9, true);
      c.needs.cost = r.number(*n, np, "cost", 0, 1e-9, 1e9, true);
    }
  }
  c.parallel = r.boolean(j, path, "parallel", false);
  c.start = r.seconds(j, path, "start", 0, 0, 1e7);
  c.handoffQuality = r.number(j, path, "handoff_quality", 0.2, 0, 1);
  if (const json* fl = r.field(j, path, "flows", false)) {
    if (!fl->is_array()) {
      r.fail(path + ".flows", "expected an array");
    } else {
      std::set<std::uint32_t> seen;
      for (std::size_t i = 0; i < fl->size(); ++i) {
        const std::string fp = path + ".flows[" + std::to_string(i) + "]";
        c.flows.push_back(read_flow(r, (*fl)[i], fp, mtu));
        if (!seen.insert(c.flows.back().index).second) r.fail(fp + ".index", "duplicate flow index");
      }
    }
  }
  return c;
}

TimelineEvent read_event(Reader& r, const json& j, const std::string& path) {
  TimelineEvent e;
  if (!r.object(j, path, {"at", "event", "node", "to", "speed", "bandwidth"})) return e;
  e.at = r.seconds(j, path, "at", 0, 0, 1e7, true);
  e.kind = r.choice(j, path, "event", TimelineEvent::Kind::Move,
                    {{"move", TimelineEvent::Kind::Move},
                     {"sp_withdraw", TimelineEvent::Kind::SpWithdraw},
                     {"sp_vanish", TimelineEvent::Kind::SpVanish},
                     {"demand", TimelineEvent::Kind::Demand}},
                    true);
  const std::string node = r.text(j, path, "node", "", true);
  if (auto id = parse_node_id(node)) {
    e.node = *id;
  } else if (!node.empty()) {
    r.fail(path + ".node", "not a node id: " + node);
  }
  switch (e.kind) {
    case TimelineEvent::Kind::Move:
      e.to = r.position(j, path, "to", true);
      e.speed = r.number(j, path, "speed", 0, 1e-9, 1e6, true);
      break;
    case TimelineEvent::Kind::Demand:
      e.bandwidth = r.number(j, path, "bandwidth", 0, 1e-9, 1e12, true);
      break;
    default: break;
  }
  return e;
}

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

LoadResult parse_scenario(std::string_view text) {
  LoadResult out;
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    out.errors.push_back("line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
    return out;
  }

  Reader r(out.errors);
  Scenario s;
  if (!r.object(root, "", {"name", "seed", "duration", "mtu", "beacon_interval", "report_interval", "links", "policy",
                           "coding", "handoff", "tdm", "service_providers", "clients", "timeline"})) {
    return out;
  }
  s.name = r.text(root, "", "name", "", true);
  s.seed = r.integer(root, "", "seed", 1, 0, UINT64_MAX);
  s.duration = r.seconds(root, "", "duration", 0, 1e-3, 1e6, true);
  s.mtu = static_cast<std::size_t>(r.integer(root, "", "mtu", kDefaultMtu, 64, 65000));
  s.beaconInterval = r.seconds(root, "", "beacon_interval", kSeconds, 1e-3, 3600);
  s.reportInterval = r.seconds(root, "", "report_interval", 2 * kSeconds, 1e-3, 3600);

  if (const json* l = r.field(root, "", "links", false)) {
    if (r.object(*l, "links", {"adhoc", "server_internet", "sp_direct"})) {
      if (const json* a = r.field(*l, "links", "adhoc", false)) s.adhoc = r.link(*a, "links.adhoc", s.adhoc);
      if (const json* a = r.field(*l, "links", "server_internet", false)) {
        s.serverInternet = r.link(*a, "links.server_internet", s.serverInternet);
      }
      if (const json* a = r.field(*l, "links", "sp_direct", false)) s.spDirect = r.link(*a, "links.sp_direct", s.spDirect);
    }
  }
  if (const json* p = r.field(root, "", "policy", false)) read_policy(r, *p, s);
  if (const json* c = r.field(root, "", "coding", false)) {
    if (r.object(*c, "coding", {"enabled", "k", "n"})) {
      s.codingEnabled = r.boolean(*c, "coding", "enabled", false);
      s.coding.k = static_cast<unsigned>(r.integer(*c, "coding", "k", 4, 1, 255));
      s.coding.n = static_cast<unsigned>(r.integer(*c, "coding", "n", 6, 1, 255));
      if (s.coding.n < s.coding.k) {
        r.fail("coding.n", "n (" + std::to_string(s.coding.n) + ") must not be below k (" + std::to_string(s.coding.k) + ")");
      }
    }
  }
  if (const json* h = r.field(root, "", "handoff", false)) {
    if (r.object(*h, "handoff", {"drain_mode", "drain_timer", "generator"})) {
      s.drainMode = r.choice(*h, "handoff", "drain_mode", DrainMode::ViaServer,
                             {{"ViaServer", DrainMode::ViaServer}, {"DirectLink", DrainMode::DirectLink}});
      s.drainTimer = r.seconds(*h, "handoff", "drain_timer", kDefaultDrainTimer, 0, 3600);
      s.generator = r.choice(*h, "handoff", "generator", KeyGenerator::Server,
                             {{"Client", KeyGenerator::Client}, {"Server", KeyGenerator::Server}, {"Sp", KeyGenerator::Sp}});
    }
  }
  if (const json* t = r.field(root, "", "tdm", false)) {
    if (r.object(*t, "tdm", {"quantum"})) s.tdmQuantum = r.seconds(*t, "tdm", "quantum", 100 * kMillis, 1e-6, 60);
  }

  std::set<std::uint32_t> spIds;
  if (const json* sps = r.field(root, "", "service_providers", true)) {
    if (!sps->is_array() || sps->empty()) {
      r.fail("service_providers", "expected a non-empty array");
    } else {
      for (std::size_t i = 0; i < sps->size(); ++i) {
        const std::string path = "service_providers[" + std::to_string(i) + "]";
        s.sps.push_back(read_sp(r, (*sps)[i], path, s.duration));
        if (!spIds.insert(s.sps.back().id).second) r.fail(path + ".id", "duplicate SP id");
      }
    }
  }
  std::set<std::uint32_t> clientIds;
  if (const json* cs = r.field(root, "", "clients", true)) {
    if (!cs->is_array() || cs->empty()) {
      r.fail("clients", "expected a non-empty array");
    } else {
      for (std::size_t i = 0; i < cs->size(); ++i) {
        const std::string path = "clients[" + std::to_string(i) + "]";
        s.clients.push_back(read_client(r, (*cs)[i], path, s.mtu));
        if (!clientIds.insert(s.clients.back().id).second) r.fail(path + ".id", "duplicate client id");
      }
    }
  }
  for (const auto& sp : s.sps) {
    for (const auto& [cid, d] : sp.manual) {
      if (clientIds.count(cid) == 0) r.fail("service_providers.manual", "unknown client " + std::to_string(cid));
    }
  }
  if (const json* tl = r.field(root, "", "timeline", false)) {
    if (!tl->is_array()) {
      r.fail("timeline", "expected an array");
    } else {
      for (std::size_t i = 0; i < tl->size(); ++i) {
        const std::string path = "timeline[" + std::to_string(i) + "]";
        auto e = read_event(r, (*tl)[i], path);
        const bool isSp = e.node.role == Role::ServiceProvider && spIds.count(e.node.index) != 0;
        const bool isClient = e.node.role == Role::Client && clientIds.count(e.node.index) != 0;
        switch (e.kind) {
          case TimelineEvent::Kind::Move:
            if (!isSp && !isClient) r.fail(path + ".node", "move needs a known client or SP");
            break;
          case TimelineEvent::Kind::SpWithdraw:
          case TimelineEvent::Kind::SpVanish:
            if (!isSp) r.fail(path + ".node", "needs a known SP");
            break;
          case TimelineEvent::Kind::Demand:
            if (!isClient) r.fail(path + ".node", "needs a known client");
            break;
        }
        if (e.at > s.duration) r.fail(path + ".at", "after the end of the run");
        s.timeline.push_back(e);
      }
      std::stable_sort(s.timeline.begin(), s.timeline.end(),
                       [](const TimelineEvent& a, const TimelineEvent& b) { return a.at < b.at; });
    }
  }
  if (out.errors.empty()) out.scenario = std::move(s);
  return out;
}

LoadResult load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    LoadResult out;
    out.ioError = true;
    out.errors.push_back(path.string() + ": cannot open");
    return out;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace awima::sim
