#pragma once

// Run report, computed from the trace alone.

#include "awima/sim/trace.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace awima::sim {

struct FlowStats {
  std::string direction;
  std::string reliability;
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;  // sent - delivered at the end of the trace
  std::uint64_t duplicates = 0;
  std::uint64_t maxReorder = 0;
  std::uint64_t integrityErrors = 0;
  std::uint64_t bytesSent = 0;
  std::uint64_t bytesDelivered = 0;
  std::set<std::uint32_t> vpnValues;  // client VPN address seen in delivered packets
};

struct HandoffStats {
  std::uint64_t plan = 0;
  std::string client;
  std::string from;
  std::string to;
  std::string initiator;
  SimTime requested = 0;
  std::optional<SimTime> rebound;  // client reached the Server over the target
  std::optional<SimTime> completed;
  std::optional<SimTime> aborted;
  std::string abortReason;
};

struct LegStats {
  std::map<std::string, std::uint64_t> frames;  // by SP
  std::set<std::uint64_t> tunnelKeys;           // envelope keyRefs used on any leg
  std::vector<std::pair<std::string, std::uint32_t>> units;  // latest plan
  std::string mode;
};

struct RevenueLedger {
  std::uint64_t sessions = 0;
  std::int64_t total = 0;         // sum of per-session revenue
  std::int64_t serviceProvider = 0;
  std::int64_t server = 0;
  std::int64_t carrier = 0;
  std::int64_t recomputed = 0;    // revenue recomputed from the closed-session fields
  std::map<std::string, std::int64_t> bySp;
};

struct Report {
  bool partial = false;  // no RUN_END: the run aborted or the trace is cut short
  SimTime end = 0;
  std::uint64_t events = 0;
  std::map<std::string, FlowStats> flows;
  std::vector<HandoffStats> handoffs;
  std::map<std::string, std::vector<std::pair<SimTime, double>>> goodness;
  RevenueLedger revenue;
  std::map<std::string, double> energy;
  std::map<std::string, std::map<std::string, SimTime>> airtime;  // client -> SP -> µs
  std::map<std::string, LegStats> legs;
  std::uint64_t spOpenAttempts = 0;
  std::uint64_t spOpenSuccesses = 0;
  std::uint64_t securityAlerts = 0;
  std::uint64_t codeRecovered = 0;
  std::uint64_t codeFailed = 0;
  std::uint64_t drainDrops = 0;
  std::vector<std::string> violations;
  ojson links = ojson::object();
};

Report report_from_trace(const std::vector<TraceEvent>& trace);
ojson to_json(const Report& r);

/// Every executed handoff must show the target key staged at the client
/// before the client disassociated from its old SP. Returns the offenders.
std::vector<std::string> check_preauth_order(const std::vector<TraceEvent>& trace);

}  // namespace awima::sim
