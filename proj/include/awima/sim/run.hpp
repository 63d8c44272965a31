#pragma once

// Running one scenario: the event-driven world of Clients, SPs, the Server
// and one internet host.

#include "awima/sim/report.hpp"
#include "awima/sim/scenario.hpp"
#include "awima/sim/trace.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace awima::sim {

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the scenario seed
  bool check = false;       // assert invariants while running
  bool dumpBytes = false;   // canonical inner-packet bytes in FLOW_SEND events
  std::ostream* traceOut = nullptr;  // mirror of the trace, line by line
  bool injectDuplicate = false;      // fault hook: the first uplink packet is delivered twice
};

struct RunResult {
  std::vector<TraceEvent> trace;
  Report report;
  bool violation = false;
  std::string violationMessage;
};

RunResult run_scenario(const Scenario& s, const RunOptions& options = {});

}  // namespace awima::sim
