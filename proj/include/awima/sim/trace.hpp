#pragma once

// Trace: one JSON object per line, {"t": µs, "cat": ..., "node": ..., "detail": {...}}.

#include "awima/core.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace awima::sim {

using ojson = nlohmann::ordered_json;

struct TraceEvent {
  SimTime t = 0;
  std::string cat;
  std::string node;
  ojson detail = ojson::object();

  bool operator==(const TraceEvent&) const = default;
};

std::string to_line(const TraceEvent& e);
/// DecodeError for anything that is not a well-formed event object.
TraceEvent from_line(std::string_view line);

struct ParsedTrace {
  std::vector<TraceEvent> events;
  bool truncated = false;  // a line failed to parse; events stop before it
  std::string error;
};

ParsedTrace parse_trace(std::istream& in);

/// Append-only event log, optionally mirrored line by line to a stream.
class TraceSink {
 public:
  explicit TraceSink(std::ostream* mirror = nullptr) : mirror_(mirror) {}

  void emit(SimTime t, std::string cat, std::string node, ojson detail = ojson::object());
  void emit(SimTime t, std::string cat, NodeId node, ojson detail = ojson::object()) {
    emit(t, std::move(cat), to_string(node), std::move(detail));
  }
  const std::vector<TraceEvent>& events() const noexcept { return events_; }
  std::vector<TraceEvent> take() && { return std::move(events_); }
  void flush();

 private:
  std::ostream* mirror_;
  std::vector<TraceEvent> events_;
};

}  // namespace awima::sim
