#include "awima/sim/trace.hpp"

#include <istream>
#include <ostream>

namespace awima::sim {

std::string to_line(const TraceEvent& e) {
  ojson j;
  j["t"] = e.t;
  j["cat"] = e.cat;
  j["node"] = e.node;
  j["detail"] = e.detail;
  return j.dump();
}

TraceEvent from_line(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line.begin(), line.end());
  } catch (const ojson::parse_error& err) {
    throw Error(ErrorCode::DecodeError, std::string("trace line: ") + err.what());
  }
  if (!j.is_object() || j.size() != 4 || !j.contains("t") || !j["t"].is_number_integer() || !j.contains("cat") ||
      !j["cat"].is_string() || !j.contains("node") || !j["node"].is_string() || !j.contains("detail") ||
      !j["detail"].is_object()) {
    throw Error(ErrorCode::DecodeError, "trace line is not an event");
  }
  TraceEvent e;
  e.t = j["t"].get<SimTime>();
  e.cat = j["cat"].get<std::string>();
  e.node = j["node"].get<std::string>();
  e.detail = std::move(j["detail"]);
  return e;
}

ParsedTrace parse_trace(std::istream& in) {
  ParsedTrace out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.events.push_back(from_line(line));
    } catch (const Error& e) {
      out.truncated = true;
      out.error = "line " + std::to_string(n) + ": " + e.what();
      break;
    }
  }
  return out;
}

void TraceSink::emit(SimTime t, std::string cat, std::string node, ojson detail) {
  events_.push_back(TraceEvent{t, std::move(cat), std::move(node), std::move(detail)});
  if (mirror_ != nullptr) *mirror_ << to_line(events_.back()) << '\n';
}

void TraceSink::flush() {
  if (mirror_ != nullptr) mirror_->flush();
}

}  // namespace awima::sim
