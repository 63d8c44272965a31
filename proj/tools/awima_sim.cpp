// awima_sim: run, validate, replay and batch-run scenarios.
//
// Exit codes: 0 ok, 1 validation error, 2 invariant violation, 3 I/O error.

#include "awima/sim/batch.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

using namespace awima;
using namespace awima::sim;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kViolation = 2;
constexpr int kIo = 3;

int print_load_errors(const LoadResult& r, const std::string& file) {
  for (const auto& e : r.errors) std::cerr << file << ": " << e << "\n";
  return r.ioError ? kIo : kInvalid;
}

bool write_report(const Report& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) return false;
  out << to_json(r).dump(2) << "\n";
  return static_cast<bool>(out);
}

void summarize(const Report& r, std::ostream& os) {
  for (const auto& [name, f] : r.flows) {
    os << "  flow " << name << " " << f.direction << " " << f.reliability << ": sent " << f.sent << ", delivered "
       << f.delivered << ", lost " << f.lost << ", dup " << f.duplicates << "\n";
  }
  for (const auto& h : r.handoffs) {
    os << "  handoff " << h.plan << " " << h.client << " " << h.from << "->" << h.to
       << (h.completed ? " complete" : h.aborted ? " aborted (" + h.abortReason + ")" : " open") << "\n";
  }
  os << "  revenue " << r.revenue.total << " milli-units over " << r.revenue.sessions << " sessions\n";
}

int cmd_run(const std::string& scenario, std::optional<std::uint64_t> seed, const std::string& tracePath,
            const std::string& reportPath, bool check, bool dumpBytes) {
  const LoadResult loaded = load_scenario(scenario);
  if (!loaded.ok()) return print_load_errors(loaded, scenario);
  std::ofstream trace(tracePath);
  if (!trace) {
    std::cerr << "cannot write " << tracePath << "\n";
    return kIo;
  }
  RunOptions o;
  o.seed = seed;
  o.check = check;
  o.dumpBytes = dumpBytes;
  o.traceOut = &trace;
  RunResult r;
  try {
    r = run_scenario(*loaded.scenario, o);
  } catch (const Error& e) {
    trace.flush();
    std::cerr << "run failed: " << e.what() << "\n";
    return e.code() == ErrorCode::IoError ? kIo : kInvalid;
  }
  trace.flush();
  if (!trace) {
    std::cerr << "cannot write " << tracePath << "\n";
    return kIo;
  }
  if (!write_report(r.report, reportPath)) {
    std::cerr << "cannot write " << reportPath << "\n";
    return kIo;
  }
  std::cout << loaded.scenario->name << ": " << r.trace.size() << " events\n";
  summarize(r.report, std::cout);
  if (r.violation) {
    std::cerr << "invariant violation: " << r.violationMessage << "\n";
    return kViolation;
  }
  return kOk;
}

int cmd_validate(const std::string& scenario) {
  const LoadResult loaded = load_scenario(scenario);
  if (!loaded.ok()) return print_load_errors(loaded, scenario);
  std::cout << scenario << ": ok (" << loaded.scenario->name << ")\n";
  return kOk;
}

int cmd_replay(const std::string& tracePath, const std::string& reportPath) {
  std::ifstream in(tracePath);
  if (!in) {
    std::cerr << "cannot read " << tracePath << "\n";
    return kIo;
  }
  const ParsedTrace parsed = parse_trace(in);
  if (parsed.truncated) std::cerr << "trace truncated: " << parsed.error << "\n";
  Report report;
  std::vector<std::string> offenders;
  try {
    report = report_from_trace(parsed.events);
    offenders = check_preauth_order(parsed.events);
  } catch (const std::exception& e) {
    std::cerr << tracePath << ": malformed event: " << e.what() << "\n";
    return kInvalid;
  }
  if (!write_report(report, reportPath)) {
    std::cerr << "cannot write " << reportPath << "\n";
    return kIo;
  }
  std::cout << tracePath << ": " << parsed.events.size() << " events" << (report.partial ? " (partial)" : "") << "\n";
  summarize(report, std::cout);
  for (const auto& o : offenders) std::cerr << "pre-auth order: " << o << "\n";
  for (const auto& v : report.violations) std::cerr << "recorded violation: " << v << "\n";
  return offenders.empty() && report.violations.empty() ? kOk : kViolation;
}

int cmd_batch(const std::string& dir, unsigned jobs, bool check) {
  std::vector<std::filesystem::path> files;
  try {
    files = list_scenarios(dir);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kIo;
  }
  RunOptions o;
  o.check = check;
  const auto items = run_batch(files, jobs, o, false);
  int code = kOk;
  for (const auto& it : items) {
    std::cout << std::left << std::setw(28) << it.name;
    if (it.ioError) {
      std::cout << "IO_ERROR\n";
      code = std::max(code, kIo);
    } else if (!it.errors.empty()) {
      std::cout << "INVALID " << it.errors.front() << "\n";
      code = std::max(code, kInvalid);
    } else if (it.violation) {
      std::cout << "VIOLATION " << it.message << "\n";
      code = std::max(code, kViolation);
    } else {
      std::uint64_t sent = 0;
      std::uint64_t delivered = 0;
      for (const auto& [n, f] : it.result.report.flows) {
        sent += f.sent;
        delivered += f.delivered;
      }
      std::cout << "ok  events " << it.result.report.events << ", delivered " << delivered << "/" << sent << ", "
                << std::fixed << std::setprecision(2) << it.seconds << " s\n";
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for ad hoc WWAN access"};
  app.require_subcommand(1);

  std::string scenario;
  std::string tracePath;
  std::string reportPath;
  std::uint64_t seed = 0;
  bool check = false;
  bool dumpBytes = false;
  auto* run = app.add_subcommand("run", "Run one scenario");
  run->add_option("--scenario", scenario, "Scenario JSON file")->required();
  auto* seedOpt = run->add_option("--seed", seed, "Seed (default: the scenario's)");
  run->add_option("--trace", tracePath, "Trace output, one JSON object per line")->required();
  run->add_option("--report", reportPath, "Report output (JSON)")->required();
  run->add_flag("--check", check, "Assert invariants after every event");
  run->add_flag("--dump-bytes", dumpBytes, "Include canonical inner-packet bytes in the trace");

  auto* validate = app.add_subcommand("validate", "Check a scenario file");
  validate->add_option("--scenario", scenario, "Scenario JSON file")->required();

  auto* replay = app.add_subcommand("replay", "Rebuild the report from a trace");
  replay->add_option("--trace", tracePath, "Trace file")->required();
  replay->add_option("--report", reportPath, "Report output (JSON)")->required();

  std::string dir;
  unsigned jobs = 1;
  bool batchCheck = false;
  auto* batch = app.add_subcommand("batch", "Run every scenario in a directory");
  batch->add_option("--dir", dir, "Directory of scenario files")->required();
  batch->add_option("--jobs", jobs, "Parallel runs")->check(CLI::Range(1u, 256u));
  batch->add_flag("--check", batchCheck, "Assert invariants after every event");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  if (*run) {
    std::optional<std::uint64_t> s;
    if (*seedOpt) s = seed;
    return cmd_run(scenario, s, tracePath, reportPath, check, dumpBytes);
  }
  if (*validate) return cmd_validate(scenario);
  if (*replay) return cmd_replay(tracePath, reportPath);
  return cmd_batch(dir, jobs, batchCheck);
}
