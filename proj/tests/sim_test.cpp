#include "awima/sim/batch.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace awima;
using namespace awima::sim;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(AWIMA_SOURCE_DIR) / "scenarios";

Scenario bundled(const std::string& name) {
  const LoadResult r = load_scenario(kScenarios / (name + ".json"));
  if (!r.ok()) throw std::runtime_error(name + ": " + (r.errors.empty() ? "?" : r.errors[0]));
  return *r.scenario;
}

std::string text_of(const std::vector<TraceEvent>& t) {
  std::string out;
  for (const auto& e : t) out += to_line(e) + "\n";
  return out;
}

std::size_t count(const std::vector<TraceEvent>& t, const std::string& cat) {
  std::size_t n = 0;
  for (const auto& e : t) n += e.cat == cat;
  return n;
}

RunOptions checked() {
  RunOptions o;
  o.check = true;
  return o;
}

}  // namespace

TEST(Sim, BundledScenariosAllValidate) {
  const auto files = list_scenarios(kScenarios);
  EXPECT_EQ(files.size(), 7u);
  for (const auto& f : files) EXPECT_TRUE(load_scenario(f).ok()) << f;
}

TEST(Sim, SameSeedSameTrace) {
  const Scenario s = bundled("graceful_handoff");
  EXPECT_EQ(text_of(run_scenario(s).trace), text_of(run_scenario(s).trace));
}

TEST(Sim, DifferentSeedDifferentTrace) {
  const Scenario s = bundled("graceful_handoff");
  RunOptions a;
  a.seed = 1;
  RunOptions b;
  b.seed = 2;
  const auto ta = run_scenario(s, a).trace;
  const auto tb = run_scenario(s, b).trace;
  EXPECT_NE(text_of(ta), text_of(tb));
  EXPECT_NE(count(ta, "LINK_DROP"), 0u);
}

TEST(Sim, ReportEqualsReportOfParsedTrace) {
  const RunResult r = run_scenario(bundled("multi_wwan_handoff"));
  std::stringstream ss(text_of(r.trace));
  const ParsedTrace p = parse_trace(ss);
  ASSERT_FALSE(p.truncated) << p.error;
  EXPECT_EQ(p.events, r.trace);
  EXPECT_EQ(to_json(report_from_trace(p.events)), to_json(r.report));
  EXPECT_FALSE(r.report.partial);
}

TEST(Sim, TraceMirrorMatchesReturnedTrace) {
  std::stringstream mirror;
  RunOptions o;
  o.traceOut = &mirror;
  const RunResult r = run_scenario(bundled("basic_access"), o);
  EXPECT_EQ(mirror.str(), text_of(r.trace));
}

TEST(Sim, TruncatedTraceGivesPartialReport) {
  const RunResult r = run_scenario(bundled("basic_access"));
  const std::vector<TraceEvent> half(r.trace.begin(), r.trace.begin() + static_cast<long>(r.trace.size() / 2));
  const Report p = report_from_trace(half);
  EXPECT_TRUE(p.partial);
  EXPECT_LE(p.flows.at("C1/0").delivered, r.report.flows.at("C1/0").delivered);
  EXPECT_EQ(p.events, half.size());
}

TEST(Sim, EveryMessageAccountedFor) {
  const RunResult r = run_scenario(bundled("abrupt_vanish_udp"), checked());
  ASSERT_FALSE(r.violation) << r.violationMessage;
  ASSERT_FALSE(r.report.links.empty());
  for (const auto& [kind, c] : r.report.links.items()) {
    const auto sent = c.at("sent").get<std::uint64_t>();
    const auto rest = c.at("delivered").get<std::uint64_t>() + c.at("lost").get<std::uint64_t>() +
                      c.at("range_drop").get<std::uint64_t>() + c.at("node_down").get<std::uint64_t>() +
                      c.at("in_flight").get<std::uint64_t>();
    EXPECT_EQ(sent, rest) << kind;
  }
  EXPECT_GT(count(r.trace, "RANGE_DROP"), 0u);
}

TEST(Sim, RevenueLedgerMatchesSessionRevenues) {
  for (const char* name : {"graceful_handoff", "abrupt_vanish_udp", "parallel_two_sp"}) {
    const RunResult r = run_scenario(bundled(name));
    std::int64_t sum = 0;
    std::uint64_t sessions = 0;
    for (const auto& e : r.trace) {
      if (e.cat != "REVENUE") continue;
      sum += e.detail.at("total").get<std::int64_t>();
      ++sessions;
    }
    EXPECT_EQ(r.report.revenue.total, sum) << name;
    EXPECT_EQ(r.report.revenue.sessions, sessions) << name;
    EXPECT_EQ(r.report.revenue.serviceProvider + r.report.revenue.server + r.report.revenue.carrier, sum) << name;
    EXPECT_EQ(count(r.trace, "SESSION_CLOSE"), sessions) << name;
  }
}

TEST(Sim, GracefulHandoffLosesNothing) {
  const RunResult r = run_scenario(bundled("graceful_handoff"), checked());
  ASSERT_FALSE(r.violation) << r.violationMessage;
  ASSERT_EQ(r.report.handoffs.size(), 1u);
  EXPECT_TRUE(r.report.handoffs[0].completed.has_value());
  for (const auto& [name, f] : r.report.flows) {
    EXPECT_EQ(f.lost, 0u) << name;
    EXPECT_EQ(f.duplicates, 0u) << name;
    EXPECT_EQ(f.integrityErrors, 0u) << name;
    EXPECT_EQ(f.vpnValues.size(), 1u) << name;
  }
  EXPECT_EQ(r.report.flows.at("C1/0").delivered, 1000u);
}

TEST(Sim, PreauthOrderHoldsInEveryScenario) {
  for (const auto& f : list_scenarios(kScenarios)) {
    const RunResult r = run_scenario(*load_scenario(f).scenario);
    EXPECT_TRUE(check_preauth_order(r.trace).empty()) << f;
  }
}

TEST(Sim, CodingRepairsTheVanishedLeg) {
  const RunResult plain = run_scenario(bundled("abrupt_vanish_udp"));
  const RunResult coded = run_scenario(bundled("abrupt_vanish_udp_coded"));
  EXPECT_GT(plain.report.flows.at("C1/0").lost, 0u);
  EXPECT_EQ(coded.report.flows.at("C1/0").lost, 0u);
  EXPECT_GT(coded.report.codeRecovered, 0u);
  EXPECT_EQ(coded.report.codeFailed, 0u);
}

TEST(Sim, CheckAbortsOnViolationWithPrefixFlushed) {
  std::stringstream mirror;
  RunOptions o = checked();
  o.injectDuplicate = true;
  o.traceOut = &mirror;
  const RunResult r = run_scenario(bundled("basic_access"), o);
  ASSERT_TRUE(r.violation);
  EXPECT_NE(r.violationMessage.find("duplicate"), std::string::npos);
  EXPECT_EQ(r.trace.back().cat, "INVARIANT_VIOLATION");
  EXPECT_EQ(count(r.trace, "RUN_END"), 0u);
  EXPECT_TRUE(r.report.partial);
  EXPECT_EQ(r.report.violations.size(), 1u);
  EXPECT_EQ(mirror.str(), text_of(r.trace));
}

TEST(Sim, WithoutCheckTheFaultIsOnlyRecorded) {
  RunOptions o;
  o.injectDuplicate = true;
  const RunResult r = run_scenario(bundled("basic_access"), o);
  EXPECT_FALSE(r.violation);
  EXPECT_EQ(r.report.flows.at("C1/0").duplicates, 1u);
  EXPECT_FALSE(r.report.partial);
}

TEST(Sim, DumpBytesAddsCanonicalInnerPackets) {
  RunOptions o;
  o.dumpBytes = true;
  const RunResult r = run_scenario(bundled("basic_access"), o);
  std::size_t dumped = 0;
  for (const auto& e : r.trace) {
    if (e.cat != "FLOW_SEND" || !e.detail.contains("inner")) continue;
    ++dumped;
    const std::string hex = e.detail.at("inner").get<std::string>();
    Bytes raw;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2) raw.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    const InnerPacket p = decode_inner(raw);
    EXPECT_EQ(p.seq, e.detail.at("seq").get<std::uint64_t>());
  }
  EXPECT_EQ(dumped, 200u);
}

TEST(Sim, NoSpOpensTunnelTraffic) {
  for (const auto& f : list_scenarios(kScenarios)) {
    const RunResult r = run_scenario(*load_scenario(f).scenario, checked());
    EXPECT_FALSE(r.violation) << f << ": " << r.violationMessage;
    EXPECT_EQ(r.report.spOpenSuccesses, 0u) << f;
    EXPECT_GT(r.report.spOpenAttempts, 0u) << f;
  }
}

TEST(Batch, PoolSizeDoesNotChangeResults) {
  const auto files = list_scenarios(kScenarios);
  const auto one = run_batch(files, 1);
  const auto many = run_batch(files, 3);
  ASSERT_EQ(one.size(), many.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_TRUE(one[i].ok()) << one[i].file;
    EXPECT_EQ(one[i].name, many[i].name);
    EXPECT_EQ(one[i].result.trace, many[i].result.trace) << one[i].file;
  }
}

TEST(Batch, MissingDirectoryIsIoError) {
  try {
    list_scenarios("/nonexistent/awima");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Batch, InvalidFileReportedNotThrown) {
  const auto dir = std::filesystem::temp_directory_path() / "awima_batch_invalid";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "broken.json") << R"({"name": "x"})";
  }
  const auto items = run_batch(list_scenarios(dir), 2);
  ASSERT_EQ(items.size(), 1u);
  EXPECT_FALSE(items[0].ok());
  EXPECT_FALSE(items[0].errors.empty());
  std::filesystem::remove_all(dir);
}
