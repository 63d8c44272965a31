#pragma once

// Scenario files (JSON). Times are seconds in the file and microseconds here.

#include "awima/coding.hpp"
#include "awima/handoff.hpp"
#include "awima/nodes.hpp"
#include "awima/policy.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace awima::sim {

struct LinkSpec {
  double bandwidth = 0;  // bytes/sec
  SimTime latency = 0;
  double loss = 0;
};

struct WwanSpec {
  std::string protocol = "LTE";
  LinkSpec link;
};

enum class Direction : std::uint8_t { Up = 0, Down = 1 };
const char* to_string(Direction d) noexcept;

struct FlowSpec {
  std::uint32_t index = 0;
  Direction direction = Direction::Up;
  Reliability reliability = Reliability::Reliable;
  std::uint64_t packets = 0;
  std::size_t payload = 0;  // bytes per packet
  SimTime interval = 0;
  SimTime start = 0;
};

struct SpSpec {
  std::uint32_t id = 0;
  Position position;
  double range = 0;
  WwanSpec wwan;
  double energy = 0;
  double energyRate = 0;
  double energyReserve = kDefaultEnergyReserve;
  double localLoad = 0;
  double cost = 0;
  double provisionedFraction = 1.0;
  unsigned lightweightSlots = kDefaultLightweightSlots;
  SimTime availableUntil = 0;  // defaults to the scenario duration
  bool credentials = true;     // false: not in the Server registry
  std::map<std::uint32_t, ManualDecision> manual;
};

struct ClientSpec {
  std::uint32_t id = 0;
  Position position;
  double range = 0;
  int radios = 1;
  QosPromise needs;
  bool parallel = false;
  SimTime start = 0;
  double handoffQuality = 0.2;  // ask for a handoff below this link quality
  std::vector<FlowSpec> flows;
};

struct TimelineEvent {
  enum class Kind : std::uint8_t { Move = 0, SpWithdraw = 1, SpVanish = 2, Demand = 3 };
  SimTime at = 0;
  Kind kind = Kind::Move;
  NodeId node;
  Position to;         // Move
  double speed = 0;    // Move, meters/sec
  double bandwidth = 0;  // Demand
};

const char* to_string(TimelineEvent::Kind k) noexcept;

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  SimTime duration = 0;
  std::size_t mtu = kDefaultMtu;
  SimTime beaconInterval = kSeconds;
  SimTime reportInterval = 2 * kSeconds;
  LinkSpec adhoc{2'000'000, 2 * kMillis, 0};
  LinkSpec serverInternet{10'000'000, 10 * kMillis, 0};
  LinkSpec spDirect{2'000'000, 2 * kMillis, 0};
  UtilityWeights weights;
  double alpha = 0.5;
  RevenuePolicy revenue;
  bool codingEnabled = false;
  CodingConfig coding;
  DrainMode drainMode = DrainMode::ViaServer;
  SimTime drainTimer = kDefaultDrainTimer;
  KeyGenerator generator = KeyGenerator::Server;
  SimTime tdmQuantum = 100 * kMillis;
  std::vector<SpSpec> sps;
  std::vector<ClientSpec> clients;
  std::vector<TimelineEvent> timeline;
};

struct LoadResult {
  std::optional<Scenario> scenario;
  std::vector<std::string> errors;  // every problem found, "path: message"
  bool ioError = false;

  bool ok() const noexcept { return scenario.has_value(); }
};

LoadResult parse_scenario(std::string_view text);
LoadResult load_scenario(const std::filesystem::path& path);

}  // namespace awima::sim
