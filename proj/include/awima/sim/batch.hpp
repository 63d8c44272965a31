#pragma once

// Runs many scenario files on a small thread pool. Each run is independent
// and deterministic, so the pool size never changes a result.

#include "awima/sim/run.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace awima::sim {

struct BatchItem {
  std::filesystem::path file;
  std::string name;
  bool ioError = false;
  std::vector<std::string> errors;  // validation messages
  bool violation = false;
  std::string message;
  RunResult result;
  double seconds = 0;  // wall clock

  bool ok() const { return !ioError && errors.empty() && !violation; }
};

/// The *.json files directly inside `dir`, sorted by name. IoError if `dir`
/// is not a readable directory.
std::vector<std::filesystem::path> list_scenarios(const std::filesystem::path& dir);

/// Results come back in the order of `files`. `keepTraces` false drops the
/// event vectors once the report is built.
std::vector<BatchItem> run_batch(const std::vector<std::filesystem::path>& files, unsigned jobs,
                                 const RunOptions& options = {}, bool keepTraces = true);

}  // namespace awima::sim
