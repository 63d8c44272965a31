#include "awima/sim/batch.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

namespace awima::sim {

std::vector<std::filesystem::path> list_scenarios(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  }
  if (ec) throw Error(ErrorCode::IoError, "cannot list " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void run_one(BatchItem& item, const RunOptions& options, bool keepTraces) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoadResult loaded = load_scenario(item.file.string());
  if (!loaded.ok()) {
    item.ioError = loaded.ioError;
    item.errors = loaded.errors;
  } else {
    item.name = loaded.scenario->name;
    RunOptions o = options;
    o.traceOut = nullptr;
    item.result = run_scenario(*loaded.scenario, o);
    item.violation = item.result.violation;
    item.message = item.result.violationMessage;
    if (!keepTraces) item.result.trace.clear();
  }
  item.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BatchItem> run_batch(const std::vector<std::filesystem::path>& files, unsigned jobs,
                                 const RunOptions& options, bool keepTraces) {
  std::vector<BatchItem> items(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    items[i].file = files[i];
    items[i].name = files[i].stem().string();
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) run_one(items[i], options, keepTraces);
  };
  const unsigned n = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(std::max<std::size_t>(items.size(), 1)));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return items;
}

}  // namespace awima::sim
