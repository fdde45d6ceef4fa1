#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hqcolon/config.hpp"
#include "hqcolon/manifest.hpp"
#include "hqcolon/scan.hpp"

namespace hqcolon {

struct RosterEntry {
  Position position = Position::Supine;
  Gender gender = Gender::Unknown;
  int age = 0;
};

// CSV with header scan_id,position,gender,age. Missing file -> empty roster.
std::map<std::string, RosterEntry> load_roster(const std::filesystem::path& csv);

// scan_id -> image path for every .nii / .nii.gz directly inside `dir`,
// sorted by scan_id. A missing directory is an UnreadableFile error.
std::map<std::string, std::filesystem::path> discover_scans(const std::filesystem::path& dir);

// Label or mask file <dir>/<scan_id>.nii[.gz], if present.
std::optional<std::filesystem::path> find_scan_file(const std::filesystem::path& dir, const std::string& scan_id);

// Worker count from the flag, else HQCOLON_WORKERS, else 1.
int resolve_workers(std::optional<int> flag);

// Runs job(i) for i in [0, n) on `workers` threads and hands results to
// sink(i, result) on the calling thread in index order, so whatever the sink
// writes is independent of scheduling.
template <typename Job, typename Sink>
void ordered_parallel(std::size_t n, int workers, Job job, Sink sink) {
  using R = decltype(job(std::size_t{}));
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) sink(i, job(i));
    return;
  }
  std::vector<std::optional<R>> slots(n);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        R r = job(i);
        std::lock_guard lock(mu);
        slots[i] = std::move(r);
        cv.notify_all();
      }
    });
  for (std::size_t i = 0; i < n; ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return slots[i].has_value(); });
    R r = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    sink(i, std::move(r));
  }
}

struct RunOptions {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> fluid_dir;  // external fluid predictions
  std::optional<std::filesystem::path> roster_csv;  // default: <input_dir>/scans.csv
  int workers = 1;
};

// Per-scan result of a batch stage.
struct ScanOutcome {
  ScanRecord record;
  std::vector<std::string> outputs;
  nlohmann::json extra = nlohmann::json::object();
  bool failed = false;  // an unexpected error, as opposed to an exclusion
};

struct BatchSummary {
  std::size_t scans = 0;
  std::size_t failures = 0;
  bool ok() const { return failures == 0; }
};

// load -> validate_scan -> segment_air -> optional fluid import and
// post-processing -> <output_dir>/labels/<scan_id>.nii.gz. Exclusions are
// recorded per scan; unexpected per-scan errors are counted as failures and
// never stop the batch.
ScanOutcome process_scan(const std::string& scan_id, const std::filesystem::path& image,
                         const RosterEntry& who, const RunOptions& opts, const PipelineConfig& cfg);

BatchSummary run_pipeline(const RunOptions& opts, const PipelineConfig& cfg, Manifest& manifest);

// Dimension and format gates only; passing scans stay pending.
BatchSummary validate_stage(const RunOptions& opts, const PipelineConfig& cfg, Manifest& manifest);

// Re-runs fluid post-processing on included scans that already have air
// labels, writing <output_dir>/labels/<scan_id>.nii.gz.
BatchSummary fluid_stage(const std::filesystem::path& fluid_dir, const std::filesystem::path& output_dir,
                         const PipelineConfig& cfg, int workers, Manifest& manifest);

// Masks included images with their dilated coarse masks from coarse_dir,
// writing <output_dir>/masked/<scan_id>.nii.gz.
BatchSummary prep_masks_stage(const std::filesystem::path& coarse_dir, const std::filesystem::path& output_dir,
                              const PipelineConfig& cfg, int workers, Manifest& manifest);

// Annotation slice PNGs for included scans under <output_dir>. Each scan
// draws with scan_seed(rng_seed, scan_id).
BatchSummary export_slices_stage(const std::filesystem::path& output_dir, const PipelineConfig& cfg,
                                 std::uint64_t rng_seed, int workers, Manifest& manifest);

std::uint64_t scan_seed(std::uint64_t rng_seed, const std::string& scan_id);

}  // namespace hqcolon
