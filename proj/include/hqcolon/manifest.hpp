#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hqcolon/scan.hpp"

namespace hqcolon {

// One line of the event log. `record` carries a full ScanRecord snapshot for
// scan-level events; run-level events leave it empty.
struct ManifestEvent {
  std::uint64_t seq = 0;
  std::string kind;   // "run_start", "scan", "verdict", "stage"
  std::string stage;  // e.g. "segment-air"
  std::string timestamp;
  std::string config_hash;
  std::optional<std::uint64_t> rng_seed;
  std::vector<std::string> outputs;
  std::optional<ScanRecord> record;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const ManifestEvent& e);
ManifestEvent manifest_event_from_json(const nlohmann::json& j);

// Append-only JSON-lines log of ScanRecord snapshots and pipeline events.
// The latest snapshot per scan_id is the current state. All members are
// safe to call from several threads; appends are serialized and flushed
// line by line.
class Manifest {
 public:
  // Opens (creating if needed) and replays an existing log.
  explicit Manifest(std::filesystem::path path);

  // In-memory only; nothing is persisted.
  Manifest() = default;

  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;

  // Stamps seq and timestamp, persists, then applies the event.
  ManifestEvent append(ManifestEvent e);

  ManifestEvent append_record(const ScanRecord& r, const std::string& stage, const std::string& config_hash,
                              std::vector<std::string> outputs = {}, std::optional<std::uint64_t> rng_seed = {},
                              nlohmann::json extra = nlohmann::json::object());

  // Current records sorted by scan_id.
  std::vector<ScanRecord> records() const;
  std::optional<ScanRecord> find(const std::string& scan_id) const;
  std::vector<ManifestEvent> events() const;
  const std::filesystem::path& path() const { return path_; }

  // Applies a verdict and logs it. Throws InvalidArgument for an unknown
  // scan or one that cannot take a verdict. Concurrent callers are
  // serialized; the last writer wins.
  ScanRecord record_verdict(const std::string& scan_id, Verdict v, const std::string& note,
                            const std::string& config_hash = {});

  // Rebuilds current state from an event sequence.
  static std::map<std::string, ScanRecord> replay(const std::vector<ManifestEvent>& events);

  static std::vector<ManifestEvent> read_events(const std::filesystem::path& path);

 private:
  ManifestEvent append_locked(ManifestEvent e);

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<ManifestEvent> events_;
  std::map<std::string, ScanRecord> state_;
};

// Counts by outcome: "included", "pending" and one bucket per exclusion
// reason (zeros included). The buckets partition the records.
std::map<std::string, std::size_t> report_funnel(const std::vector<ScanRecord>& records);
nlohmann::json funnel_to_json(const std::map<std::string, std::size_t>& funnel, std::size_t total);

// Event JSON with the timestamp removed, for run-to-run comparisons.
nlohmann::json without_timestamp(const ManifestEvent& e);

}  // namespace hqcolon
