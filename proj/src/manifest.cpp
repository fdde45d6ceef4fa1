#include "hqcolon/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <unistd.h>

namespace hqcolon {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

}  // namespace

nlohmann::json to_json(const ManifestEvent& e) {
  nlohmann::json j = {
      {"seq", e.seq},
      {"kind", e.kind},
      {"stage", e.stage},
      {"timestamp", e.timestamp},
      {"config_hash", e.config_hash},
      {"rng_seed", nullptr},
      {"outputs", e.outputs},
      {"record", nullptr},
      {"extra", e.extra},
  };
  if (e.rng_seed) j["rng_seed"] = *e.rng_seed;
  if (e.record) j["record"] = to_json(*e.record);
  return j;
}

ManifestEvent manifest_event_from_json(const nlohmann::json& j) {
  ManifestEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.kind = j.at("kind").get<std::string>();
  e.stage = j.value("stage", "");
  e.timestamp = j.value("timestamp", "");
  e.config_hash = j.value("config_hash", "");
  if (j.contains("rng_seed") && !j["rng_seed"].is_null()) e.rng_seed = j["rng_seed"].get<std::uint64_t>();
  if (j.contains("outputs")) e.outputs = j["outputs"].get<std::vector<std::string>>();
  if (j.contains("record") && !j["record"].is_null()) e.record = scan_record_from_json(j["record"]);
  if (j.contains("extra")) e.extra = j["extra"];
  return e;
}

std::vector<ManifestEvent> Manifest::read_events(const fs::path& path) {
  std::vector<ManifestEvent> out;
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: cannot open manifest", path.string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(manifest_event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& ex) {
      // A torn final line is what a crash mid-append leaves behind.
      if (f.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorCode::UnreadableFile,
                  fmt::format("{}:{}: malformed manifest line: {}", path.string(), lineno, ex.what()));
    }
  }
  return out;
}

namespace {

// Cuts anything after the last newline so later appends start on a fresh line.
void drop_torn_tail(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty() || text.back() == '\n') return;
  const auto keep = text.rfind('\n');
  fs::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

}  // namespace

std::map<std::string, ScanRecord> Manifest::replay(const std::vector<ManifestEvent>& events) {
  std::map<std::string, ScanRecord> state;
  for (const auto& e : events)
    if (e.record) state[e.record->scan_id] = *e.record;
  return state;
}

Manifest::Manifest(fs::path path) : path_(std::move(path)) {
  std::error_code ec;
  if (fs::exists(path_, ec)) {
    events_ = read_events(path_);
    state_ = replay(events_);
    drop_torn_tail(path_);
    return;
  }
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path(), ec);
  std::FILE* f = std::fopen(path_.c_str(), "a");
  if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: cannot create manifest", path_.string()));
  std::fclose(f);
}

ManifestEvent Manifest::append_locked(ManifestEvent e) {
  e.seq = events_.empty() ? 1 : events_.back().seq + 1;
  if (e.timestamp.empty()) e.timestamp = utc_now();
  if (!path_.empty()) {
    const auto line = to_json(e).dump() + "\n";
    std::FILE* f = std::fopen(path_.c_str(), "a");
    if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: cannot append", path_.string()));
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                    ::fsync(fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: append failed", path_.string()));
  }
  if (e.record) state_[e.record->scan_id] = *e.record;
  events_.push_back(e);
  return e;
}

ManifestEvent Manifest::append(ManifestEvent e) {
  std::lock_guard lock(mu_);
  return append_locked(std::move(e));
}

ManifestEvent Manifest::append_record(const ScanRecord& r, const std::string& stage, const std::string& config_hash,
                                      std::vector<std::string> outputs, std::optional<std::uint64_t> rng_seed,
                                      nlohmann::json extra) {
  ManifestEvent e;
  e.kind = "scan";
  e.stage = stage;
  e.config_hash = config_hash;
  e.outputs = std::move(outputs);
  e.rng_seed = rng_seed;
  e.record = r;
  e.extra = std::move(extra);
  return append(std::move(e));
}

std::vector<ScanRecord> Manifest::records() const {
  std::lock_guard lock(mu_);
  std::vector<ScanRecord> out;
  out.reserve(state_.size());
  for (const auto& [id, r] : state_) out.push_back(r);
  return out;
}

std::optional<ScanRecord> Manifest::find(const std::string& scan_id) const {
  std::lock_guard lock(mu_);
  const auto it = state_.find(scan_id);
  if (it == state_.end()) return std::nullopt;
  return it->second;
}

std::vector<ManifestEvent> Manifest::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

ScanRecord Manifest::record_verdict(const std::string& scan_id, Verdict v, const std::string& note,
                                    const std::string& config_hash) {
  std::lock_guard lock(mu_);
  const auto it = state_.find(scan_id);
  if (it == state_.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("unknown scan {}", scan_id));
  ScanRecord r = it->second;
  r.apply_verdict(v, note);
  ManifestEvent e;
  e.kind = "verdict";
  e.stage = "review";
  e.config_hash = config_hash;
  e.record = r;
  append_locked(std::move(e));
  return r;
}

std::map<std::string, std::size_t> report_funnel(const std::vector<ScanRecord>& records) {
  std::map<std::string, std::size_t> out{{"included", 0}, {"pending", 0}};
  for (const auto reason : kAllExclusionReasons) out[to_string(reason)] = 0;
  for (const auto& r : records) {
    if (r.status == ScanStatus::Included) {
      ++out["included"];
    } else if (r.status == ScanStatus::Pending) {
      ++out["pending"];
    } else {
      ++out[to_string(*r.exclusion_reason)];
    }
  }
  return out;
}

nlohmann::json funnel_to_json(const std::map<std::string, std::size_t>& funnel, std::size_t total) {
  nlohmann::json j = {{"total", total}, {"counts", funnel}};
  return j;
}

nlohmann::json without_timestamp(const ManifestEvent& e) {
  auto j = to_json(e);
  j.erase("timestamp");
  return j;
}

}  // namespace hqcolon
