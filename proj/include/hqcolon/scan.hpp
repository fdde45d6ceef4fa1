#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "hqcolon/config.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

enum class Position { Supine, Prone };
enum class Gender { Female, Male, Unknown };
enum class ScanStatus { Pending, Included, Excluded };
enum class Verdict { Accepted, Rejected };

enum class ExclusionReason {
  DimsTooFewSlices,
  DimsTooManySlices,
  DimsInPlaneTooSmall,
  DisruptedFormat,
  SeedNotFound,
  VolumeTooSmall,
  VolumeTooLarge,
  ExpertRejected,
};

inline constexpr ExclusionReason kAllExclusionReasons[] = {
    ExclusionReason::DimsTooFewSlices, ExclusionReason::DimsTooManySlices,
    ExclusionReason::DimsInPlaneTooSmall, ExclusionReason::DisruptedFormat,
    ExclusionReason::SeedNotFound, ExclusionReason::VolumeTooSmall,
    ExclusionReason::VolumeTooLarge, ExclusionReason::ExpertRejected,
};

std::string to_string(Position p);
std::string to_string(Gender g);
std::string to_string(ScanStatus s);
std::string to_string(Verdict v);
std::string to_string(ExclusionReason r);

// Parsers throw Error(InvalidArgument) on unknown names.
Position parse_position(const std::string& s);
Gender parse_gender(const std::string& s);
ScanStatus parse_status(const std::string& s);
Verdict parse_verdict(const std::string& s);
ExclusionReason parse_exclusion_reason(const std::string& s);

struct ExclusionRecord {
  std::string scan_id;
  ExclusionReason reason;
  std::string detail;
};

struct ScanRecord {
  std::string scan_id;
  Position position = Position::Supine;
  Gender gender = Gender::Unknown;
  int age = 0;
  ScanStatus status = ScanStatus::Pending;
  std::optional<ExclusionReason> exclusion_reason;
  std::string exclusion_detail;
  std::optional<Verdict> verdict;
  std::string verdict_note;
  std::string image_path;
  std::string label_path;
  std::string masked_image_path;

  void include();
  void exclude(ExclusionReason reason, std::string detail);

  // Accepting keeps the scan included; rejecting excludes it with
  // ExpertRejected. Only included (or previously expert-rejected) scans take
  // a verdict.
  void apply_verdict(Verdict v, std::string note);

  // status=excluded <=> reason present; a verdict exists only on included or
  // expert-rejected scans.
  bool invariants_hold() const;

  // True if the scan may feed splits and training exports.
  bool usable() const { return status == ScanStatus::Included; }

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

nlohmann::json to_json(const ScanRecord& r);
ScanRecord scan_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExclusionRecord& r);

// Dimension gates on a loaded volume. Boundaries are inclusive-accept.
std::optional<ExclusionReason> validate_scan(const Volume& v, const PipelineConfig& cfg);

}  // namespace hqcolon
