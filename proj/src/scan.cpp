#include "hqcolon/scan.hpp"

#include <array>
#include <utility>

#include <fmt/format.h>

namespace hqcolon {

namespace {

template <typename E, std::size_t N>
std::string name_of(const std::array<std::pair<E, const char*>, N>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "unknown";
}

template <typename E, std::size_t N>
E parse_name(const std::array<std::pair<E, const char*>, N>& table, const std::string& s,
             const char* what) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown {} '{}'", what, s));
}

constexpr std::array<std::pair<Position, const char*>, 2> kPositions{{
    {Position::Supine, "supine"},
    {Position::Prone, "prone"},
}};
constexpr std::array<std::pair<Gender, const char*>, 3> kGenders{{
    {Gender::Female, "female"},
    {Gender::Male, "male"},
    {Gender::Unknown, "unknown"},
}};
constexpr std::array<std::pair<ScanStatus, const char*>, 3> kStatuses{{
    {ScanStatus::Pending, "pending"},
    {ScanStatus::Included, "included"},
    {ScanStatus::Excluded, "excluded"},
}};
constexpr std::array<std::pair<Verdict, const char*>, 2> kVerdicts{{
    {Verdict::Accepted, "accepted"},
    {Verdict::Rejected, "rejected"},
}};
constexpr std::array<std::pair<ExclusionReason, const char*>, 8> kReasons{{
    {ExclusionReason::DimsTooFewSlices, "DimsTooFewSlices"},
    {ExclusionReason::DimsTooManySlices, "DimsTooManySlices"},
    {ExclusionReason::DimsInPlaneTooSmall, "DimsInPlaneTooSmall"},
    {ExclusionReason::DisruptedFormat, "DisruptedFormat"},
    {ExclusionReason::SeedNotFound, "SeedNotFound"},
    {ExclusionReason::VolumeTooSmall, "VolumeTooSmall"},
    {ExclusionReason::VolumeTooLarge, "VolumeTooLarge"},
    {ExclusionReason::ExpertRejected, "ExpertRejected"},
}};

}  // namespace

std::string to_string(Position p) { return name_of(kPositions, p); }
std::string to_string(Gender g) { return name_of(kGenders, g); }
std::string to_string(ScanStatus s) { return name_of(kStatuses, s); }
std::string to_string(Verdict v) { return name_of(kVerdicts, v); }
std::string to_string(ExclusionReason r) { return name_of(kReasons, r); }

Position parse_position(const std::string& s) { return parse_name(kPositions, s, "position"); }
Gender parse_gender(const std::string& s) { return parse_name(kGenders, s, "gender"); }
ScanStatus parse_status(const std::string& s) { return parse_name(kStatuses, s, "status"); }
Verdict parse_verdict(const std::string& s) { return parse_name(kVerdicts, s, "verdict"); }
ExclusionReason parse_exclusion_reason(const std::string& s) {
  return parse_name(kReasons, s, "exclusion reason");
}

void ScanRecord::include() {
  status = ScanStatus::Included;
  exclusion_reason.reset();
  exclusion_detail.clear();
}

void ScanRecord::exclude(ExclusionReason reason, std::string detail) {
  status = ScanStatus::Excluded;
  exclusion_reason = reason;
  exclusion_detail = std::move(detail);
  if (reason != ExclusionReason::ExpertRejected) {
    verdict.reset();
    verdict_note.clear();
  }
}

void ScanRecord::apply_verdict(Verdict v, std::string note) {
  const bool reviewable =
      status == ScanStatus::Included ||
      (status == ScanStatus::Excluded && exclusion_reason == ExclusionReason::ExpertRejected);
  if (!reviewable)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("scan {} is {} and cannot take a verdict", scan_id, to_string(status)));
  if (v == Verdict::Accepted) {
    include();
  } else {
    status = ScanStatus::Excluded;
    exclusion_reason = ExclusionReason::ExpertRejected;
    exclusion_detail = note;
  }
  verdict = v;
  verdict_note = std::move(note);
}

bool ScanRecord::invariants_hold() const {
  if ((status == ScanStatus::Excluded) != exclusion_reason.has_value()) return false;
  if (verdict) {
    if (*verdict == Verdict::Accepted) return status == ScanStatus::Included;
    return status == ScanStatus::Excluded && exclusion_reason == ExclusionReason::ExpertRejected;
  }
  return true;
}

nlohmann::json to_json(const ScanRecord& r) {
  nlohmann::json j = {
      {"scan_id", r.scan_id},
      {"position", to_string(r.position)},
      {"gender", to_string(r.gender)},
      {"age", r.age},
      {"status", to_string(r.status)},
      {"exclusion_reason", nullptr},
      {"exclusion_detail", r.exclusion_detail},
      {"verdict", nullptr},
      {"verdict_note", r.verdict_note},
      {"image_path", r.image_path},
      {"label_path", r.label_path},
      {"masked_image_path", r.masked_image_path},
  };
  if (r.exclusion_reason) j["exclusion_reason"] = to_string(*r.exclusion_reason);
  if (r.verdict) j["verdict"] = to_string(*r.verdict);
  return j;
}

ScanRecord scan_record_from_json(const nlohmann::json& j) {
  ScanRecord r;
  r.scan_id = j.at("scan_id").get<std::string>();
  r.position = parse_position(j.at("position").get<std::string>());
  r.gender = parse_gender(j.at("gender").get<std::string>());
  r.age = j.value("age", 0);
  r.status = parse_status(j.at("status").get<std::string>());
  if (const auto& e = j.at("exclusion_reason"); !e.is_null())
    r.exclusion_reason = parse_exclusion_reason(e.get<std::string>());
  r.exclusion_detail = j.value("exclusion_detail", "");
  if (const auto& v = j.at("verdict"); !v.is_null()) r.verdict = parse_verdict(v.get<std::string>());
  r.verdict_note = j.value("verdict_note", "");
  r.image_path = j.value("image_path", "");
  r.label_path = j.value("label_path", "");
  r.masked_image_path = j.value("masked_image_path", "");
  return r;
}

nlohmann::json to_json(const ExclusionRecord& r) {
  return {{"scan_id", r.scan_id}, {"reason", to_string(r.reason)}, {"detail", r.detail}};
}

std::optional<ExclusionReason> validate_scan(const Volume& v, const PipelineConfig& cfg) {
  if (v.grid.nz() < cfg.min_axial_slices) return ExclusionReason::DimsTooFewSlices;
  if (v.grid.nz() > cfg.max_axial_slices) return ExclusionReason::DimsTooManySlices;
  if (v.grid.nx() < cfg.min_inplane_px || v.grid.ny() < cfg.min_inplane_px)
    return ExclusionReason::DimsInPlaneTooSmall;
  return std::nullopt;
}

}  // namespace hqcolon
