#pragma once

#include <optional>
#include <string>
#include <variant>

#include "hqcolon/config.hpp"
#include "hqcolon/scan.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

// Scans the midline column x = nx/2, for z from seed_z_lo to seed_z_hi and,
// within each slice, y from ny/2 - halfwidth to ny/2 + halfwidth (both
// inclusive, clipped to the grid). Returns the first set voxel.
std::optional<Index3> find_seed(const BinaryMask& m, const PipelineConfig& cfg);

// The connected component of `m` containing `seed`. Throws
// SeedNotInForeground when the seed voxel is unset.
BinaryMask region_grow(const BinaryMask& m, const Index3& seed, int connectivity = 26);

// Rejects volumes strictly above volume_max_cm3 or strictly below volume_min_cm3.
std::optional<ExclusionReason> volume_gate(const BinaryMask& m, const PipelineConfig& cfg);

struct AirSegmentation {
  LabelMap labels;
  Index3 seed{};
  double volume_cm3 = 0;
};

using AirResult = std::variant<AirSegmentation, ExclusionRecord>;

// threshold -> seed -> grow -> gate.
AirResult segment_air(const Volume& v, const PipelineConfig& cfg, const std::string& scan_id = {});

}  // namespace hqcolon
