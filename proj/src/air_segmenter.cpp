#include "hqcolon/air_segmenter.hpp"

#include <algorithm>
#include <vector>

#include <fmt/format.h>

#include "hqcolon/morphology.hpp"

namespace hqcolon {

std::optional<Index3> find_seed(const BinaryMask& m, const PipelineConfig& cfg) {
  const Grid& g = m.grid;
  const std::int64_t x = g.nx() / 2;
  const std::int64_t ymid = g.ny() / 2;
  const std::int64_t y_lo = std::max<std::int64_t>(0, ymid - cfg.seed_band_halfwidth_px);
  const std::int64_t y_hi = std::min<std::int64_t>(g.ny() - 1, ymid + cfg.seed_band_halfwidth_px);
  const std::int64_t z_hi = std::min<std::int64_t>(g.nz() - 1, cfg.seed_z_hi);
  for (std::int64_t z = cfg.seed_z_lo; z <= z_hi; ++z)
    for (std::int64_t y = y_lo; y <= y_hi; ++y)
      if (m.at(x, y, z)) return Index3{x, y, z};
  return std::nullopt;
}

BinaryMask region_grow(const BinaryMask& m, const Index3& seed, int connectivity) {
  const Grid& g = m.grid;
  if (!g.contains(seed[0], seed[1], seed[2]) || !m.at(seed[0], seed[1], seed[2]))
    throw Error(ErrorCode::SeedNotInForeground,
                fmt::format("seed ({},{},{}) is not a foreground voxel", seed[0], seed[1], seed[2]));
  const auto offsets = neighbor_offsets(connectivity);
  std::vector<std::int64_t> deltas;
  for (const auto& o : offsets) deltas.push_back(o[0] + g.nx() * (o[1] + g.ny() * o[2]));

  BinaryMask out(g);
  std::vector<std::size_t> frontier;
  const auto start = g.index(seed[0], seed[1], seed[2]);
  out.bits[start] = 1;
  frontier.push_back(start);
  // Explicit stack; visiting order does not change the result.
  while (!frontier.empty()) {
    const auto i = frontier.back();
    frontier.pop_back();
    const auto c = g.coord(i);
    const bool interior = c[0] > 0 && c[1] > 0 && c[2] > 0 && c[0] < g.nx() - 1 &&
                          c[1] < g.ny() - 1 && c[2] < g.nz() - 1;
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!interior && !g.contains(c[0] + offsets[k][0], c[1] + offsets[k][1], c[2] + offsets[k][2]))
        continue;
      const auto j = static_cast<std::size_t>(static_cast<std::int64_t>(i) + deltas[k]);
      if (m.bits[j] && !out.bits[j]) {
        out.bits[j] = 1;
        frontier.push_back(j);
      }
    }
  }
  return out;
}

std::optional<ExclusionReason> volume_gate(const BinaryMask& m, const PipelineConfig& cfg) {
  const double v = physical_volume_cm3(m);
  if (v > cfg.volume_max_cm3) return ExclusionReason::VolumeTooLarge;
  if (v < cfg.volume_min_cm3) return ExclusionReason::VolumeTooSmall;
  return std::nullopt;
}

AirResult segment_air(const Volume& v, const PipelineConfig& cfg, const std::string& scan_id) {
  const auto air = threshold_binarize(v, cfg.air_threshold_hu);
  const auto seed = find_seed(air, cfg);
  if (!seed)
    return ExclusionRecord{scan_id, ExclusionReason::SeedNotFound,
                           fmt::format("no voxel <= {} HU in the seed band (x={}, z {}..{})",
                                       cfg.air_threshold_hu, v.grid.nx() / 2, cfg.seed_z_lo,
                                       cfg.seed_z_hi)};
  const auto grown = region_grow(air, *seed, cfg.connectivity);
  const double volume = physical_volume_cm3(grown);
  if (const auto reason = volume_gate(grown, cfg))
    return ExclusionRecord{scan_id, *reason,
                           fmt::format("grown volume {:.4f} cm3 outside [{}, {}]", volume,
                                       cfg.volume_min_cm3, cfg.volume_max_cm3)};
  AirSegmentation result;
  result.labels = LabelMap(v.grid);
  for (std::size_t i = 0; i < grown.bits.size(); ++i)
    if (grown.bits[i]) result.labels.labels[i] = kAir;
  result.seed = *seed;
  result.volume_cm3 = volume;
  return result;
}

}  // namespace hqcolon
