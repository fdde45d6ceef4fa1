#pragma once

#include <cstdint>
#include <vector>

#include "hqcolon/volume.hpp"

namespace hqcolon {

// Neighbor offsets for 6-, 18- or 26-connectivity (center excluded).
std::vector<Index3> neighbor_offsets(int connectivity);

struct ComponentLabeling {
  Grid grid;
  std::vector<std::uint32_t> ids;    // 0 = background, else 1..count()
  std::vector<std::size_t> sizes;    // sizes[id - 1]

  std::size_t count() const { return sizes.size(); }
};

// Ids are dense and assigned in raster order of each component's first voxel.
ComponentLabeling connected_components(const BinaryMask& m, int connectivity = 26);

// Drops every component with fewer than min_voxels voxels.
BinaryMask remove_small_islands(const BinaryMask& m, std::int64_t min_voxels,
                                int connectivity = 26);

// Squared Euclidean distance from every voxel center to the nearest set voxel
// center, with per-axis weights spacing^2. Infinity where the mask is empty.
std::vector<double> squared_distance_transform(const BinaryMask& m, const Spacing& spacing);

// Voxels within Euclidean index-space distance r of the mask.
BinaryMask dilate(const BinaryMask& m, double r_voxels);

// Sets background pockets (6-connected) that cannot reach a volume face.
BinaryMask fill_holes(const BinaryMask& m);

// Separable Gaussian (kernel truncated at 4 sigma, weights renormalized over
// in-bounds taps) re-thresholded at 0.5. sigma below 0.5 is the identity.
BinaryMask gaussian_smooth_binary(const BinaryMask& m, double sigma_voxels);

// Set voxels with at least one unset or out-of-bounds face neighbor.
BinaryMask boundary_voxels(const BinaryMask& m);

struct ComponentDistance {
  std::uint32_t id;
  std::size_t size;
  double min_distance_mm;  // 0 when the component overlaps `to`
};

// For each 26-connected component of `from`, the minimum spacing-weighted
// distance to the surface of `to` (0 on overlap, infinity if `to` is empty).
std::vector<ComponentDistance> min_surface_distance_mm(const BinaryMask& from,
                                                       const BinaryMask& to);

// Same, reusing a labeling of `from`.
std::vector<ComponentDistance> min_surface_distance_mm(const ComponentLabeling& from,
                                                       const BinaryMask& to);

}  // namespace hqcolon
