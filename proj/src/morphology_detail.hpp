#pragma once

#include <vector>

#include "hqcolon/volume.hpp"

namespace hqcolon::detail {

// Half-open voxel box [lo, hi).
struct Box {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  Dims extent() const {
    if (empty()) return {0, 0, 0};
    return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  }
  Box merged(const Box& o) const;
  Box expanded(std::int64_t r, const Dims& dims) const;
};

Box bounding_box(const BinaryMask& m);

// Squared weighted distance to the nearest set voxel, computed only over
// `box` (x fastest). Exact whenever every set voxel lies inside the box.
std::vector<double> squared_distance_box(const BinaryMask& m, const Box& box, const Spacing& spacing);

}  // namespace hqcolon::detail
