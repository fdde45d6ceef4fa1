#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hqcolon {

enum class ErrorCode {
  UnreadableFile,
  UnsupportedFormat,
  MissingOrientation,
  UnwritablePath,
  InvalidLabelValue,
  DimsMismatch,
  SeedNotInForeground,
  MetricUndefined,
  CIUndefined,
  NoAirSlices,
  MissingLabel,
  ConfigError,
  PortUnavailable,
  InvalidArgument,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Dims = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;
using Index3 = std::array<std::int64_t, 3>;
// Row-major 4x4 voxel-to-world (RAS mm) transform; the last row is implied.
using Affine = std::array<std::array<double, 4>, 3>;

// Axis-aligned affine for canonical axes: +x, -y (posterior), +z in RAS.
Affine canonical_affine(const Spacing& spacing);

// Shared geometry of every voxel grid. Storage order is x fastest, then y,
// then z. After loading, axis 0 runs left->right, axis 1 anterior->posterior
// and axis 2 inferior->superior.
struct Grid {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine = canonical_affine({1.0, 1.0, 1.0});

  Grid() = default;
  Grid(Dims d, Spacing s);
  Grid(Dims d, Spacing s, Affine a);

  std::int64_t nx() const { return dims[0]; }
  std::int64_t ny() const { return dims[1]; }
  std::int64_t nz() const { return dims[2]; }
  std::size_t size() const {
    return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
  }
  Index3 coord(std::size_t i) const {
    const auto ii = static_cast<std::int64_t>(i);
    return {ii % dims[0], (ii / dims[0]) % dims[1], ii / (dims[0] * dims[1])};
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] &&
           z < dims[2];
  }
  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

  // Same dims and spacing (to float32 precision). The affine is not compared.
  bool same_shape(const Grid& other) const;
};

void require_same_shape(const Grid& a, const Grid& b, const char* what);

// CT intensities in HU.
struct Volume {
  Grid grid;
  std::vector<std::int16_t> values;

  Volume() = default;
  Volume(Grid g, std::int16_t fill = 0);

  std::int16_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return values[grid.index(x, y, z)];
  }
  std::int16_t& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return values[grid.index(x, y, z)];
  }
};

// One byte per voxel, 0 or 1.
struct BinaryMask {
  Grid grid;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  explicit BinaryMask(Grid g, bool fill = false);

  bool at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return bits[grid.index(x, y, z)] != 0;
  }
  void set(std::int64_t x, std::int64_t y, std::int64_t z, bool v = true) {
    bits[grid.index(x, y, z)] = v ? 1 : 0;
  }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.grid.same_shape(b.grid) && a.bits == b.bits;
  }
};

enum Label : std::uint8_t { kBackground = 0, kAir = 1, kFluid = 2 };

struct LabelMap {
  Grid grid;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  explicit LabelMap(Grid g);

  std::uint8_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return labels[grid.index(x, y, z)];
  }

  BinaryMask mask_of(std::uint8_t label) const;
  BinaryMask foreground() const;

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return a.grid.same_shape(b.grid) && a.labels == b.labels;
  }
};

// Throws InvalidLabelValue if anything outside {0,1,2} is present.
void check_labels(const LabelMap& lm);

// Air and fluid fused; air wins where both are set.
LabelMap fuse_labels(const BinaryMask& air, const BinaryMask& fluid);

// Voxels with HU <= threshold are set.
BinaryMask threshold_binarize(const Volume& v, double threshold_hu);

double physical_volume_cm3(const BinaryMask& m);

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b);

}  // namespace hqcolon
