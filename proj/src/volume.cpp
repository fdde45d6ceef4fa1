#include "hqcolon/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace hqcolon {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::MissingOrientation: return "MissingOrientation";
    case ErrorCode::UnwritablePath: return "UnwritablePath";
    case ErrorCode::InvalidLabelValue: return "InvalidLabelValue";
    case ErrorCode::DimsMismatch: return "DimsMismatch";
    case ErrorCode::SeedNotInForeground: return "SeedNotInForeground";
    case ErrorCode::MetricUndefined: return "MetricUndefined";
    case ErrorCode::CIUndefined: return "CIUndefined";
    case ErrorCode::NoAirSlices: return "NoAirSlices";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::PortUnavailable: return "PortUnavailable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Affine canonical_affine(const Spacing& spacing) {
  Affine a{};
  for (int i = 0; i < 3; ++i) a[i][i] = spacing[i];
  a[1][1] = -spacing[1];
  return a;
}

Grid::Grid(Dims d, Spacing s) : Grid(d, s, canonical_affine(s)) {}

Grid::Grid(Dims d, Spacing s, Affine a) : dims(d), spacing(s), affine(a) {
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1)
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("grid dimension {} must be >= 1, got {}", i, dims[i]));
    if (!(spacing[i] > 0.0))
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("grid spacing {} must be > 0, got {}", i, spacing[i]));
  }
}

bool Grid::same_shape(const Grid& other) const {
  if (dims != other.dims) return false;
  // NIfTI stores spacing as float32.
  for (int i = 0; i < 3; ++i)
    if (std::fabs(spacing[i] - other.spacing[i]) > 1e-6 * std::max(spacing[i], other.spacing[i]))
      return false;
  return true;
}

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b))
    throw Error(ErrorCode::DimsMismatch,
                fmt::format("{}: grids differ ({}x{}x{} vs {}x{}x{})", what,
                            a.dims[0], a.dims[1], a.dims[2], b.dims[0],
                            b.dims[1], b.dims[2]));
}

Volume::Volume(Grid g, std::int16_t fill) : grid(g), values(g.size(), fill) {}

BinaryMask::BinaryMask(Grid g, bool fill)
    : grid(g), bits(g.size(), fill ? 1 : 0) {}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(
      std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

LabelMap::LabelMap(Grid g) : grid(g), labels(g.size(), kBackground) {}

BinaryMask LabelMap::mask_of(std::uint8_t label) const {
  BinaryMask m(grid);
  std::transform(labels.begin(), labels.end(), m.bits.begin(),
                 [label](std::uint8_t v) -> std::uint8_t { return v == label; });
  return m;
}

BinaryMask LabelMap::foreground() const {
  BinaryMask m(grid);
  std::transform(labels.begin(), labels.end(), m.bits.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v != 0; });
  return m;
}

void check_labels(const LabelMap& lm) {
  auto bad = std::find_if(lm.labels.begin(), lm.labels.end(),
                          [](std::uint8_t v) { return v > kFluid; });
  if (bad != lm.labels.end()) {
    const auto c = lm.grid.coord(static_cast<std::size_t>(bad - lm.labels.begin()));
    throw Error(ErrorCode::InvalidLabelValue,
                fmt::format("label value {} at ({},{},{}); only 0,1,2 allowed",
                            static_cast<int>(*bad), c[0], c[1], c[2]));
  }
}

LabelMap fuse_labels(const BinaryMask& air, const BinaryMask& fluid) {
  require_same_shape(air.grid, fluid.grid, "fuse_labels");
  LabelMap lm(air.grid);
  for (std::size_t i = 0; i < lm.labels.size(); ++i)
    lm.labels[i] = air.bits[i] ? kAir : (fluid.bits[i] ? kFluid : kBackground);
  return lm;
}

BinaryMask threshold_binarize(const Volume& v, double threshold_hu) {
  BinaryMask m(v.grid);
  std::transform(v.values.begin(), v.values.end(), m.bits.begin(),
                 [threshold_hu](std::int16_t hu) -> std::uint8_t {
                   return static_cast<double>(hu) <= threshold_hu;
                 });
  return m;
}

double physical_volume_cm3(const BinaryMask& m) {
  return static_cast<double>(m.count()) * m.grid.voxel_volume_mm3() / 1000.0;
}

namespace {

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, const char* what, Op op) {
  require_same_shape(a.grid, b.grid, what);
  BinaryMask out(a.grid);
  for (std::size_t i = 0; i < out.bits.size(); ++i)
    out.bits[i] = op(a.bits[i] != 0, b.bits[i] != 0) ? 1 : 0;
  return out;
}

}  // namespace

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, "mask_union", [](bool p, bool q) { return p || q; });
}

BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, "mask_intersection", [](bool p, bool q) { return p && q; });
}

BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, "mask_difference", [](bool p, bool q) { return p && !q; });
}

}  // namespace hqcolon
