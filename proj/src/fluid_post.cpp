#include "hqcolon/fluid_post.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hqcolon/morphology.hpp"

namespace hqcolon {

namespace {

void check(const FluidContext& ctx) {
  require_same_shape(ctx.air.grid, ctx.fluid.grid, "fluid post-processing");
}

FluidContext with_fluid(const FluidContext& ctx, BinaryMask fluid) {
  FluidContext next{ctx.air, std::move(fluid), ctx.position, ctx.cfg};
  return next;
}

}  // namespace

BinaryMask component_filter(const FluidContext& ctx) {
  check(ctx);
  const auto cc = connected_components(ctx.fluid, 26);
  const auto dist = min_surface_distance_mm(cc, ctx.air);
  std::vector<std::uint8_t> keep(cc.count() + 1, 0);
  for (const auto& d : dist) {
    const bool small = static_cast<std::int64_t>(d.size) < ctx.cfg.fluid_min_component_voxels;
    const bool far = d.min_distance_mm > ctx.cfg.fluid_surface_dist_mm;
    keep[d.id] = !(small || far);
  }
  BinaryMask out(ctx.fluid.grid);
  for (std::size_t i = 0; i < cc.ids.size(); ++i) out.bits[i] = cc.ids[i] != 0 && keep[cc.ids[i]];
  return out;
}

BinaryMask gravity_filter(const FluidContext& ctx) {
  check(ctx);
  const Grid& g = ctx.air.grid;
  const std::int64_t nx = g.nx(), ny = g.ny(), nz = g.nz();
  const std::size_t plane = static_cast<std::size_t>(nx * ny);
  const std::int64_t h = ctx.cfg.gravity_slab_halfwidth_slices;

  std::vector<std::uint8_t> slice_has_air(static_cast<std::size_t>(nz), 0);
  for (std::int64_t z = 0; z < nz; ++z) {
    const auto* p = ctx.air.bits.data() + static_cast<std::size_t>(z) * plane;
    slice_has_air[static_cast<std::size_t>(z)] = std::any_of(p, p + plane, [](std::uint8_t b) { return b != 0; });
  }

  BinaryMask out(g);
  const double radius = ctx.cfg.gravity_inplane_radius_voxels;
  if (std::isinf(radius)) {
    for (std::int64_t z = 0; z < nz; ++z) {
      bool slab = false;
      for (std::int64_t zz = std::max<std::int64_t>(0, z - h); zz <= std::min(nz - 1, z + h); ++zz)
        slab = slab || slice_has_air[static_cast<std::size_t>(zz)];
      if (!slab) continue;
      const std::size_t base = static_cast<std::size_t>(z) * plane;
      std::copy_n(ctx.fluid.bits.begin() + static_cast<std::ptrdiff_t>(base), plane,
                  out.bits.begin() + static_cast<std::ptrdiff_t>(base));
    }
    return out;
  }

  // Air must sit on the anti-gravity side: lower y (anterior) when supine.
  const std::int64_t r = static_cast<std::int64_t>(std::floor(radius));
  const double r2 = radius * radius;
  const bool supine = ctx.position == Position::Supine;
  std::vector<std::uint8_t> proj(plane);
  for (std::int64_t z = 0; z < nz; ++z) {
    std::fill(proj.begin(), proj.end(), 0);
    bool any = false;
    for (std::int64_t zz = std::max<std::int64_t>(0, z - h); zz <= std::min(nz - 1, z + h); ++zz) {
      if (!slice_has_air[static_cast<std::size_t>(zz)]) continue;
      any = true;
      const auto* p = ctx.air.bits.data() + static_cast<std::size_t>(zz) * plane;
      for (std::size_t i = 0; i < plane; ++i) proj[i] |= p[i];
    }
    if (!any) continue;
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const auto i = g.index(x, y, z);
        if (!ctx.fluid.bits[i]) continue;
        bool found = false;
        for (std::int64_t dy = -r; dy <= r && !found; ++dy) {
          if ((supine && dy > 0) || (!supine && dy < 0)) continue;
          const std::int64_t yy = y + dy;
          if (yy < 0 || yy >= ny) continue;
          for (std::int64_t dx = -r; dx <= r; ++dx) {
            const std::int64_t xx = x + dx;
            if (xx < 0 || xx >= nx || static_cast<double>(dx * dx + dy * dy) > r2) continue;
            if (proj[static_cast<std::size_t>(xx + nx * yy)]) {
              found = true;
              break;
            }
          }
        }
        out.bits[i] = found;
      }
  }
  return out;
}

BinaryMask sagittal_connect(const FluidContext& ctx) {
  check(ctx);
  const Grid& g = ctx.air.grid;
  const auto& air = ctx.air.bits;
  const auto& fluid = ctx.fluid.bits;
  const std::int64_t max_gap = ctx.cfg.sagittal_max_gap_voxels;
  BinaryMask out = ctx.fluid;
  if (max_gap <= 0) return out;

  // In-plane directions of a sagittal slice: -z, +z, -y, +y.
  constexpr std::int64_t dirs[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
  for (std::int64_t z = 0; z < g.nz(); ++z)
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x) {
        const auto i = g.index(x, y, z);
        if (!fluid[i] || air[i]) continue;
        std::int64_t gap[4];
        std::int64_t best = max_gap + 1;
        for (int d = 0; d < 4; ++d) {
          gap[d] = -1;
          std::int64_t k = 0;
          for (std::int64_t step = 1; step <= max_gap + 1; ++step) {
            const std::int64_t yy = y + dirs[d][0] * step, zz = z + dirs[d][1] * step;
            if (yy < 0 || zz < 0 || yy >= g.ny() || zz >= g.nz()) break;
            const auto j = g.index(x, yy, zz);
            if (air[j]) {
              gap[d] = k;
              break;
            }
            if (fluid[j]) break;
            ++k;
          }
          if (gap[d] >= 0) best = std::min(best, gap[d]);
        }
        if (best == 0 || best > max_gap) continue;
        for (int d = 0; d < 4; ++d) {
          if (gap[d] != best) continue;
          for (std::int64_t step = 1; step <= best; ++step)
            out.bits[g.index(x, y + dirs[d][0] * step, z + dirs[d][1] * step)] = 1;
        }
      }
  return out;
}

BinaryMask fill_fluid_holes(const FluidContext& ctx) {
  check(ctx);
  const auto colon = mask_union(ctx.air, ctx.fluid);
  const auto filled = fill_holes(colon);
  return mask_union(ctx.fluid, mask_difference(filled, colon));
}

BinaryMask smooth_fluid(const FluidContext& ctx) {
  check(ctx);
  const auto smoothed = gaussian_smooth_binary(mask_union(ctx.air, ctx.fluid), ctx.cfg.smoothing_sigma_voxels);
  return mask_intersection(ctx.fluid, smoothed);
}

LabelMap fluid_postprocess(const FluidContext& ctx) {
  check(ctx);
  auto stage = with_fluid(ctx, component_filter(ctx));
  stage = with_fluid(stage, gravity_filter(stage));
  stage = with_fluid(stage, fill_fluid_holes(stage));
  stage = with_fluid(stage, smooth_fluid(stage));
  stage = with_fluid(stage, sagittal_connect(stage));
  return fuse_labels(ctx.air, stage.fluid);
}

}  // namespace hqcolon
