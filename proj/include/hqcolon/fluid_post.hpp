#pragma once

#include "hqcolon/config.hpp"
#include "hqcolon/scan.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

// Inputs to fluid post-processing. `fluid` is the externally predicted fluid
// mask; every stage returns a new fluid mask and leaves `air` untouched.
struct FluidContext {
  BinaryMask air;
  BinaryMask fluid;
  Position position = Position::Supine;
  PipelineConfig cfg;
};

// Removes a fluid component when it is smaller than fluid_min_component_voxels
// or lies farther than fluid_surface_dist_mm from the air surface.
BinaryMask component_filter(const FluidContext& ctx);

// Keeps a fluid voxel on slice z only if air exists in slices
// [z - h, z + h]. With a finite gravity_inplane_radius_voxels the air must
// also lie within that in-plane radius on the side opposite gravity
// (anterior for supine, posterior for prone).
BinaryMask gravity_filter(const FluidContext& ctx);

// In each sagittal plane, bridges straight runs of at most
// sagittal_max_gap_voxels background voxels between a fluid voxel and the
// nearest air voxel along +-y or +-z. Returns the widened fluid mask.
BinaryMask sagittal_connect(const FluidContext& ctx);

// Hole filling of air|fluid with new voxels assigned to fluid.
BinaryMask fill_fluid_holes(const FluidContext& ctx);

// Gaussian smoothing of the colon surface (air|fluid); fluid voxels the
// smoothed colon no longer covers are dropped. Never adds voxels.
BinaryMask smooth_fluid(const FluidContext& ctx);

// component_filter -> gravity_filter -> fill_fluid_holes -> smooth_fluid ->
// sagittal_connect, fused with air (air wins). DimsMismatch if the masks
// disagree.
LabelMap fluid_postprocess(const FluidContext& ctx);

}  // namespace hqcolon
