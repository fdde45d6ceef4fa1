#pragma once

#include <filesystem>

#include "hqcolon/volume.hpp"

namespace hqcolon {

// NIfTI-1 single-file volumes (.nii, .nii.gz). Data is reoriented on load so
// that axis 0 points to patient right, axis 1 to posterior and axis 2 to
// superior; the stored affine is updated to match.
//
// Errors: UnreadableFile (missing, truncated, bad header size),
// UnsupportedFormat (wrong magic, datatype, >3 non-singleton dims),
// MissingOrientation (neither sform nor qform set).
Volume load_volume(const std::filesystem::path& path);

// Label maps go through the same reorientation. Values outside {0,1,2}
// raise InvalidLabelValue.
LabelMap load_labelmap(const std::filesystem::path& path);

// Any non-zero voxel is set.
BinaryMask load_mask(const std::filesystem::path& path);

// Written as int16 with the grid's affine in both sform and qform.
void save_volume(const Volume& v, const std::filesystem::path& path);

// Written as uint8.
void save_labelmap(const LabelMap& lm, const std::filesystem::path& path);

void save_mask(const BinaryMask& m, const std::filesystem::path& path);

namespace nifti_detail {

// Permutation/flip taking stored voxel axes to canonical axes: canonical axis
// i is stored axis perm[i], traversed backwards when flip[i] is set.
struct Reorientation {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
};

Reorientation canonical_reorientation(const Affine& affine);

// Quaternion parameters (b, c, d, qfac) for the rotation part of an affine.
std::array<double, 4> affine_to_quaternion(const Affine& affine);
Affine quaternion_to_affine(double b, double c, double d, double qfac,
                            const Spacing& spacing,
                            const std::array<double, 3>& offset);

}  // namespace nifti_detail

}  // namespace hqcolon
