#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hqcolon/config.hpp"
#include "hqcolon/scan.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

// Keeps HU inside dilate(coarse_mask, mask_dilation_voxels); everything else
// becomes masked_fill_hu.
Volume prepare_masked_image(const Volume& v, const BinaryMask& coarse_mask, const PipelineConfig& cfg);

// Draws up to `count` distinct axial indices, uniformly and reproducibly,
// from the slices containing air. Result is sorted ascending.
std::vector<std::int64_t> select_annotation_slices(const BinaryMask& air, std::int64_t count,
                                                   std::uint64_t rng_seed);

struct SliceExport {
  std::vector<std::int64_t> indices;
  std::vector<std::filesystem::path> files;
  std::string warning;  // empty unless fewer than slices_per_scan were available
};

std::string slice_file_stem(const std::string& scan_id, std::int64_t z);

// Writes <scan_id>_z<index>.png, export_size_px square, windowed to 8 bit.
// Throws NoAirSlices when no slice contains air.
SliceExport export_annotation_slices(const Volume& v, const BinaryMask& air, const PipelineConfig& cfg,
                                     std::uint64_t rng_seed, const std::string& scan_id,
                                     const std::filesystem::path& out_dir);

// Reads an external fluid prediction for one scan from `dir`: either a 3D
// mask <scan_id>_fluid.nii[.gz] or per-slice PNGs <scan_id>_z<index>.png
// (pixels >= 128 are fluid; other sizes are mapped back by nearest neighbor).
// Returns an empty mask when nothing is found.
BinaryMask import_fluid_prediction(const std::string& scan_id, const std::filesystem::path& dir,
                                   const Grid& grid);

enum class Split { Train, Test };
std::string to_string(Split s);

using SplitAssignment = std::map<std::string, Split>;

// Only usable (included) records take part. Within every gender x position
// stratum the train count is floor or ceil of n * train_fraction, and the
// global count is round(N * train_fraction).
SplitAssignment stratified_split(const std::vector<ScanRecord>& records, const PipelineConfig& cfg,
                                 std::uint64_t rng_seed);

nlohmann::json split_to_json(const SplitAssignment& split, std::uint64_t rng_seed, double train_fraction);
SplitAssignment split_from_json(const nlohmann::json& j);

enum class Experiment { Air, Full };

struct TrainingLayoutOptions {
  Experiment experiment = Experiment::Full;
  bool keep_fluid_class = false;  // Full only: keep {0,1,2} instead of merging
  bool masked_images = false;     // use ScanRecord::masked_image_path
  std::string dataset_name = "Dataset001_Colon";
};

struct TrainingLayoutSummary {
  std::filesystem::path root;
  std::size_t num_training = 0;
  std::size_t num_test = 0;
};

// imagesTr/<id>_0000.nii.gz, labelsTr/<id>.nii.gz, imagesTs/<id>_0000.nii.gz
// and dataset.json under out_dir/dataset_name. Throws MissingLabel for a
// train scan without a label map.
TrainingLayoutSummary export_training_layout(const std::vector<ScanRecord>& records,
                                             const SplitAssignment& split,
                                             const std::filesystem::path& out_dir,
                                             const TrainingLayoutOptions& opts);

// Label remapping used by the layout export.
LabelMap labels_for_experiment(const LabelMap& lm, const TrainingLayoutOptions& opts);

}  // namespace hqcolon
