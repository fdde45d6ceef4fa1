#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <utility>

namespace hqcolon {

// Every threshold used by the pipeline. Defaults reproduce the published
// settings; the ones marked "tunable" had no published value.
struct PipelineConfig {
  double air_threshold_hu = -800.0;
  int connectivity = 26;
  std::int64_t seed_band_halfwidth_px = 50;
  std::int64_t seed_z_lo = 50;
  std::int64_t seed_z_hi = 250;
  double volume_min_cm3 = 3.5;
  double volume_max_cm3 = 27.0;
  double mask_dilation_voxels = 35.0;
  std::int64_t fluid_min_component_voxels = 2000;
  double fluid_surface_dist_mm = 2.0;
  std::int64_t gravity_slab_halfwidth_slices = 2;
  std::int64_t island_min_voxels = 2000;
  std::int64_t slices_per_scan = 7;
  std::int64_t export_size_px = 1000;
  double train_fraction = 2.0 / 3.0;
  double hd_percentile = 95.0;
  std::int64_t min_axial_slices = 350;
  std::int64_t max_axial_slices = 700;
  std::int64_t min_inplane_px = 512;

  // tunable
  double smoothing_sigma_voxels = 1.0;
  std::int64_t sagittal_max_gap_voxels = 3;
  double gravity_inplane_radius_voxels = std::numeric_limits<double>::infinity();
  std::int64_t rolling_dice_window = 50;
  std::pair<double, double> windowing_hu{-1000.0, 400.0};
  double masked_fill_hu = -1024.0;
  bool hd_pooled_percentile = false;

  // Throws Error(ConfigError) when an invariant is broken.
  void validate() const;

  // Applies one `key = value` override. Value uses TOML literal syntax.
  void set(const std::string& key, const std::string& value);

  // Stable `key = value` lines, one per field, sorted by key.
  std::string dump() const;

  // FNV-1a over dump(); identical configs hash identically across runs.
  std::string hash() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

// Parses the TOML subset used for config files into flat key/value pairs.
// Table headers prefix nothing; keys must be unique across the file.
std::map<std::string, std::string> parse_toml_kv(const std::string& text);

}  // namespace hqcolon
