#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hqcolon/config.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

struct SurfaceDistanceResult {
  double assd_mm = 0;
  double masd_mm = 0;
  double hd95_mm = 0;
  // Directed distances from each boundary voxel (raster order) to the other
  // boundary.
  std::vector<double> a_to_b;
  std::vector<double> b_to_a;
};

// Linear-interpolation percentile (p in [0, 100]) of unsorted values.
double percentile_linear(std::vector<double> values, double p);

// Voxel-center boundary distances between two non-empty masks on the same
// grid. HD is max of the two directed percentiles, or the percentile of the
// pooled distances when `pooled` is set. Throws MetricUndefined on an empty
// mask and DimsMismatch on differing grids.
SurfaceDistanceResult surface_distances(const BinaryMask& a, const BinaryMask& b, double percentile = 95.0,
                                        bool pooled = false);

// 2|a & b| / (|a| + |b|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

using Series = std::vector<std::pair<std::int64_t, double>>;

// Trailing-window mean; the first window-1 points average what is available.
Series rolling_dice(const Series& series, std::int64_t window);

struct MedianCI {
  double median = 0;
  double lo = 0;
  double hi = 0;
};

double median(std::vector<double> samples);

// Distribution-free CI for the median from binomial(n, 1/2) order-statistic
// ranks. Throws CIUndefined when n is too small for the requested level.
MedianCI median_ci(std::vector<double> samples, double level = 0.95);

// 1-based ranks (lo, hi) of the order statistics bounding the median CI.
std::optional<std::pair<std::size_t, std::size_t>> median_ci_ranks(std::size_t n, double level = 0.95);

struct ScanMetrics {
  std::string scan_id;
  std::optional<double> assd_mm;
  std::optional<double> masd_mm;
  std::optional<double> hd95_mm;
  double dice = 0;
  std::vector<double> distances;  // pooled directed distances, for histograms
};

struct MethodResults {
  std::string method;
  bool refined = false;
  std::vector<ScanMetrics> scans;
};

struct Aggregate {
  std::size_t n = 0;
  std::optional<double> median;
  std::optional<double> lo;
  std::optional<double> hi;
};

enum class Target { Air, Full };

// Binary mask used for a target: label 1 for Air, any label for Full.
BinaryMask target_mask(const LabelMap& lm, Target t);

// Per-scan metric trio + Dice. With `refine`, predictions first go through
// remove_small_islands(island_min_voxels).
MethodResults evaluate(const std::string& method, const std::map<std::string, BinaryMask>& preds,
                       const std::map<std::string, BinaryMask>& refs, bool refine, const PipelineConfig& cfg);

// File-backed variant: <dir>/<scan_id>.nii[.gz] label maps, loaded one scan
// at a time. Scans missing from either directory are skipped.
MethodResults evaluate_dirs(const std::string& method, const std::filesystem::path& pred_dir,
                            const std::filesystem::path& ref_dir, Target target, bool refine,
                            const PipelineConfig& cfg);

nlohmann::json method_results_to_json(const MethodResults& m, bool with_distances = false);
MethodResults method_results_from_json(const nlohmann::json& j);

// Island filtering of a predicted label map: foreground components smaller
// than island_min_voxels are cleared, surviving voxels keep their labels.
LabelMap refine_labels(const LabelMap& lm, const PipelineConfig& cfg);

struct MetricsReport {
  std::vector<MethodResults> methods;
  std::vector<std::string> common_scans;
  // Keyed by (method, refined) then metric name ("hd95", "assd", "masd", "dice").
  std::map<std::pair<std::string, bool>, std::map<std::string, Aggregate>> aggregates;
};

// Aggregates over the scans present in every MethodResults.
MetricsReport build_report(std::vector<MethodResults> methods);

nlohmann::json report_to_json(const MetricsReport& report);
// Table layout: one row per method; raw and refined HD95/ASSD as
// "median [lo, hi]".
std::string report_table_csv(const MetricsReport& report);
std::string report_per_scan_csv(const MetricsReport& report);
// Histogram rows: method,refined,scan_id,bin_lo_mm,bin_hi_mm,count.
std::string report_histogram_csv(const MetricsReport& report, double bin_width_mm);

}  // namespace hqcolon
