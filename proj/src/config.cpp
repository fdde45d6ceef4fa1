#include "hqcolon/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "hqcolon/volume.hpp"

namespace hqcolon {

namespace {

[[noreturn]] void config_error(const std::string& msg) {
  throw Error(ErrorCode::ConfigError, msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (c == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

double parse_float(const std::string& key, std::string v) {
  v = trim(v);
  std::erase(v, '_');
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    config_error(fmt::format("{}: expected a number, got '{}'", key, v));
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  const double d = parse_float(key, v);
  if (!std::isfinite(d) || d != std::floor(d))
    config_error(fmt::format("{}: expected an integer, got '{}'", key, v));
  return static_cast<std::int64_t>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true") return true;
  if (t == "false") return false;
  config_error(fmt::format("{}: expected true/false, got '{}'", key, v));
}

std::pair<double, double> parse_pair(const std::string& key, const std::string& v) {
  auto t = trim(v);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']')
    config_error(fmt::format("{}: expected [lo, hi], got '{}'", key, v));
  t = t.substr(1, t.size() - 2);
  const auto comma = t.find(',');
  if (comma == std::string::npos)
    config_error(fmt::format("{}: expected two elements, got '{}'", key, v));
  std::string rest = trim(t.substr(comma + 1));
  if (!rest.empty() && rest.back() == ',') rest.pop_back();
  return {parse_float(key, t.substr(0, comma)), parse_float(key, rest)};
}

std::string fmt_double(double d) {
  if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", d);
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field int_field(T PipelineConfig::*member) {
  return {[member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<T>(parse_int(k, v));
          },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double PipelineConfig::*member) {
  return {[member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_float(k, v);
          },
          [member](const PipelineConfig& c) { return fmt_double(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"air_threshold_hu", double_field(&PipelineConfig::air_threshold_hu)},
      {"connectivity", int_field(&PipelineConfig::connectivity)},
      {"seed_band_halfwidth_px", int_field(&PipelineConfig::seed_band_halfwidth_px)},
      {"seed_z_lo", int_field(&PipelineConfig::seed_z_lo)},
      {"seed_z_hi", int_field(&PipelineConfig::seed_z_hi)},
      {"volume_min_cm3", double_field(&PipelineConfig::volume_min_cm3)},
      {"volume_max_cm3", double_field(&PipelineConfig::volume_max_cm3)},
      {"mask_dilation_voxels", double_field(&PipelineConfig::mask_dilation_voxels)},
      {"fluid_min_component_voxels", int_field(&PipelineConfig::fluid_min_component_voxels)},
      {"fluid_surface_dist_mm", double_field(&PipelineConfig::fluid_surface_dist_mm)},
      {"gravity_slab_halfwidth_slices",
       int_field(&PipelineConfig::gravity_slab_halfwidth_slices)},
      {"island_min_voxels", int_field(&PipelineConfig::island_min_voxels)},
      {"slices_per_scan", int_field(&PipelineConfig::slices_per_scan)},
      {"export_size_px", int_field(&PipelineConfig::export_size_px)},
      {"train_fraction", double_field(&PipelineConfig::train_fraction)},
      {"hd_percentile", double_field(&PipelineConfig::hd_percentile)},
      {"min_axial_slices", int_field(&PipelineConfig::min_axial_slices)},
      {"max_axial_slices", int_field(&PipelineConfig::max_axial_slices)},
      {"min_inplane_px", int_field(&PipelineConfig::min_inplane_px)},
      {"smoothing_sigma_voxels", double_field(&PipelineConfig::smoothing_sigma_voxels)},
      {"sagittal_max_gap_voxels", int_field(&PipelineConfig::sagittal_max_gap_voxels)},
      {"gravity_inplane_radius_voxels",
       double_field(&PipelineConfig::gravity_inplane_radius_voxels)},
      {"rolling_dice_window", int_field(&PipelineConfig::rolling_dice_window)},
      {"windowing_hu",
       {[](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.windowing_hu = parse_pair(k, v);
        },
        [](const PipelineConfig& c) {
          return fmt::format("[{}, {}]", fmt_double(c.windowing_hu.first),
                             fmt_double(c.windowing_hu.second));
        }}},
      {"masked_fill_hu", double_field(&PipelineConfig::masked_fill_hu)},
      {"hd_pooled_percentile",
       {[](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.hd_pooled_percentile = parse_bool(k, v);
        },
        [](const PipelineConfig& c) {
          return std::string(c.hd_pooled_percentile ? "true" : "false");
        }}},
  };
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) config_error(msg);
  };
  require(connectivity == 6 || connectivity == 18 || connectivity == 26,
          "connectivity must be 6, 18 or 26");
  require(seed_band_halfwidth_px >= 0, "seed_band_halfwidth_px must be >= 0");
  require(seed_z_lo >= 0 && seed_z_lo < seed_z_hi, "need 0 <= seed_z_lo < seed_z_hi");
  require(volume_min_cm3 > 0 && volume_min_cm3 < volume_max_cm3,
          "need 0 < volume_min_cm3 < volume_max_cm3");
  require(mask_dilation_voxels >= 0, "mask_dilation_voxels must be >= 0");
  require(fluid_min_component_voxels > 0, "fluid_min_component_voxels must be > 0");
  require(fluid_surface_dist_mm > 0, "fluid_surface_dist_mm must be > 0");
  require(gravity_slab_halfwidth_slices >= 0, "gravity_slab_halfwidth_slices must be >= 0");
  require(island_min_voxels > 0, "island_min_voxels must be > 0");
  require(slices_per_scan > 0, "slices_per_scan must be > 0");
  require(export_size_px > 0, "export_size_px must be > 0");
  require(train_fraction > 0 && train_fraction < 1, "train_fraction must be in (0, 1)");
  require(hd_percentile > 0 && hd_percentile <= 100, "hd_percentile must be in (0, 100]");
  require(min_axial_slices > 0 && min_axial_slices <= max_axial_slices,
          "need 0 < min_axial_slices <= max_axial_slices");
  require(min_inplane_px > 0, "min_inplane_px must be > 0");
  require(smoothing_sigma_voxels >= 0, "smoothing_sigma_voxels must be >= 0");
  require(sagittal_max_gap_voxels >= 0, "sagittal_max_gap_voxels must be >= 0");
  require(gravity_inplane_radius_voxels > 0, "gravity_inplane_radius_voxels must be > 0");
  require(rolling_dice_window > 0, "rolling_dice_window must be > 0");
  require(windowing_hu.first < windowing_hu.second, "windowing_hu must be [lo, hi] with lo < hi");
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) config_error(fmt::format("unknown config key '{}'", key));
  it->second.set(*this, key, value);
}

std::string PipelineConfig::dump() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

std::string PipelineConfig::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char c : dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

std::map<std::string, std::string> parse_toml_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') config_error(fmt::format("line {}: bad table header", lineno));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      config_error(fmt::format("line {}: expected key = value", lineno));
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"')
      key = key.substr(1, key.size() - 2);
    if (key.empty() || value.empty())
      config_error(fmt::format("line {}: empty key or value", lineno));
    if (!kv.emplace(key, value).second)
      config_error(fmt::format("line {}: duplicate key '{}'", lineno, key));
  }
  return kv;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error(fmt::format("cannot read config file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig cfg;
  for (const auto& [k, v] : parse_toml_kv(ss.str())) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace hqcolon
