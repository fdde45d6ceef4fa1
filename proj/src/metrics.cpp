#include "hqcolon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "hqcolon/morphology.hpp"
#include "hqcolon/nifti.hpp"
#include "morphology_detail.hpp"

namespace hqcolon {

namespace fs = std::filesystem;

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::MetricUndefined, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

// Distances from every set voxel of `from_boundary` to the nearest set voxel
// of `to_boundary`, in raster order.
std::vector<double> directed(const BinaryMask& from_boundary, const BinaryMask& to_boundary,
                             const detail::Box& box) {
  const auto d2 = detail::squared_distance_box(to_boundary, box, to_boundary.grid.spacing);
  const Dims ext = box.extent();
  std::vector<double> out;
  std::size_t o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::uint8_t* row = from_boundary.bits.data() + from_boundary.grid.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < ext[0]; ++x, ++o)
        if (row[x]) out.push_back(std::sqrt(d2[o]));
    }
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

SurfaceDistanceResult surface_distances(const BinaryMask& a, const BinaryMask& b, double percentile, bool pooled) {
  require_same_shape(a.grid, b.grid, "surface_distances");
  const auto box_a = detail::bounding_box(a);
  const auto box_b = detail::bounding_box(b);
  if (box_a.empty() || box_b.empty())
    throw Error(ErrorCode::MetricUndefined, "surface distances need two non-empty masks");
  const auto box = box_a.merged(box_b);
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);

  SurfaceDistanceResult r;
  r.a_to_b = directed(ba, bb, box);
  r.b_to_a = directed(bb, ba, box);
  const double sum_ab = std::accumulate(r.a_to_b.begin(), r.a_to_b.end(), 0.0);
  const double sum_ba = std::accumulate(r.b_to_a.begin(), r.b_to_a.end(), 0.0);
  r.assd_mm = (sum_ab + sum_ba) / static_cast<double>(r.a_to_b.size() + r.b_to_a.size());
  r.masd_mm = 0.5 * (mean(r.a_to_b) + mean(r.b_to_a));
  if (pooled) {
    std::vector<double> all = r.a_to_b;
    all.insert(all.end(), r.b_to_a.begin(), r.b_to_a.end());
    r.hd95_mm = percentile_linear(std::move(all), percentile);
  } else {
    r.hd95_mm = std::max(percentile_linear(r.a_to_b, percentile), percentile_linear(r.b_to_a, percentile));
  }
  return r;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.grid, b.grid, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i] != 0;
    nb += b.bits[i] != 0;
    both += a.bits[i] && b.bits[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Series rolling_dice(const Series& series, std::int64_t window) {
  if (window < 1) throw Error(ErrorCode::InvalidArgument, "rolling window must be >= 1");
  Series out;
  out.reserve(series.size());
  double sum = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i].second;
    if (i >= static_cast<std::size_t>(window)) sum -= series[i - static_cast<std::size_t>(window)].second;
    const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out.emplace_back(series[i].first, sum / static_cast<double>(n));
  }
  return out;
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw Error(ErrorCode::MetricUndefined, "median of an empty sample");
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  return n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

std::optional<std::pair<std::size_t, std::size_t>> median_ci_ranks(std::size_t n, double level) {
  if (n == 0) return std::nullopt;
  const double tail = (1.0 - level) / 2.0;
  // cdf(k) = P(B <= k) for B ~ binomial(n, 1/2), accumulated in log space.
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  const double log_n_fact = std::lgamma(static_cast<double>(n) + 1.0);
  double cdf = 0;
  std::size_t lo = 0;  // largest rank l with P(B <= l - 1) <= tail
  for (std::size_t k = 0; k < n; ++k) {
    const double kk = static_cast<double>(k);
    cdf += std::exp(log_n_fact - std::lgamma(kk + 1.0) - std::lgamma(static_cast<double>(n) - kk + 1.0) + log_half_n);
    if (cdf <= tail) {
      lo = k + 1;
    } else {
      break;
    }
  }
  if (lo == 0) return std::nullopt;
  return std::make_pair(lo, n - lo + 1);
}

MedianCI median_ci(std::vector<double> samples, double level) {
  const auto ranks = median_ci_ranks(samples.size(), level);
  if (!ranks)
    throw Error(ErrorCode::CIUndefined,
                fmt::format("{} samples are too few for a {:.0f}% order-statistic CI", samples.size(), level * 100));
  std::sort(samples.begin(), samples.end());
  MedianCI ci;
  ci.median = median(samples);
  ci.lo = samples[ranks->first - 1];
  ci.hi = samples[ranks->second - 1];
  return ci;
}

BinaryMask target_mask(const LabelMap& lm, Target t) {
  return t == Target::Air ? lm.mask_of(kAir) : lm.foreground();
}

namespace {

ScanMetrics score(const std::string& id, const BinaryMask& pred_in, const BinaryMask& ref, bool refine,
                  const PipelineConfig& cfg) {
  const BinaryMask pred = refine ? remove_small_islands(pred_in, cfg.island_min_voxels, cfg.connectivity) : pred_in;
  ScanMetrics s;
  s.scan_id = id;
  s.dice = dice(pred, ref);
  try {
    auto r = surface_distances(pred, ref, cfg.hd_percentile, cfg.hd_pooled_percentile);
    s.assd_mm = r.assd_mm;
    s.masd_mm = r.masd_mm;
    s.hd95_mm = r.hd95_mm;
    s.distances = std::move(r.a_to_b);
    s.distances.insert(s.distances.end(), r.b_to_a.begin(), r.b_to_a.end());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MetricUndefined) throw;
  }
  return s;
}

std::optional<fs::path> find_label_file(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const auto p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::string scan_id_of(const fs::path& p) {
  auto name = p.filename().string();
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.ends_with(ext)) return name.substr(0, name.size() - ext.size());
  return {};
}

}  // namespace

MethodResults evaluate(const std::string& method, const std::map<std::string, BinaryMask>& preds,
                       const std::map<std::string, BinaryMask>& refs, bool refine, const PipelineConfig& cfg) {
  MethodResults out{method, refine, {}};
  for (const auto& [id, pred] : preds) {
    const auto ref = refs.find(id);
    if (ref == refs.end()) continue;
    out.scans.push_back(score(id, pred, ref->second, refine, cfg));
  }
  return out;
}

MethodResults evaluate_dirs(const std::string& method, const fs::path& pred_dir, const fs::path& ref_dir,
                            Target target, bool refine, const PipelineConfig& cfg) {
  std::error_code ec;
  if (!fs::is_directory(pred_dir, ec))
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: not a directory", pred_dir.string()));
  std::set<std::string> ids;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (auto id = scan_id_of(e.path()); !id.empty()) ids.insert(id);
  MethodResults out{method, refine, {}};
  for (const auto& id : ids) {
    const auto ref_path = find_label_file(ref_dir, id);
    if (!ref_path) continue;
    const auto pred = target_mask(load_labelmap(*find_label_file(pred_dir, id)), target);
    const auto ref = target_mask(load_labelmap(*ref_path), target);
    out.scans.push_back(score(id, pred, ref, refine, cfg));
  }
  return out;
}

nlohmann::json method_results_to_json(const MethodResults& m, bool with_distances) {
  auto scans = nlohmann::json::array();
  for (const auto& s : m.scans) {
    nlohmann::json j = {{"scan_id", s.scan_id},
                        {"assd_mm", s.assd_mm ? nlohmann::json(*s.assd_mm) : nlohmann::json(nullptr)},
                        {"masd_mm", s.masd_mm ? nlohmann::json(*s.masd_mm) : nlohmann::json(nullptr)},
                        {"hd95_mm", s.hd95_mm ? nlohmann::json(*s.hd95_mm) : nlohmann::json(nullptr)},
                        {"dice", s.dice}};
    if (with_distances) j["distances"] = s.distances;
    scans.push_back(std::move(j));
  }
  return {{"method", m.method}, {"refined", m.refined}, {"scans", scans}};
}

MethodResults method_results_from_json(const nlohmann::json& j) {
  MethodResults m;
  m.method = j.at("method").get<std::string>();
  m.refined = j.at("refined").get<bool>();
  auto get = [](const nlohmann::json& s, const char* key) -> std::optional<double> {
    if (!s.contains(key) || s[key].is_null()) return std::nullopt;
    return s[key].get<double>();
  };
  for (const auto& s : j.at("scans")) {
    ScanMetrics sm;
    sm.scan_id = s.at("scan_id").get<std::string>();
    sm.assd_mm = get(s, "assd_mm");
    sm.masd_mm = get(s, "masd_mm");
    sm.hd95_mm = get(s, "hd95_mm");
    sm.dice = s.at("dice").get<double>();
    if (s.contains("distances")) sm.distances = s["distances"].get<std::vector<double>>();
    m.scans.push_back(std::move(sm));
  }
  return m;
}

LabelMap refine_labels(const LabelMap& lm, const PipelineConfig& cfg) {
  const auto keep = remove_small_islands(lm.foreground(), cfg.island_min_voxels, cfg.connectivity);
  LabelMap out = lm;
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    if (!keep.bits[i]) out.labels[i] = kBackground;
  return out;
}

MetricsReport build_report(std::vector<MethodResults> methods) {
  MetricsReport report;
  report.methods = std::move(methods);
  std::map<std::string, std::size_t> seen;
  for (const auto& m : report.methods)
    for (const auto& s : m.scans) ++seen[s.scan_id];
  for (const auto& [id, count] : seen)
    if (count == report.methods.size()) report.common_scans.push_back(id);
  const std::set<std::string> common(report.common_scans.begin(), report.common_scans.end());

  for (const auto& m : report.methods) {
    std::map<std::string, std::vector<double>> samples;
    for (const auto& s : m.scans) {
      if (!common.contains(s.scan_id)) continue;
      if (s.hd95_mm) samples["hd95"].push_back(*s.hd95_mm);
      if (s.assd_mm) samples["assd"].push_back(*s.assd_mm);
      if (s.masd_mm) samples["masd"].push_back(*s.masd_mm);
      samples["dice"].push_back(s.dice);
    }
    auto& agg = report.aggregates[{m.method, m.refined}];
    for (const char* metric : {"hd95", "assd", "masd", "dice"}) {
      Aggregate a;
      const auto& v = samples[metric];
      a.n = v.size();
      if (!v.empty()) a.median = median(v);
      if (median_ci_ranks(v.size())) {
        const auto ci = median_ci(v);
        a.lo = ci.lo;
        a.hi = ci.hi;
      }
      agg[metric] = a;
    }
  }
  return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string cell(const std::optional<Aggregate>& a) {
  if (!a || !a->median) return "NA";
  if (!a->lo) return fmt::format("{:.2f} [NA]", *a->median);
  return fmt::format("{:.2f} [{:.2f}, {:.2f}]", *a->median, *a->lo, *a->hi);
}

std::string num(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : "NA"; }

}  // namespace

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["common_scans"] = report.common_scans;
  j["aggregates"] = nlohmann::json::array();
  for (const auto& [key, metrics] : report.aggregates) {
    nlohmann::json row = {{"method", key.first}, {"refined", key.second}};
    for (const auto& [name, a] : metrics)
      row[name] = {{"n", a.n}, {"median", opt(a.median)}, {"ci_lo", opt(a.lo)}, {"ci_hi", opt(a.hi)}};
    j["aggregates"].push_back(row);
  }
  j["per_scan"] = nlohmann::json::array();
  for (const auto& m : report.methods)
    for (const auto& s : m.scans)
      j["per_scan"].push_back({{"method", m.method},
                               {"refined", m.refined},
                               {"scan_id", s.scan_id},
                               {"assd_mm", opt(s.assd_mm)},
                               {"masd_mm", opt(s.masd_mm)},
                               {"hd95_mm", opt(s.hd95_mm)},
                               {"dice", s.dice}});
  return j;
}

std::string report_table_csv(const MetricsReport& report) {
  std::vector<std::string> order;
  for (const auto& m : report.methods)
    if (std::find(order.begin(), order.end(), m.method) == order.end()) order.push_back(m.method);
  std::string out = "method,raw_hd95,raw_assd,refined_hd95,refined_assd\n";
  auto get = [&](const std::string& method, bool refined, const char* metric) -> std::optional<Aggregate> {
    const auto it = report.aggregates.find({method, refined});
    if (it == report.aggregates.end()) return std::nullopt;
    return it->second.at(metric);
  };
  for (const auto& method : order)
    out += fmt::format("{},\"{}\",\"{}\",\"{}\",\"{}\"\n", method, cell(get(method, false, "hd95")),
                       cell(get(method, false, "assd")), cell(get(method, true, "hd95")),
                       cell(get(method, true, "assd")));
  return out;
}

std::string report_per_scan_csv(const MetricsReport& report) {
  std::string out = "method,refined,scan_id,hd95_mm,assd_mm,masd_mm,dice\n";
  for (const auto& m : report.methods)
    for (const auto& s : m.scans)
      out += fmt::format("{},{},{},{},{},{},{:.6f}\n", m.method, m.refined ? 1 : 0, s.scan_id, num(s.hd95_mm),
                         num(s.assd_mm), num(s.masd_mm), s.dice);
  return out;
}

std::string report_histogram_csv(const MetricsReport& report, double bin_width_mm) {
  if (!(bin_width_mm > 0)) throw Error(ErrorCode::InvalidArgument, "histogram bin width must be > 0");
  std::string out = "method,refined,scan_id,bin_lo_mm,bin_hi_mm,count\n";
  for (const auto& m : report.methods)
    for (const auto& s : m.scans) {
      std::map<std::int64_t, std::size_t> bins;
      for (const double d : s.distances) ++bins[static_cast<std::int64_t>(std::floor(d / bin_width_mm))];
      for (const auto& [b, count] : bins)
        out += fmt::format("{},{},{},{:.4f},{:.4f},{}\n", m.method, m.refined ? 1 : 0, s.scan_id,
                           static_cast<double>(b) * bin_width_mm, static_cast<double>(b + 1) * bin_width_mm, count);
    }
  return out;
}

}  // namespace hqcolon
