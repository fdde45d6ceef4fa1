// Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any
// criterion fails.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "hqcolon/air_segmenter.hpp"
#include "hqcolon/dataset_prep.hpp"
#include "hqcolon/fluid_post.hpp"
#include "hqcolon/manifest.hpp"
#include "hqcolon/metrics.hpp"
#include "hqcolon/morphology.hpp"
#include "hqcolon/pipeline.hpp"
#include "oracles.hpp"
#include "phantoms.hpp"

using namespace hqcolon;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = seconds_since(t0);
  if (!o.pass) ++failures;
  std::printf("%s %s (%.2fs)%s%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.empty() ? "" : ": ",
              o.detail.c_str());
  std::fflush(stdout);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hqcolon_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string normalized_manifest(const fs::path& manifest, const fs::path& out_dir) {
  std::string text;
  for (const auto& e : Manifest::read_events(manifest)) text += without_timestamp(e).dump() + "\n";
  const auto from = out_dir.string();
  for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += 5) text.replace(pos, from.size(), "<OUT>");
  return text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome region_growing() {
  Outcome o;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::int64_t> side(1, 20);
  std::uniform_real_distribution<double> density(0.15, 0.75);
  int volumes = 0;
  std::size_t mismatched = 0;
  while (volumes < 150) {
    const Grid g({side(rng), side(rng), side(rng)}, {1, 1, 1});
    const auto m = oracle::random_mask(g, density(rng), rng);
    if (m.empty()) continue;
    std::size_t i = std::uniform_int_distribution<std::size_t>(0, m.bits.size() - 1)(rng);
    while (!m.bits[i]) i = (i + 1) % m.bits.size();
    for (const int conn : {6, 18, 26}) {
      const auto got = region_grow(m, g.coord(i), conn);
      const auto want = oracle::flood_fill(m, g.coord(i), conn);
      for (std::size_t k = 0; k < got.bits.size(); ++k) mismatched += got.bits[k] != want.bits[k];
    }
    ++volumes;
  }
  o.require(mismatched == 0, fmt::format("{} mismatched voxels", mismatched));
  o.detail = o.pass ? fmt::format("{} volumes x 3 connectivities, 0 mismatched voxels", volumes) : o.detail;
  return o;
}

Outcome connectivity() {
  Outcome o;
  const Grid g({3, 3, 3}, {1, 1, 1});
  int checked = 0;
  for (const auto& d : oracle::offsets(26)) {
    BinaryMask m(g);
    m.set(1, 1, 1);
    m.set(1 + d[0], 1 + d[1], 1 + d[2]);
    const auto l1 = std::abs(d[0]) + std::abs(d[1]) + std::abs(d[2]);
    o.require(connected_components(m, 26).count() == 1, "26-connectivity split a pair");
    o.require(connected_components(m, 6).count() == (l1 == 1 ? 1u : 2u), "6-connectivity count wrong");
    o.require(connected_components(m, 18).count() == (l1 <= 2 ? 1u : 2u), "18-connectivity count wrong");
    if (l1 == 3) {
      o.require(region_grow(m, {1, 1, 1}, 26).count() == 2, "corner pair not grown at 26");
      o.require(region_grow(m, {1, 1, 1}, 6).count() == 1, "corner pair grown at 6");
    }
    ++checked;
  }
  o.require(checked == 26, "offset enumeration incomplete");
  if (o.pass) o.detail = "all 26 offsets";
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<std::int64_t> side(2, 12);
  std::uniform_real_distribution<double> sp(0.3, 3.0);
  int pairs = 0;
  double worst = 0;
  while (pairs < 80) {
    const Grid g({side(rng), side(rng), side(rng)}, {sp(rng), sp(rng), sp(rng)});
    const auto a = oracle::random_blobs(g, rng), b = oracle::random_blobs(g, rng);
    if (a.empty() || b.empty()) continue;
    const auto got = surface_distances(a, b);
    const auto want = oracle::surface_metrics(a, b);
    worst = std::max({worst, std::abs(got.assd_mm - want.assd), std::abs(got.masd_mm - want.masd),
                      std::abs(got.hd95_mm - want.hd95)});
    const auto same = surface_distances(a, a);
    o.require(same.assd_mm == 0 && same.masd_mm == 0 && same.hd95_mm == 0, "identical masks not exactly 0");
    o.require(dice(a, a) == 1.0, "identical masks Dice != 1");
    ++pairs;
  }
  o.require(worst <= 1e-9, fmt::format("max deviation {:.3g} mm", worst));
  if (o.pass) o.detail = fmt::format("{} anisotropic pairs, max deviation {:.2g} mm", pairs, worst);
  return o;
}

Outcome dilation() {
  Outcome o;
  std::mt19937_64 rng(104);
  std::uniform_int_distribution<std::int64_t> side(1, 16);
  std::uniform_real_distribution<double> density(0.005, 0.05);
  std::size_t mismatched = 0;
  for (int t = 0; t < 60; ++t) {
    const Grid g({side(rng), side(rng), side(rng)}, {1, 1, 1});
    const auto m = oracle::random_mask(g, density(rng), rng);
    for (const double r : {0.0, 1.0, 3.0, 5.0}) {
      const auto got = dilate(m, r);
      const auto want = oracle::dilate(m, r);
      for (std::size_t k = 0; k < got.bits.size(); ++k) mismatched += got.bits[k] != want.bits[k];
    }
  }
  o.require(mismatched == 0, fmt::format("{} mismatched voxels", mismatched));
  if (o.pass) o.detail = "60 masks x radii {0,1,3,5}";
  return o;
}

Outcome island_boundary() {
  Outcome o;
  const Grid g({50, 50, 12}, {1, 1, 1});
  BinaryMask m(g);
  for (std::int64_t z = 0; z < 10; ++z)
    for (std::int64_t y = 0; y < 10; ++y)
      for (std::int64_t x = 0; x < 20; ++x) {
        m.set(x, y, z);
        m.set(x, y + 25, z);
      }
  m.set(19, 34, 9, false);
  const PipelineConfig cfg;
  const auto out = remove_small_islands(m, cfg.island_min_voxels);
  o.require(out.count() == 2000, "wrong surviving voxel count");
  o.require(out.at(0, 0, 0), "2000-voxel component removed");
  o.require(!out.at(0, 25, 0), "1999-voxel component kept");
  return o;
}

Outcome end_to_end_phantom() {
  Outcome o;
  const auto p = phantom::make_colon(256);
  const auto t0 = Clock::now();
  const auto seg = segment_air(p.volume, p.cfg, "phantom");
  o.require(std::holds_alternative<AirSegmentation>(seg), "scan excluded");
  if (!o.pass) return o;
  const auto& air = std::get<AirSegmentation>(seg);
  o.require(air.seed == p.expected_seed, "unexpected seed");
  const auto air_mask = air.labels.mask_of(kAir);
  o.require(air_mask == p.truth.mask_of(kAir), "grown lumen differs from ground truth");

  const auto labels = fluid_postprocess({air_mask, p.fluid_input, Position::Supine, p.cfg});
  const auto fluid = labels.mask_of(kFluid);
  o.require(fluid == p.truth.mask_of(kFluid), "fluid differs from the pocket");
  o.require(mask_intersection(fluid, p.noise_blob).empty(), "noise blob kept");
  o.require(mask_intersection(fluid, p.satellite).empty(), "satellite kept");

  std::vector<MethodResults> methods;
  for (const auto target : {Target::Air, Target::Full}) {
    const std::map<std::string, BinaryMask> pred{{"phantom", target_mask(labels, target)}};
    const std::map<std::string, BinaryMask> ref{{"phantom", target_mask(p.truth, target)}};
    methods.push_back(evaluate(target == Target::Air ? "pipeline-Air" : "pipeline-Full", pred, ref, false, p.cfg));
  }
  const auto report = build_report(methods);
  for (const auto& [key, aggs] : report.aggregates)
    for (const char* metric : {"hd95", "assd", "masd"}) {
      const auto& a = aggs.at(metric);
      o.require(a.median.has_value() && *a.median == 0.0, fmt::format("{} {} median not 0", key.first, metric));
    }
  const double secs = seconds_since(t0);
  o.require(secs <= 60.0, fmt::format("took {:.1f}s", secs));
  if (o.pass) o.detail = fmt::format("256^3 pipeline + evaluation in {:.1f}s", secs);
  return o;
}

Outcome exclusion_funnel() {
  Outcome o;
  const auto in = fresh_dir("funnel/in");
  auto expected = phantom::write_funnel_batch(in);
  expected["valid_b"] = to_string(ExclusionReason::ExpertRejected);
  const auto cfg = phantom::funnel_config();

  std::string ref_manifest;
  std::map<std::string, std::string> ref_labels;
  int run = 0;
  for (const int workers : {1, 3, 1, 2}) {
    const auto out = fresh_dir(fmt::format("funnel/out{}", run++));
    {
      Manifest m(out / "manifest.jsonl");
      const auto s = run_pipeline({in, out, {}, {}, workers}, cfg, m);
      o.require(s.ok(), "per-scan failure");
      m.record_verdict("valid_b", Verdict::Rejected, "expert rejection");
    }
    const Manifest m(out / "manifest.jsonl");
    const auto records = m.records();
    std::map<std::string, std::string> got;
    for (const auto& r : records)
      got[r.scan_id] = r.status == ScanStatus::Included ? "included" : to_string(*r.exclusion_reason);
    o.require(got == expected, "statuses differ from construction");

    const auto funnel = report_funnel(records);
    std::size_t total = 0;
    for (const auto& [k, v] : funnel) total += v;
    o.require(total == records.size(), "funnel does not partition the batch");
    for (const auto reason : kAllExclusionReasons)
      o.require(funnel.at(to_string(reason)) == 1, fmt::format("{} count != 1", to_string(reason)));
    o.require(funnel.at("included") == 1, "included count != 1");

    std::map<std::string, std::string> labels;
    for (const auto& e : fs::directory_iterator(out / "labels")) labels[e.path().filename()] = slurp(e.path());
    const auto text = normalized_manifest(out / "manifest.jsonl", out);
    if (ref_manifest.empty()) {
      ref_manifest = text;
      ref_labels = labels;
    } else {
      o.require(text == ref_manifest, fmt::format("manifest differs with {} workers", workers));
      o.require(labels == ref_labels, fmt::format("label files differ with {} workers", workers));
    }
  }
  if (o.pass) o.detail = fmt::format("{} scans, all 8 reasons + included; 4 runs at 1/3/1/2 workers identical", expected.size());
  return o;
}

Outcome split_stratification() {
  Outcome o;
  const PipelineConfig cfg;
  std::mt19937_64 rng(108);
  const Gender genders[] = {Gender::Female, Gender::Male, Gender::Unknown};
  const Position positions[] = {Position::Supine, Position::Prone};
  for (int t = 0; t < 200; ++t) {
    std::vector<ScanRecord> recs;
    const int n = std::uniform_int_distribution<int>(1, 500)(rng);
    for (int i = 0; i < n; ++i) {
      ScanRecord r;
      r.scan_id = fmt::format("r{:04}", i);
      r.gender = genders[rng() % 3];
      r.position = positions[rng() % 2];
      if (rng() % 10 == 0) {
        r.exclude(ExclusionReason::VolumeTooSmall, "");
      } else {
        r.include();
      }
      recs.push_back(r);
    }
    const auto split = stratified_split(recs, cfg, rng());
    std::map<std::pair<Gender, Position>, std::pair<int, int>> strata;
    for (const auto& r : recs) {
      if (!r.usable()) {
        o.require(split.count(r.scan_id) == 0, "excluded scan in split");
        continue;
      }
      auto& s = strata[{r.gender, r.position}];
      ++s.first;
      s.second += split.at(r.scan_id) == Split::Train;
    }
    for (const auto& [k, s] : strata)
      o.require(std::abs(s.second - s.first * cfg.train_fraction) < 1.0, "stratum off by a scan or more");
  }
  std::vector<ScanRecord> roster;
  for (int i = 0; i < 435; ++i) {
    ScanRecord r;
    r.scan_id = fmt::format("s{:03}", i);
    r.gender = genders[i % 3];
    r.position = positions[(i / 3) % 2];
    r.include();
    roster.push_back(r);
  }
  const auto split = stratified_split(roster, cfg, 2024);
  std::size_t train = 0;
  for (const auto& [id, s] : split) train += s == Split::Train;
  o.require(train == 290 && split.size() - train == 145, fmt::format("435 -> {}/{}", train, split.size() - train));
  if (o.pass) o.detail = "200 random rosters; 435 -> 290/145";
  return o;
}

Outcome performance() {
  Outcome o;
  const Grid g({512, 512, 500}, {0.7, 0.7, 0.8});
  Volume v(g, 40);
  // Winding air tube through the seed band plus scattered air pockets.
  std::mt19937_64 rng(109);
  for (std::int64_t z = 0; z < g.nz(); ++z) {
    const double cx = 256 + 60 * std::sin(z / 40.0), cy = 256 + 40 * std::cos(z / 55.0);
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= 400) v.at(x, y, z) = -1000;
  }
  std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
  for (int k = 0; k < 2'000'000; ++k) v.values[pick(rng)] = -950;
  const PipelineConfig cfg;

  const auto t0 = Clock::now();
  const auto mask = threshold_binarize(v, cfg.air_threshold_hu);
  const auto seed = find_seed(mask, cfg);
  o.require(seed.has_value(), "no seed");
  if (!o.pass) return o;
  const auto grown = region_grow(mask, *seed, cfg.connectivity);
  const auto cc = connected_components(mask, cfg.connectivity);
  const double secs = seconds_since(t0);
  o.require(grown.count() > 0 && cc.count() > 1, "degenerate result");
  o.require(secs <= 10.0, fmt::format("took {:.2f}s", secs));
  if (o.pass) o.detail = fmt::format("threshold + grow + {} components in {:.2f}s", cc.count(), secs);
  return o;
}

}  // namespace

int main() {
  criterion("region-growing oracle equivalence", region_growing);
  criterion("connectivity semantics over all 26 offsets", connectivity);
  criterion("metric oracle equivalence", metric_oracle);
  criterion("dilation correctness", dilation);
  criterion("island-filter 1999/2000 boundary", island_boundary);
  criterion("end-to-end 256^3 phantom", end_to_end_phantom);
  criterion("exclusion funnel partition and determinism", exclusion_funnel);
  criterion("split stratification", split_stratification);
  criterion("performance 512x512x500 threshold + grow + components", performance);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
