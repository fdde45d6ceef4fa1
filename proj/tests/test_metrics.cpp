#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <random>
#include <sstream>

#include "hqcolon/metrics.hpp"
#include "hqcolon/morphology.hpp"
#include "oracles.hpp"

using namespace hqcolon;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no hqcolon::Error thrown");
  return ErrorCode::InvalidArgument;
}

BinaryMask shifted(const BinaryMask& m, Index3 d) {
  BinaryMask out(m.grid);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i]) {
      const auto p = m.grid.coord(i);
      out.set(p[0] + d[0], p[1] + d[1], p[2] + d[2]);
    }
  return out;
}

BinaryMask box(const Grid& g, Index3 lo, Index3 hi) {
  BinaryMask m(g);
  for (auto z = lo[2]; z <= hi[2]; ++z)
    for (auto y = lo[1]; y <= hi[1]; ++y)
      for (auto x = lo[0]; x <= hi[0]; ++x) m.set(x, y, z);
  return m;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("surface distances match the all-pairs oracle") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::int64_t> side(2, 12);
  std::uniform_real_distribution<double> sp(0.4, 2.5);
  int pairs = 0;
  while (pairs < 60) {
    const Grid g({side(rng), side(rng), side(rng)}, {sp(rng), sp(rng), sp(rng)});
    const auto a = oracle::random_blobs(g, rng);
    const auto b = oracle::random_blobs(g, rng);
    if (a.empty() || b.empty()) continue;
    const auto got = surface_distances(a, b);
    const auto want = oracle::surface_metrics(a, b);
    CHECK(std::abs(got.assd_mm - want.assd) <= 1e-9);
    CHECK(std::abs(got.masd_mm - want.masd) <= 1e-9);
    CHECK(std::abs(got.hd95_mm - want.hd95) <= 1e-9);
    ++pairs;
  }
}

TEST_CASE("surface distance examples") {
  const Grid g({12, 12, 12}, {1, 1, 1});
  BinaryMask a(g), b(g);
  a.set(1, 1, 1);
  b.set(1, 1, 6);
  const auto r = surface_distances(a, b);
  CHECK(r.assd_mm == 5.0);
  CHECK(r.masd_mm == 5.0);
  CHECK(r.hd95_mm == 5.0);

  const auto cube = box(g, {2, 2, 2}, {4, 4, 4});
  CHECK(boundary_voxels(cube).count() == 26);
  const auto same = surface_distances(cube, cube);
  CHECK(same.assd_mm == 0);
  CHECK(same.masd_mm == 0);
  CHECK(same.hd95_mm == 0);

  CHECK(code_of([&] { surface_distances(BinaryMask(g), b); }) == ErrorCode::MetricUndefined);
  CHECK(code_of([&] { surface_distances(a, BinaryMask(Grid({12, 12, 11}, {1, 1, 1}))); }) ==
        ErrorCode::DimsMismatch);
}

TEST_CASE("surface distance properties") {
  std::mt19937_64 rng(32);
  const Grid g({14, 14, 14}, {0.8, 1.1, 1.7});
  for (int t = 0; t < 25; ++t) {
    // Blobs confined to the interior so a shift stays inside the grid.
    BinaryMask a(g), b(g);
    const Grid inner({8, 8, 8}, g.spacing);
    const auto ia = oracle::random_blobs(inner, rng), ib = oracle::random_blobs(inner, rng);
    for (std::size_t i = 0; i < ia.bits.size(); ++i) {
      const auto p = inner.coord(i);
      if (ia.bits[i]) a.set(p[0] + 3, p[1] + 3, p[2] + 3);
      if (ib.bits[i]) b.set(p[0] + 3, p[1] + 3, p[2] + 3);
    }
    const auto ab = surface_distances(a, b), ba = surface_distances(b, a);
    CHECK(ab.assd_mm == doctest::Approx(ba.assd_mm));
    CHECK(ab.masd_mm == doctest::Approx(ba.masd_mm));
    CHECK(ab.hd95_mm == doctest::Approx(ba.hd95_mm));

    const Index3 d{-2, 3, 1};
    const auto moved = surface_distances(shifted(a, d), shifted(b, d));
    CHECK(moved.assd_mm == doctest::Approx(ab.assd_mm));
    CHECK(moved.masd_mm == doctest::Approx(ab.masd_mm));
    CHECK(moved.hd95_mm == doctest::Approx(ab.hd95_mm));

    CHECK(dice(a, b) == doctest::Approx(dice(b, a)));
    CHECK(dice(a, a) == 1.0);
    if (!(a == b)) CHECK(dice(a, b) < 1.0);

    // Equal boundary sizes make MASD and ASSD coincide.
    const auto c = shifted(a, {1, 0, 0});
    const auto ac = surface_distances(a, c);
    REQUIRE(boundary_voxels(a).count() == boundary_voxels(c).count());
    CHECK(ac.masd_mm == doctest::Approx(ac.assd_mm).epsilon(1e-12));
  }
}

TEST_CASE("pooled HD variant uses the pooled percentile") {
  std::mt19937_64 rng(33);
  const Grid g({10, 10, 10}, {1, 1, 1});
  for (int t = 0; t < 10; ++t) {
    const auto a = oracle::random_blobs(g, rng), b = oracle::random_blobs(g, rng);
    const auto r = surface_distances(a, b, 95.0, true);
    auto pooled = r.a_to_b;
    pooled.insert(pooled.end(), r.b_to_a.begin(), r.b_to_a.end());
    CHECK(r.hd95_mm == doctest::Approx(oracle::percentile(pooled, 95.0)));
  }
  CHECK(percentile_linear({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile_linear({7}, 95) == 7);
}

TEST_CASE("dice examples") {
  const Grid g({4, 2, 1}, {1, 1, 1});
  BinaryMask a(g), b(g);
  CHECK(dice(a, b) == 1.0);
  for (std::int64_t x = 0; x < 4; ++x) a.set(x, 0, 0);
  CHECK(dice(a, b) == 0.0);
  b.set(0, 0, 0);
  b.set(1, 0, 0);
  b.set(0, 1, 0);
  b.set(1, 1, 0);
  CHECK(dice(a, b) == 0.5);
}

TEST_CASE("rolling dice") {
  CHECK(rolling_dice({{0, 0.0}, {1, 1.0}}, 2) == Series{{0, 0.0}, {1, 0.5}});
  Series constant;
  for (int i = 0; i < 20; ++i) constant.emplace_back(i, 0.9);
  for (const auto& [i, v] : rolling_dice(constant, 5)) CHECK(v == doctest::Approx(0.9));

  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0, 1);
  for (const std::int64_t w : {1, 3, 7, 50}) {
    Series s;
    for (int i = 0; i < 120; ++i) s.emplace_back(i * 2, u(rng));
    const auto r = rolling_dice(s, w);
    REQUIRE(r.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t from = i + 1 >= static_cast<std::size_t>(w) ? i + 1 - static_cast<std::size_t>(w) : 0;
      double sum = 0;
      for (std::size_t j = from; j <= i; ++j) sum += s[j].second;
      CHECK(r[i].first == s[i].first);
      CHECK(r[i].second == doctest::Approx(sum / static_cast<double>(i + 1 - from)));
    }
  }
  CHECK(code_of([] { rolling_dice({}, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("median CI ranks equal the exact binomial ranks") {
  for (std::size_t n = 1; n <= 500; ++n) {
    CAPTURE(n);
    CHECK(median_ci_ranks(n) == oracle::median_ci_ranks_95(n));
  }
  CHECK(median_ci_ranks(100) == std::pair<std::size_t, std::size_t>{40, 61});
  CHECK_FALSE(median_ci_ranks(5).has_value());
  CHECK(median_ci_ranks(6) == std::pair<std::size_t, std::size_t>{1, 6});
}

TEST_CASE("median CI examples") {
  std::vector<double> s;
  for (int i = 1; i <= 100; ++i) s.push_back(i);
  std::shuffle(s.begin(), s.end(), std::mt19937_64(5));
  const auto ci = median_ci(s);
  CHECK(ci.median == 50.5);
  CHECK(ci.lo == 40);
  CHECK(ci.hi == 61);

  const auto flat = median_ci(std::vector<double>(9, 2.5));
  CHECK(flat.median == 2.5);
  CHECK(flat.lo == 2.5);
  CHECK(flat.hi == 2.5);
  CHECK(code_of([] { median_ci({1, 2, 3, 4, 5}); }) == ErrorCode::CIUndefined);
}

TEST_CASE("evaluate: exact predictions and refinement of a distant island") {
  const Grid g({40, 40, 30}, {0.7, 0.7, 1.0});
  std::map<std::string, BinaryMask> refs, exact, noisy;
  for (int i = 0; i < 8; ++i) {
    const auto id = "s" + std::to_string(i);
    const auto m = box(g, {5, 5, 2}, {5 + 12 + i, 20, 25});  // >= 2000 voxels
    refs[id] = m;
    exact[id] = m;
    noisy[id] = mask_union(m, box(g, {32, 32, 20}, {36, 36, 23}));  // 100-voxel island
  }
  const PipelineConfig cfg;
  const auto e = evaluate("NN-Air", exact, refs, false, cfg);
  for (const auto& s : e.scans) {
    CHECK(*s.hd95_mm == 0);
    CHECK(*s.assd_mm == 0);
    CHECK(s.dice == 1);
  }
  const auto raw = evaluate("NN-Air", noisy, refs, false, cfg);
  CHECK(*raw.scans[0].assd_mm > 0);
  CHECK(raw.scans[0].dice < 1);
  const auto refined = evaluate("NN-Air", noisy, refs, true, cfg);
  for (std::size_t i = 0; i < refined.scans.size(); ++i) {
    CHECK(refined.scans[i].hd95_mm == e.scans[i].hd95_mm);
    CHECK(refined.scans[i].assd_mm == e.scans[i].assd_mm);
    CHECK(refined.scans[i].dice == 1);
  }
  CHECK(refined.refined);

  // An empty prediction leaves distances undefined but still scores Dice.
  std::map<std::string, BinaryMask> empty{{"s0", BinaryMask(g)}};
  const auto u = evaluate("m", empty, refs, false, cfg);
  REQUIRE(u.scans.size() == 1);
  CHECK_FALSE(u.scans[0].hd95_mm.has_value());
  CHECK(u.scans[0].dice == 0);
}

TEST_CASE("refined label maps keep labels of surviving voxels") {
  const Grid g({30, 30, 10}, {1, 1, 1});
  LabelMap lm(g);
  for (std::int64_t z = 0; z < 10; ++z)
    for (std::int64_t y = 0; y < 15; ++y)
      for (std::int64_t x = 0; x < 15; ++x) lm.labels[g.index(x, y, z)] = y < 8 ? kAir : kFluid;
  lm.labels[g.index(25, 25, 5)] = kFluid;
  const auto out = refine_labels(lm, PipelineConfig{});
  CHECK(out.at(25, 25, 5) == 0);
  CHECK(out.at(3, 3, 3) == kAir);
  CHECK(out.at(3, 12, 3) == kFluid);
}

TEST_CASE("report has one row per method and round-trips as JSON") {
  const Grid g({20, 20, 20}, {1, 1, 1});
  std::mt19937_64 rng(35);
  std::map<std::string, BinaryMask> refs;
  for (int i = 0; i < 7; ++i) refs["s" + std::to_string(i)] = box(g, {3, 3, 3}, {12, 12, 6 + i});
  const char* names[] = {"NN-Air", "Mask-NN-Air", "TS-Air", "NN-Full", "Mask-NN-Full", "TS-Full"};
  std::vector<MethodResults> methods;
  PipelineConfig cfg;
  cfg.island_min_voxels = 5;
  for (const char* name : names) {
    std::map<std::string, BinaryMask> preds;
    for (const auto& [id, m] : refs) preds[id] = shifted(m, {static_cast<std::int64_t>(rng() % 3), 0, 0});
    if (std::string(name) == "TS-Full") preds.erase("s6");  // not common to all methods
    for (const bool refine : {false, true}) methods.push_back(evaluate(name, preds, refs, refine, cfg));
  }
  const auto report = build_report(methods);
  CHECK(report.common_scans.size() == 6);
  const auto table = report_table_csv(report);
  CHECK(lines(table) == 7);
  CHECK(table.rfind("method,raw_hd95,raw_assd,refined_hd95,refined_assd\n", 0) == 0);
  for (const char* name : names) CHECK(table.find(std::string("\n") + name + ",") != std::string::npos);
  const auto& agg = report.aggregates.at({"NN-Air", false}).at("hd95");
  CHECK(agg.n == 6);
  CHECK(agg.lo.has_value());
  CHECK(*agg.lo <= *agg.median);
  CHECK(*agg.median <= *agg.hi);

  CHECK(lines(report_per_scan_csv(report)) == 1 + 10 * 7 + 2 * 6);
  const auto j = report_to_json(report);
  CHECK(j.is_object());

  for (const auto& m : methods) {
    const auto back = method_results_from_json(method_results_to_json(m, true));
    CHECK(back.method == m.method);
    CHECK(back.refined == m.refined);
    REQUIRE(back.scans.size() == m.scans.size());
    for (std::size_t i = 0; i < m.scans.size(); ++i) {
      CHECK(back.scans[i].scan_id == m.scans[i].scan_id);
      CHECK(back.scans[i].hd95_mm == m.scans[i].hd95_mm);
      CHECK(back.scans[i].assd_mm == m.scans[i].assd_mm);
      CHECK(back.scans[i].dice == m.scans[i].dice);
      CHECK(back.scans[i].distances == m.scans[i].distances);
    }
  }
  const auto hist = report_histogram_csv(build_report({method_results_from_json(method_results_to_json(methods[0], true))}), 1.0);
  CHECK(hist.rfind("method,refined,scan_id,bin_lo_mm,bin_hi_mm,count\n", 0) == 0);
  std::size_t total = 0;
  std::istringstream in(hist);
  std::string row;
  std::getline(in, row);
  while (std::getline(in, row)) total += std::stoul(row.substr(row.rfind(',') + 1));
  std::size_t expect = 0;
  for (const auto& s : methods[0].scans) expect += s.distances.size();
  CHECK(total == expect);
}
