#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "hqcolon/dataset_prep.hpp"
#include "hqcolon/image2d.hpp"
#include "hqcolon/manifest.hpp"
#include "hqcolon/nifti.hpp"
#include "hqcolon/pipeline.hpp"
#include "hqcolon/review.hpp"
#include "phantoms.hpp"

using namespace hqcolon;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hqcolon_test_orchestrator" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

// Manifest contents with timestamps dropped and the output directory
// replaced by a placeholder, so runs into different directories compare.
std::string normalized_manifest(const fs::path& manifest, const fs::path& out_dir) {
  std::string text;
  for (const auto& e : Manifest::read_events(manifest)) text += without_timestamp(e).dump() + "\n";
  replace_all(text, out_dir.string(), "<OUT>");
  return text;
}

std::map<std::string, std::string> label_files(const fs::path& out_dir) {
  std::map<std::string, std::string> files;
  if (!fs::exists(out_dir / "labels")) return files;
  for (const auto& e : fs::directory_iterator(out_dir / "labels")) files[e.path().filename()] = slurp(e.path());
  return files;
}

std::map<std::string, std::string> statuses(const Manifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& r : m.records())
    out[r.scan_id] = r.status == ScanStatus::Included ? "included" : to_string(*r.exclusion_reason);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HQCOLON_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Reference compositing, written from the documented formula.
std::uint8_t ref_window(double hu, double lo, double hi) {
  const double t = std::round((hu - lo) / (hi - lo) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(t, 0.0, 255.0));
}

std::array<std::uint8_t, 3> ref_pixel(std::int16_t hu, std::uint8_t label, std::pair<double, double> w) {
  const auto g = ref_window(hu, w.first, w.second);
  if (label == 0) return {g, g, g};
  const std::array<int, 3> color = label == 1 ? std::array<int, 3>{0, 200, 255} : std::array<int, 3>{255, 128, 0};
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>(std::lround(0.6 * g + 0.4 * color[c]));
  return out;
}

}  // namespace

TEST_CASE("manifest append and replay") {
  const auto dir = fresh_dir("manifest");
  const auto path = dir / "m.jsonl";
  {
    Manifest m(path);
    ScanRecord a;
    a.scan_id = "a";
    a.include();
    m.append_record(a, "run", "h1", {"x.nii.gz"});
    ScanRecord b;
    b.scan_id = "b";
    b.exclude(ExclusionReason::SeedNotFound, "none");
    m.append_record(b, "run", "h1");
    m.record_verdict("a", Verdict::Rejected, "leak", "h1");
    CHECK_THROWS_AS(m.record_verdict("b", Verdict::Accepted, ""), Error);
    CHECK_THROWS_AS(m.record_verdict("zz", Verdict::Accepted, ""), Error);
  }
  Manifest again(path);
  const auto recs = again.records();
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].status == ScanStatus::Excluded);
  CHECK(recs[0].exclusion_reason == ExclusionReason::ExpertRejected);
  CHECK(recs[0].verdict_note == "leak");
  CHECK(again.events().size() == 3);
  CHECK(Manifest::replay(again.events()) ==
        std::map<std::string, ScanRecord>{{"a", recs[0]}, {"b", recs[1]}});
  for (std::size_t i = 0; i < again.events().size(); ++i) CHECK(again.events()[i].seq == i + 1);

  // A half-written last line (crash mid-append) is ignored on replay.
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"seq": 3, "kind": "scan", "rec)";
  }
  {
    Manifest torn(path);
    CHECK(torn.events().size() == 3);
    CHECK(torn.records() == recs);
    torn.record_verdict("a", Verdict::Accepted, "second look");
  }
  // Appending after recovery leaves a clean log.
  Manifest healed(path);
  CHECK(healed.events().size() == 4);
  CHECK(healed.find("a")->status == ScanStatus::Included);
}

TEST_CASE("concurrent appends are serialized") {
  const auto dir = fresh_dir("concurrent");
  Manifest m(dir / "m.jsonl");
  std::vector<std::jthread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&m, t] {
      for (int i = 0; i < 25; ++i) {
        ScanRecord r;
        r.scan_id = "s" + std::to_string(t * 25 + i);
        r.include();
        m.append_record(r, "run", "h");
      }
    });
  threads.clear();
  CHECK(Manifest(dir / "m.jsonl").records().size() == 100);
  const auto events = Manifest::read_events(dir / "m.jsonl");
  for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
}

TEST_CASE("funnel buckets partition the records") {
  CHECK(report_funnel({}).at("included") == 0);
  for (const auto& [k, v] : report_funnel({})) CHECK(v == 0);
  std::vector<ScanRecord> all(4);
  for (auto& r : all) r.include();
  const auto f = report_funnel(all);
  CHECK(f.at("included") == 4);
  std::size_t nonzero = 0;
  for (const auto& [k, v] : f) nonzero += v != 0;
  CHECK(nonzero == 1);
  const auto j = funnel_to_json(f, 4);
  CHECK(j["total"] == 4);
  CHECK(j["counts"]["included"] == 4);
}

TEST_CASE("three-phantom run") {
  const auto in = fresh_dir("three/in"), out = fresh_dir("three/out");
  save_volume(phantom::tube_scan({48, 48, 60}, 2.0, 3), in / "ok.nii.gz");
  save_volume(phantom::tube_scan({48, 48, 30}, 2.0, 3), in / "short.nii.gz");
  save_volume(phantom::tube_scan({48, 48, 60}, 2.0, -1), in / "noseed.nii.gz");
  Manifest m(out / "manifest.jsonl");
  const auto s = run_pipeline({in, out, {}, {}, 1}, phantom::funnel_config(), m);
  CHECK(s.ok());
  CHECK(s.scans == 3);
  const auto f = report_funnel(m.records());
  CHECK(f.at("included") == 1);
  CHECK(f.at("DimsTooFewSlices") == 1);
  CHECK(f.at("SeedNotFound") == 1);
  std::size_t total = 0;
  for (const auto& [k, v] : f) total += v;
  CHECK(total == 3);
  CHECK(fs::exists(out / "labels" / "ok.nii.gz"));
  CHECK(m.find("ok")->label_path == (out / "labels" / "ok.nii.gz").string());
  for (const auto& r : m.records()) CHECK(r.invariants_hold());

  // Config hash is the same on every event of the run.
  const auto events = m.events();
  for (const auto& e : events) CHECK(e.config_hash == events.front().config_hash);
  CHECK(events.front().kind == "run_start");
}

TEST_CASE("empty input directory gives an empty manifest") {
  const auto in = fresh_dir("empty/in"), out = fresh_dir("empty/out");
  Manifest m(out / "manifest.jsonl");
  const auto s = run_pipeline({in, out, {}, {}, 2}, PipelineConfig{}, m);
  CHECK(s.ok());
  CHECK(s.scans == 0);
  CHECK(m.records().empty());
  CHECK_THROWS_AS(run_pipeline({in / "nope", out, {}, {}, 1}, PipelineConfig{}, m), Error);
}

TEST_CASE("funnel batch: every reason, deterministic across reruns and workers") {
  const auto in = fresh_dir("funnel/in");
  const auto expected = phantom::write_funnel_batch(in);
  const auto cfg = phantom::funnel_config();
  std::string reference_manifest;
  std::map<std::string, std::string> reference_labels;
  for (const int workers : {1, 3, 1}) {
    CAPTURE(workers);
    const auto out = fresh_dir("funnel/out" + std::to_string(workers));
    Manifest m(out / "manifest.jsonl");
    CHECK(run_pipeline({in, out, {}, {}, workers}, cfg, m).ok());
    CHECK(statuses(m) == expected);
    const auto text = normalized_manifest(out / "manifest.jsonl", out);
    const auto labels = label_files(out);
    if (reference_manifest.empty()) {
      reference_manifest = text;
      reference_labels = labels;
    } else {
      CHECK(text == reference_manifest);
      CHECK(labels == reference_labels);
    }
  }
  CHECK(reference_labels.size() == 2);
}

TEST_CASE("worker count resolution") {
  CHECK(resolve_workers(4) == 4);
  ::setenv("HQCOLON_WORKERS", "3", 1);
  CHECK(resolve_workers(std::nullopt) == 3);
  CHECK(resolve_workers(2) == 2);
  ::unsetenv("HQCOLON_WORKERS");
  CHECK(resolve_workers(std::nullopt) == 1);

  std::vector<int> seen;
  ordered_parallel(50, 4, [](std::size_t i) { return static_cast<int>(i * i); },
                   [&](std::size_t i, int v) {
                     CHECK(v == static_cast<int>(i * i));
                     seen.push_back(static_cast<int>(i));
                   });
  CHECK(seen.size() == 50);
  CHECK(std::is_sorted(seen.begin(), seen.end()));
}

TEST_CASE("rejected scans never reach the split or the training export") {
  const auto in = fresh_dir("reject/in"), out = fresh_dir("reject/out");
  for (int i = 0; i < 4; ++i)
    save_volume(phantom::tube_scan({48, 48, 60}, 2.0, 3), in / ("v" + std::to_string(i) + ".nii.gz"));
  Manifest m(out / "manifest.jsonl");
  const auto cfg = phantom::funnel_config();
  REQUIRE(run_pipeline({in, out, {}, {}, 1}, cfg, m).ok());
  m.record_verdict("v1", Verdict::Rejected, "leak");
  m.record_verdict("v2", Verdict::Accepted, "");
  const auto split = stratified_split(m.records(), cfg, 7);
  CHECK(split.size() == 3);
  CHECK(split.count("v1") == 0);
  const auto sum = export_training_layout(m.records(), split, out / "train", TrainingLayoutOptions{});
  CHECK(sum.num_training + sum.num_test == 3);
  for (const auto& sub : {"imagesTr", "imagesTs"})
    for (const auto& e : fs::directory_iterator(sum.root / sub)) CHECK(e.path().filename().string().rfind("v1_", 0) != 0);
}

TEST_CASE("review HTTP API") {
  const auto dir = fresh_dir("http");
  const Grid g({12, 10, 8}, {0.7, 0.7, 1.0});
  Volume v(g);
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> hu(-1100, 500);
  for (auto& x : v.values) x = static_cast<std::int16_t>(hu(rng));
  LabelMap lm(g);
  for (std::size_t i = 0; i < lm.labels.size(); ++i) lm.labels[i] = static_cast<std::uint8_t>(rng() % 3);
  save_volume(v, dir / "a.nii.gz");
  save_labelmap(lm, dir / "a_labels.nii.gz");

  Manifest m(dir / "manifest.jsonl");
  ScanRecord a;
  a.scan_id = "a";
  a.position = Position::Prone;
  a.image_path = (dir / "a.nii.gz").string();
  a.label_path = (dir / "a_labels.nii.gz").string();
  a.include();
  m.append_record(a, "run", "h");
  ScanRecord b;
  b.scan_id = "b";
  b.exclude(ExclusionReason::DimsTooFewSlices, "short");
  m.append_record(b, "run", "h");

  PipelineConfig cfg;
  ReviewServer server(m, cfg);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);

  SUBCASE("list and meta") {
    auto res = cli.Get("/api/scans");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto list = json::parse(res->body);
    REQUIRE(list.size() == 2);
    CHECK(list[0]["scan_id"] == "a");
    CHECK(list[0]["status"] == "included");
    CHECK(list[0]["position"] == "prone");
    CHECK(list[0]["verdict"].is_null());
    CHECK(list[1]["status"] == "excluded");

    res = cli.Get("/api/scans/a/meta");
    REQUIRE(res);
    const auto meta = json::parse(res->body);
    CHECK(meta["dims"] == json::array({12, 10, 8}));
    CHECK(meta["layers"] == json::array({"image", "air", "fluid"}));
    CHECK(cli.Get("/api/scans/zz/meta")->status == 404);
  }

  SUBCASE("slices match the reference compositing") {
    const auto w = cfg.windowing_hu;
    for (const int axis : {0, 1, 2}) {
      CAPTURE(axis);
      const std::int64_t index = 3;
      auto res = cli.Get(fmt::format("/api/scans/a/slice?axis={}&index={}&overlay=labels", axis, index));
      REQUIRE(res);
      REQUIRE(res->status == 200);
      CHECK(res->get_header_value("Content-Type") == "image/png");
      const auto img = decode_png(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
      REQUIRE(img.channels == 3);
      const std::int64_t width = axis == 0 ? g.ny() : g.nx();
      const std::int64_t height = axis == 2 ? g.ny() : g.nz();
      REQUIRE(img.width == width);
      REQUIRE(img.height == height);
      bool all = true;
      for (std::int64_t row = 0; row < height; ++row)
        for (std::int64_t col = 0; col < width; ++col) {
          std::int64_t x, y, z;
          if (axis == 2) {
            x = col, y = row, z = index;
          } else if (axis == 1) {
            x = col, y = index, z = g.nz() - 1 - row;
          } else {
            x = index, y = col, z = g.nz() - 1 - row;
          }
          const auto want = ref_pixel(v.at(x, y, z), lm.at(x, y, z), w);
          for (int c = 0; c < 3; ++c) all = all && img.at(col, row, c) == want[c];
        }
      CHECK(all);
    }
    auto res = cli.Get("/api/scans/a/slice?axis=2&index=0");
    REQUIRE(res);
    const auto gray = decode_png(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
    CHECK(gray.channels == 1);
    CHECK(gray.at(4, 5) == ref_window(v.at(4, 5, 0), w.first, w.second));

    CHECK(cli.Get("/api/scans/a/slice?axis=2&index=8")->status == 400);
    CHECK(cli.Get("/api/scans/a/slice?axis=5&index=0")->status == 400);
    CHECK(cli.Get("/api/scans/a/slice?axis=2")->status == 400);
    CHECK(cli.Get("/api/scans/a/slice?axis=x&index=0")->status == 400);
    CHECK(cli.Get("/api/scans/a/slice?axis=2&index=0&overlay=heat")->status == 400);
    CHECK(cli.Get("/api/scans/zz/slice?axis=2&index=0")->status == 404);
  }

  SUBCASE("verdicts round-trip and persist") {
    auto res = cli.Post("/api/scans/a/verdict", R"({"verdict": "accepted", "note": "ok"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["verdict"] == "accepted");
    CHECK(json::parse(cli.Get("/api/scans")->body)[0]["verdict"] == "accepted");

    res = cli.Post("/api/scans/a/verdict", R"({"verdict": "rejected", "note": "leak"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto list = json::parse(cli.Get("/api/scans")->body);
    CHECK(list[0]["status"] == "excluded");
    CHECK(list[0]["exclusion_reason"] == "ExpertRejected");
    CHECK(Manifest(dir / "manifest.jsonl").find("a")->exclusion_reason == ExclusionReason::ExpertRejected);

    CHECK(cli.Post("/api/scans/b/verdict", R"({"verdict": "accepted"})", "application/json")->status == 409);
    CHECK(cli.Post("/api/scans/zz/verdict", R"({"verdict": "accepted"})", "application/json")->status == 404);
    CHECK(cli.Post("/api/scans/a/verdict", R"({"verdict": "maybe"})", "application/json")->status == 400);
    CHECK(cli.Post("/api/scans/a/verdict", "not json", "application/json")->status == 400);
  }

  SUBCASE("a taken port is reported") {
    ReviewServer second(m, cfg);
    try {
      second.start("127.0.0.1", port);
      FAIL("second bind succeeded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::PortUnavailable);
    }
  }
  server.stop();
}

TEST_CASE("CLI exit codes") {
  const auto in = fresh_dir("cli/in"), out = fresh_dir("cli/out");
  phantom::write_funnel_batch(in);
  const auto cfg_path = out / "funnel.toml";
  {
    std::ofstream c(cfg_path);
    const auto cfg = phantom::funnel_config();
    c << cfg.dump();
  }
  const std::string common = "--config " + cfg_path.string();
  CHECK(run_cli(common + " run --input " + in.string() + " --out " + (out / "run").string()) == 0);
  CHECK(Manifest(out / "run" / "manifest.jsonl").records().size() == 9);
  CHECK(run_cli(common + " funnel --manifest " + (out / "run" / "manifest.jsonl").string()) == 0);
  CHECK(run_cli(common + " split --manifest " + (out / "run" / "manifest.jsonl").string() + " --out " +
                (out / "split.json").string()) == 0);
  CHECK(fs::exists(out / "split.json"));

  CHECK(run_cli("--set connectivity=8 run --input " + in.string() + " --out " + (out / "x").string()) == 2);
  CHECK(run_cli("--config " + (out / "missing.toml").string() + " funnel --manifest m") == 2);
  CHECK(run_cli("run --bogus") == 2);
  CHECK(run_cli("run --input " + (in / "absent").string() + " --out " + (out / "y").string()) == 1);
}

TEST_CASE("serve subcommand answers requests and stops on SIGTERM") {
  const auto dir = fresh_dir("serve");
  {
    Manifest m(dir / "manifest.jsonl");
    ScanRecord r;
    r.scan_id = "a";
    r.include();
    m.append_record(r, "run", "h");
  }
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  const auto manifest = (dir / "manifest.jsonl").string();
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[0]);
    ::execl(HQCOLON_CLI, HQCOLON_CLI, "serve", "--manifest", manifest.c_str(), "--port", "0", nullptr);
    ::_exit(127);
  }
  ::close(fds[1]);
  std::string banner;
  char c;
  while (::read(fds[0], &c, 1) == 1 && c != '\n') banner += c;
  ::close(fds[0]);
  const auto colon = banner.rfind(':');
  REQUIRE(colon != std::string::npos);
  const int port = std::stoi(banner.substr(colon + 1));
  httplib::Client cli("127.0.0.1", port);
  const auto res = cli.Get("/api/scans");
  REQUIRE(res);
  CHECK(json::parse(res->body)[0]["scan_id"] == "a");
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
