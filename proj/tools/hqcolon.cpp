// Command-line driver. Exit codes: 0 success, 1 failure, 2 configuration or
// usage error.
#include <csignal>
#include <pthread.h>
#include <signal.h>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hqcolon/config.hpp"
#include "hqcolon/dataset_prep.hpp"
#include "hqcolon/manifest.hpp"
#include "hqcolon/metrics.hpp"
#include "hqcolon/nifti.hpp"
#include "hqcolon/pipeline.hpp"
#include "hqcolon/review.hpp"

namespace fs = std::filesystem;
using namespace hqcolon;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> workers;
};

PipelineConfig make_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, fmt::format("--set expects key=value, got '{}'", kv));
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: cannot open for writing", p.string()));
  f << text;
  if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: write failed", p.string()));
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: cannot open", p.string()));
  try {
    return nlohmann::json::parse(f);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: {}", p.string(), e.what()));
  }
}

int finish(const BatchSummary& s, Manifest& m) {
  const auto records = m.records();
  std::cout << funnel_to_json(report_funnel(records), records.size()).dump(2) << "\n";
  if (!s.ok()) std::cerr << fmt::format("{} of {} scans failed; see {}\n", s.failures, s.scans, m.path().string());
  return s.ok() ? 0 : 1;
}

Target parse_target(const std::string& s) {
  if (s == "air") return Target::Air;
  if (s == "full") return Target::Full;
  throw Error(ErrorCode::ConfigError, fmt::format("target must be air or full, got '{}'", s));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT colonography annotation and evaluation pipeline"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "Config file (TOML key = value)");
  app.add_option("--set", common.overrides, "Override one config key, key=value (repeatable)");
  app.add_option("--workers", common.workers, "Worker threads (default: HQCOLON_WORKERS or 1)");

  std::string input, out, manifest_path, fluid_dir, roster, coarse_dir, split_path, experiment = "full",
                                                                               dataset_name = "Dataset001_Colon";
  std::string method, pred_dir, ref_dir, target = "full", host = "127.0.0.1", ui_dir;
  std::vector<std::string> results;
  std::uint64_t seed = 0;
  bool keep_fluid = false, masked = false, refine = false, distances = false;
  double hist_bin = 0.5;
  int port = 8080;

  auto* run = app.add_subcommand("run", "load, validate, segment air, post-process fluid, save labels");
  run->add_option("--input", input, "Directory of scans (.nii/.nii.gz)")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--fluid-dir", fluid_dir, "External fluid predictions");
  run->add_option("--roster", roster, "Roster CSV (default <input>/scans.csv)");
  run->add_option("--manifest", manifest_path, "Manifest path (default <out>/manifest.jsonl)");

  auto* validate = app.add_subcommand("validate", "format and dimension gates only");
  validate->add_option("--input", input)->required();
  validate->add_option("--manifest", manifest_path)->required();
  validate->add_option("--roster", roster);

  auto* seg = app.add_subcommand("segment-air", "air segmentation without fluid handling");
  seg->add_option("--input", input)->required();
  seg->add_option("--out", out)->required();
  seg->add_option("--roster", roster);
  seg->add_option("--manifest", manifest_path);

  auto* fluid = app.add_subcommand("fluid-post", "fluid post-processing for included scans");
  fluid->add_option("--manifest", manifest_path)->required();
  fluid->add_option("--fluid-dir", fluid_dir)->required();
  fluid->add_option("--out", out)->required();

  auto* prep = app.add_subcommand("prep-masks", "apply dilated coarse masks to included images");
  prep->add_option("--manifest", manifest_path)->required();
  prep->add_option("--coarse-dir", coarse_dir)->required();
  prep->add_option("--out", out)->required();

  auto* slices = app.add_subcommand("export-slices", "annotation PNGs for included scans");
  slices->add_option("--manifest", manifest_path)->required();
  slices->add_option("--out", out)->required();
  slices->add_option("--seed", seed);

  auto* split = app.add_subcommand("split", "stratified train/test split of included scans");
  split->add_option("--manifest", manifest_path)->required();
  split->add_option("--out", out, "Split JSON")->required();
  split->add_option("--seed", seed);

  auto* train = app.add_subcommand("export-training", "trainer directory layout");
  train->add_option("--manifest", manifest_path)->required();
  train->add_option("--split", split_path)->required();
  train->add_option("--out", out)->required();
  train->add_option("--experiment", experiment, "air or full")->check(CLI::IsMember({"air", "full"}));
  train->add_flag("--keep-fluid", keep_fluid, "full: keep fluid as label 2");
  train->add_flag("--masked", masked, "use masked images");
  train->add_option("--name", dataset_name);

  auto* ref = app.add_subcommand("refine", "island-filter predicted label maps");
  ref->add_option("--in", pred_dir)->required();
  ref->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("evaluate", "per-scan metrics against references");
  eval->add_option("--method", method)->required();
  eval->add_option("--pred", pred_dir)->required();
  eval->add_option("--ref", ref_dir)->required();
  eval->add_option("--target", target, "air or full");
  eval->add_flag("--refine", refine, "island-filter predictions first");
  eval->add_flag("--distances", distances, "keep boundary distances for histograms");
  eval->add_option("--out", out, "Results JSON")->required();

  auto* report = app.add_subcommand("report", "aggregate evaluate outputs");
  report->add_option("--results", results)->required();
  report->add_option("--out", out)->required();
  report->add_option("--hist-bin", hist_bin, "Histogram bin width in mm");

  auto* serve = app.add_subcommand("serve", "review HTTP API");
  serve->add_option("--manifest", manifest_path)->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--ui", ui_dir, "Static files served at /");

  auto* funnel = app.add_subcommand("funnel", "counts by exclusion reason");
  funnel->add_option("--manifest", manifest_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    const auto cfg = make_config(common);
    const int workers = resolve_workers(common.workers);
    RunOptions opts;
    opts.input_dir = input;
    opts.output_dir = out;
    opts.workers = workers;
    if (!roster.empty()) opts.roster_csv = roster;
    if (!fluid_dir.empty()) opts.fluid_dir = fluid_dir;

    if (run->parsed() || seg->parsed()) {
      if (seg->parsed()) opts.fluid_dir.reset();
      Manifest m(manifest_path.empty() ? fs::path(out) / "manifest.jsonl" : fs::path(manifest_path));
      return finish(run_pipeline(opts, cfg, m), m);
    }
    if (validate->parsed()) {
      Manifest m(manifest_path);
      return finish(validate_stage(opts, cfg, m), m);
    }
    if (fluid->parsed()) {
      Manifest m(manifest_path);
      return finish(fluid_stage(fluid_dir, out, cfg, workers, m), m);
    }
    if (prep->parsed()) {
      Manifest m(manifest_path);
      return finish(prep_masks_stage(coarse_dir, out, cfg, workers, m), m);
    }
    if (slices->parsed()) {
      Manifest m(manifest_path);
      return finish(export_slices_stage(out, cfg, seed, workers, m), m);
    }
    if (split->parsed()) {
      Manifest m(manifest_path);
      const auto assignment = stratified_split(m.records(), cfg, seed);
      write_text(out, split_to_json(assignment, seed, cfg.train_fraction).dump(2) + "\n");
      ManifestEvent e;
      e.kind = "stage";
      e.stage = "split";
      e.config_hash = cfg.hash();
      e.rng_seed = seed;
      e.outputs = {out};
      m.append(std::move(e));
      std::size_t n_train = 0;
      for (const auto& [id, s] : assignment) n_train += s == Split::Train;
      std::cout << fmt::format("train {} test {}\n", n_train, assignment.size() - n_train);
      return 0;
    }
    if (train->parsed()) {
      Manifest m(manifest_path);
      TrainingLayoutOptions o;
      o.experiment = experiment == "air" ? Experiment::Air : Experiment::Full;
      o.keep_fluid_class = keep_fluid;
      o.masked_images = masked;
      o.dataset_name = dataset_name;
      const auto summary = export_training_layout(m.records(), split_from_json(read_json(split_path)), out, o);
      ManifestEvent e;
      e.kind = "stage";
      e.stage = "export-training";
      e.config_hash = cfg.hash();
      e.outputs = {summary.root.string()};
      e.extra = {{"num_training", summary.num_training}, {"num_test", summary.num_test}};
      m.append(std::move(e));
      std::cout << fmt::format("{}: {} training, {} test\n", summary.root.string(), summary.num_training,
                               summary.num_test);
      return 0;
    }
    if (ref->parsed()) {
      const auto scans = discover_scans(pred_dir);
      std::vector<std::pair<std::string, fs::path>> jobs(scans.begin(), scans.end());
      std::error_code ec;
      fs::create_directories(out, ec);
      ordered_parallel(
          jobs.size(), workers,
          [&](std::size_t i) {
            save_labelmap(refine_labels(load_labelmap(jobs[i].second), cfg), fs::path(out) / (jobs[i].first + ".nii.gz"));
            return 0;
          },
          [](std::size_t, int) {});
      std::cout << fmt::format("refined {} label maps\n", jobs.size());
      return 0;
    }
    if (eval->parsed()) {
      const auto r = evaluate_dirs(method, pred_dir, ref_dir, parse_target(target), refine, cfg);
      write_text(out, method_results_to_json(r, distances).dump() + "\n");
      std::cout << fmt::format("{}: {} scans scored\n", method, r.scans.size());
      return 0;
    }
    if (report->parsed()) {
      std::vector<MethodResults> all;
      for (const auto& p : results) all.push_back(method_results_from_json(read_json(p)));
      const auto rep = build_report(std::move(all));
      const fs::path dir(out);
      write_text(dir / "report.json", report_to_json(rep).dump(2) + "\n");
      write_text(dir / "table.csv", report_table_csv(rep));
      write_text(dir / "per_scan.csv", report_per_scan_csv(rep));
      write_text(dir / "histograms.csv", report_histogram_csv(rep, hist_bin));
      std::cout << report_table_csv(rep);
      return 0;
    }
    if (serve->parsed()) {
      Manifest m(manifest_path);
      std::optional<fs::path> ui;
      if (!ui_dir.empty()) ui = ui_dir;
      // Block the stop signals before the server thread exists so it
      // inherits the mask; this thread then waits for them synchronously.
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      std::signal(SIGINT, SIG_DFL);  // an ignored signal is dropped even while blocked
      std::signal(SIGTERM, SIG_DFL);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
      ReviewServer server(m, cfg, ui);
      const int bound = server.start(host, port);
      std::cout << fmt::format("serving http://{}:{}/\n", host, bound) << std::flush;
      int sig = 0;
      sigwait(&stop_signals, &sig);
      server.stop();
      return 0;
    }
    if (funnel->parsed()) {
      Manifest m(manifest_path);
      const auto records = m.records();
      std::cout << funnel_to_json(report_funnel(records), records.size()).dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << fmt::format("error [{}]: {}\n", to_string(e.code()), e.what());
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
