#include "hqcolon/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "hqcolon/air_segmenter.hpp"
#include "hqcolon/dataset_prep.hpp"
#include "hqcolon/fluid_post.hpp"
#include "hqcolon/morphology.hpp"
#include "hqcolon/nifti.hpp"

namespace hqcolon {

namespace fs = std::filesystem;

namespace {

std::string strip_nifti_ext(const std::string& name) {
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.ends_with(ext)) return name.substr(0, name.size() - ext.size());
  return {};
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

bool is_load_error(ErrorCode c) {
  return c == ErrorCode::UnreadableFile || c == ErrorCode::UnsupportedFormat || c == ErrorCode::MissingOrientation ||
         c == ErrorCode::InvalidLabelValue;
}

ScanOutcome failure(ScanRecord r, const std::exception& e) {
  ScanOutcome o;
  o.record = std::move(r);
  o.failed = true;
  o.extra["error"] = e.what();
  return o;
}

// Shared driver for stages that walk the manifest's included scans.
template <typename Fn>
BatchSummary over_included(Manifest& manifest, const std::string& stage, const PipelineConfig& cfg, int workers,
                           Fn fn, std::optional<std::uint64_t> seed = {}) {
  std::vector<ScanRecord> todo;
  for (auto& r : manifest.records())
    if (r.usable()) todo.push_back(std::move(r));
  BatchSummary summary;
  summary.scans = todo.size();
  const auto hash = cfg.hash();
  ordered_parallel(
      todo.size(), workers,
      [&](std::size_t i) -> ScanOutcome {
        try {
          return fn(todo[i]);
        } catch (const std::exception& e) {
          return failure(todo[i], e);
        }
      },
      [&](std::size_t i, ScanOutcome o) {
        if (o.failed) ++summary.failures;
        std::optional<std::uint64_t> s;
        if (seed) s = scan_seed(*seed, todo[i].scan_id);
        manifest.append_record(o.record, stage, hash, o.outputs, s, o.extra);
      });
  return summary;
}

void append_run_start(Manifest& manifest, const std::string& stage, const PipelineConfig& cfg,
                      nlohmann::json extra) {
  ManifestEvent e;
  e.kind = "run_start";
  e.stage = stage;
  e.config_hash = cfg.hash();
  extra["config"] = cfg.dump();
  e.extra = std::move(extra);
  manifest.append(std::move(e));
}

fs::path labels_path(const fs::path& out, const std::string& id) { return out / "labels" / (id + ".nii.gz"); }

}  // namespace

std::map<std::string, RosterEntry> load_roster(const fs::path& csv) {
  std::map<std::string, RosterEntry> out;
  std::error_code ec;
  if (!fs::exists(csv, ec)) return out;
  std::ifstream f(csv);
  if (!f) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: cannot open roster", csv.string()));
  std::string line;
  std::vector<std::string> header;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(trim(c));
    if (header.empty()) {
      header = cells;
      continue;
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    if (row["scan_id"].empty())
      throw Error(ErrorCode::InvalidArgument, fmt::format("{}:{}: missing scan_id", csv.string(), lineno));
    RosterEntry e;
    if (!row["position"].empty()) e.position = parse_position(row["position"]);
    if (!row["gender"].empty()) e.gender = parse_gender(row["gender"]);
    if (!row["age"].empty()) e.age = std::stoi(row["age"]);
    out[row["scan_id"]] = e;
  }
  return out;
}

std::map<std::string, fs::path> discover_scans(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec))
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: not a directory", dir.string()));
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto id = strip_nifti_ext(entry.path().filename().string()); !id.empty()) out[id] = entry.path();
  }
  return out;
}

std::optional<fs::path> find_scan_file(const fs::path& dir, const std::string& scan_id) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (scan_id + ext);
    std::error_code ec;
    if (fs::exists(p, ec)) return p;
  }
  return std::nullopt;
}

int resolve_workers(std::optional<int> flag) {
  if (flag) {
    if (*flag < 1) throw Error(ErrorCode::ConfigError, "worker count must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("HQCOLON_WORKERS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1)
      throw Error(ErrorCode::ConfigError, fmt::format("HQCOLON_WORKERS must be a positive integer, got '{}'", env));
    return static_cast<int>(n);
  }
  return 1;
}

std::uint64_t scan_seed(std::uint64_t rng_seed, const std::string& scan_id) {
  std::uint64_t h = 1469598103934665603ULL ^ rng_seed;
  for (const unsigned char c : scan_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

ScanOutcome process_scan(const std::string& scan_id, const fs::path& image, const RosterEntry& who,
                         const RunOptions& opts, const PipelineConfig& cfg) {
  ScanOutcome o;
  ScanRecord& r = o.record;
  r.scan_id = scan_id;
  r.position = who.position;
  r.gender = who.gender;
  r.age = who.age;
  r.image_path = image.string();
  try {
    Volume v;
    try {
      v = load_volume(image);
    } catch (const Error& e) {
      if (!is_load_error(e.code())) throw;
      r.exclude(ExclusionReason::DisruptedFormat, e.what());
      return o;
    }
    if (const auto reason = validate_scan(v, cfg)) {
      r.exclude(*reason, fmt::format("dims {}x{}x{}", v.grid.nx(), v.grid.ny(), v.grid.nz()));
      return o;
    }
    auto seg = segment_air(v, cfg, scan_id);
    if (const auto* ex = std::get_if<ExclusionRecord>(&seg)) {
      r.exclude(ex->reason, ex->detail);
      return o;
    }
    auto& air = std::get<AirSegmentation>(seg);
    o.extra["seed"] = air.seed;
    o.extra["air_volume_cm3"] = air.volume_cm3;
    LabelMap labels = std::move(air.labels);
    if (opts.fluid_dir) {
      auto fluid = import_fluid_prediction(scan_id, *opts.fluid_dir, v.grid);
      o.extra["fluid_input_voxels"] = fluid.count();
      if (!fluid.empty()) {
        FluidContext ctx{labels.mask_of(kAir), std::move(fluid), r.position, cfg};
        labels = fluid_postprocess(ctx);
        o.extra["fluid_voxels"] = labels.mask_of(kFluid).count();
      }
    }
    const auto out = labels_path(opts.output_dir, scan_id);
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    save_labelmap(labels, out);
    r.label_path = out.string();
    r.include();
    o.outputs.push_back(out.string());
  } catch (const std::exception& e) {
    return failure(r, e);
  }
  return o;
}

BatchSummary run_pipeline(const RunOptions& opts, const PipelineConfig& cfg, Manifest& manifest) {
  const auto scans = discover_scans(opts.input_dir);
  const auto roster = load_roster(opts.roster_csv.value_or(opts.input_dir / "scans.csv"));
  std::vector<std::pair<std::string, fs::path>> jobs(scans.begin(), scans.end());
  append_run_start(manifest, "run", cfg,
                   {{"input_dir", opts.input_dir.string()},
                    {"output_dir", opts.output_dir.string()},
                    {"fluid_dir", opts.fluid_dir ? opts.fluid_dir->string() : ""},
                    {"scans", jobs.size()}});
  BatchSummary summary;
  summary.scans = jobs.size();
  const auto hash = cfg.hash();
  ordered_parallel(
      jobs.size(), opts.workers,
      [&](std::size_t i) {
        const auto it = roster.find(jobs[i].first);
        return process_scan(jobs[i].first, jobs[i].second, it == roster.end() ? RosterEntry{} : it->second, opts,
                            cfg);
      },
      [&](std::size_t, ScanOutcome o) {
        if (o.failed) ++summary.failures;
        manifest.append_record(o.record, "run", hash, o.outputs, std::nullopt, o.extra);
      });
  return summary;
}

BatchSummary validate_stage(const RunOptions& opts, const PipelineConfig& cfg, Manifest& manifest) {
  const auto scans = discover_scans(opts.input_dir);
  const auto roster = load_roster(opts.roster_csv.value_or(opts.input_dir / "scans.csv"));
  std::vector<std::pair<std::string, fs::path>> jobs(scans.begin(), scans.end());
  append_run_start(manifest, "validate", cfg, {{"input_dir", opts.input_dir.string()}, {"scans", jobs.size()}});
  BatchSummary summary;
  summary.scans = jobs.size();
  const auto hash = cfg.hash();
  ordered_parallel(
      jobs.size(), opts.workers,
      [&](std::size_t i) {
        ScanOutcome o;
        auto& r = o.record;
        r.scan_id = jobs[i].first;
        if (const auto it = roster.find(r.scan_id); it != roster.end()) {
          r.position = it->second.position;
          r.gender = it->second.gender;
          r.age = it->second.age;
        }
        r.image_path = jobs[i].second.string();
        try {
          const auto v = load_volume(jobs[i].second);
          if (const auto reason = validate_scan(v, cfg))
            r.exclude(*reason, fmt::format("dims {}x{}x{}", v.grid.nx(), v.grid.ny(), v.grid.nz()));
        } catch (const Error& e) {
          if (!is_load_error(e.code())) return failure(r, e);
          r.exclude(ExclusionReason::DisruptedFormat, e.what());
        } catch (const std::exception& e) {
          return failure(r, e);
        }
        return o;
      },
      [&](std::size_t, ScanOutcome o) {
        if (o.failed) ++summary.failures;
        manifest.append_record(o.record, "validate", hash, o.outputs, std::nullopt, o.extra);
      });
  return summary;
}

BatchSummary fluid_stage(const fs::path& fluid_dir, const fs::path& output_dir, const PipelineConfig& cfg,
                         int workers, Manifest& manifest) {
  append_run_start(manifest, "fluid-post", cfg, {{"fluid_dir", fluid_dir.string()}});
  return over_included(manifest, "fluid-post", cfg, workers, [&](ScanRecord r) {
    ScanOutcome o;
    if (r.label_path.empty()) throw Error(ErrorCode::MissingLabel, fmt::format("{} has no air labels", r.scan_id));
    const auto current = load_labelmap(r.label_path);
    auto fluid = import_fluid_prediction(r.scan_id, fluid_dir, current.grid);
    FluidContext ctx{current.mask_of(kAir), std::move(fluid), r.position, cfg};
    const auto labels = fluid_postprocess(ctx);
    const auto out = labels_path(output_dir, r.scan_id);
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    save_labelmap(labels, out);
    o.extra["fluid_voxels"] = labels.mask_of(kFluid).count();
    r.label_path = out.string();
    o.record = std::move(r);
    o.outputs.push_back(out.string());
    return o;
  });
}

BatchSummary prep_masks_stage(const fs::path& coarse_dir, const fs::path& output_dir, const PipelineConfig& cfg,
                              int workers, Manifest& manifest) {
  append_run_start(manifest, "prep-masks", cfg, {{"coarse_dir", coarse_dir.string()}});
  return over_included(manifest, "prep-masks", cfg, workers, [&](ScanRecord r) {
    ScanOutcome o;
    const auto coarse_path = find_scan_file(coarse_dir, r.scan_id);
    if (!coarse_path)
      throw Error(ErrorCode::MissingLabel, fmt::format("no coarse mask for {} in {}", r.scan_id, coarse_dir.string()));
    const auto v = load_volume(r.image_path);
    const auto masked = prepare_masked_image(v, load_mask(*coarse_path), cfg);
    const auto out = output_dir / "masked" / (r.scan_id + ".nii.gz");
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
    save_volume(masked, out);
    r.masked_image_path = out.string();
    o.record = std::move(r);
    o.outputs.push_back(out.string());
    return o;
  });
}

BatchSummary export_slices_stage(const fs::path& output_dir, const PipelineConfig& cfg, std::uint64_t rng_seed,
                                 int workers, Manifest& manifest) {
  append_run_start(manifest, "export-slices", cfg, {{"rng_seed", rng_seed}});
  return over_included(
      manifest, "export-slices", cfg, workers,
      [&](ScanRecord r) {
        ScanOutcome o;
        if (r.label_path.empty()) throw Error(ErrorCode::MissingLabel, fmt::format("{} has no air labels", r.scan_id));
        const auto v = load_volume(r.image_path);
        const auto air = load_labelmap(r.label_path).mask_of(kAir);
        const auto ex = export_annotation_slices(v, air, cfg, scan_seed(rng_seed, r.scan_id), r.scan_id, output_dir);
        o.extra["indices"] = ex.indices;
        if (!ex.warning.empty()) o.extra["warning"] = ex.warning;
        for (const auto& f : ex.files) o.outputs.push_back(f.string());
        o.record = std::move(r);
        return o;
      },
      rng_seed);
}

}  // namespace hqcolon
