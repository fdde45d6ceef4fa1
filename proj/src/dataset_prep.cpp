#include "hqcolon/dataset_prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <tuple>

#include <fmt/format.h>

#include "hqcolon/image2d.hpp"
#include "hqcolon/morphology.hpp"
#include "hqcolon/nifti.hpp"

namespace hqcolon {

namespace fs = std::filesystem;

Volume prepare_masked_image(const Volume& v, const BinaryMask& coarse_mask, const PipelineConfig& cfg) {
  require_same_shape(v.grid, coarse_mask.grid, "prepare_masked_image");
  const auto keep = dilate(coarse_mask, cfg.mask_dilation_voxels);
  const auto fill = static_cast<std::int16_t>(std::clamp(cfg.masked_fill_hu, -32768.0, 32767.0));
  Volume out = v;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (!keep.bits[i]) out.values[i] = fill;
  return out;
}

std::vector<std::int64_t> select_annotation_slices(const BinaryMask& air, std::int64_t count,
                                                   std::uint64_t rng_seed) {
  const Grid& g = air.grid;
  const std::size_t plane = static_cast<std::size_t>(g.nx() * g.ny());
  std::vector<std::int64_t> candidates;
  for (std::int64_t z = 0; z < g.nz(); ++z) {
    const auto* p = air.bits.data() + static_cast<std::size_t>(z) * plane;
    if (std::any_of(p, p + plane, [](std::uint8_t b) { return b != 0; })) candidates.push_back(z);
  }
  const auto k = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(std::max<std::int64_t>(count, 0)));
  std::mt19937_64 rng(rng_seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::string slice_file_stem(const std::string& scan_id, std::int64_t z) {
  return fmt::format("{}_z{}", scan_id, z);
}

SliceExport export_annotation_slices(const Volume& v, const BinaryMask& air, const PipelineConfig& cfg,
                                     std::uint64_t rng_seed, const std::string& scan_id,
                                     const fs::path& out_dir) {
  require_same_shape(v.grid, air.grid, "export_annotation_slices");
  SliceExport out;
  out.indices = select_annotation_slices(air, cfg.slices_per_scan, rng_seed);
  if (out.indices.empty())
    throw Error(ErrorCode::NoAirSlices, fmt::format("{}: no axial slice contains air", scan_id));
  if (static_cast<std::int64_t>(out.indices.size()) < cfg.slices_per_scan)
    out.warning = fmt::format("{}: only {} air slices available, {} requested", scan_id, out.indices.size(),
                              cfg.slices_per_scan);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  for (const auto z : out.indices) {
    const auto img = axial_slice_resized(v, z, cfg.export_size_px, cfg.export_size_px, cfg.windowing_hu);
    const auto path = out_dir / (slice_file_stem(scan_id, z) + ".png");
    write_png(img, path);
    out.files.push_back(path);
  }
  return out;
}

BinaryMask import_fluid_prediction(const std::string& scan_id, const fs::path& dir, const Grid& grid) {
  for (const char* ext : {"_fluid.nii.gz", "_fluid.nii"}) {
    const auto p = dir / (scan_id + ext);
    if (fs::exists(p)) {
      auto m = load_mask(p);
      require_same_shape(grid, m.grid, "fluid prediction");
      return m;
    }
  }
  BinaryMask out(grid);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  const std::regex pattern(R"(^(.*)_z(\d+)\.png$)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch match;
    const auto name = entry.path().filename().string();
    if (!std::regex_match(name, match, pattern) || match[1].str() != scan_id) continue;
    const std::int64_t z = std::stoll(match[2].str());
    if (z < 0 || z >= grid.nz()) continue;
    const auto img = read_png_gray(entry.path());
    for (std::int64_t y = 0; y < grid.ny(); ++y) {
      const auto v = std::min<std::int64_t>(
          img.height - 1, static_cast<std::int64_t>((static_cast<double>(y) + 0.5) * img.height / grid.ny()));
      for (std::int64_t x = 0; x < grid.nx(); ++x) {
        const auto u = std::min<std::int64_t>(
            img.width - 1, static_cast<std::int64_t>((static_cast<double>(x) + 0.5) * img.width / grid.nx()));
        if (img.at(u, v) >= 128) out.set(x, y, z);
      }
    }
  }
  return out;
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

SplitAssignment stratified_split(const std::vector<ScanRecord>& records, const PipelineConfig& cfg,
                                 std::uint64_t rng_seed) {
  std::map<std::pair<Gender, Position>, std::vector<std::string>> strata;
  for (const auto& r : records)
    if (r.usable()) strata[{r.gender, r.position}].push_back(r.scan_id);

  struct Quota {
    std::size_t n_train;
    double remainder;
  };
  std::vector<Quota> quota;
  std::size_t total = 0, assigned = 0;
  for (auto& [key, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    const double exact = static_cast<double>(ids.size()) * cfg.train_fraction;
    const auto base = static_cast<std::size_t>(std::floor(exact + 1e-9));
    quota.push_back({base, exact - static_cast<double>(base)});
    total += ids.size();
    assigned += base;
  }
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total) * cfg.train_fraction));
  // Largest remainders take the leftover train slots; ties go to the earlier stratum.
  std::vector<std::size_t> order(quota.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quota[a].remainder > quota[b].remainder + 1e-12; });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
    if (quota[order[i]].remainder <= 1e-9) break;
    ++quota[order[i]].n_train;
    ++assigned;
  }

  SplitAssignment out;
  std::mt19937_64 rng(rng_seed);
  std::size_t s = 0;
  for (auto& [key, ids] : strata) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = i < quota[s].n_train ? Split::Train : Split::Test;
    ++s;
  }
  return out;
}

nlohmann::json split_to_json(const SplitAssignment& split, std::uint64_t rng_seed, double train_fraction) {
  nlohmann::json assignments = nlohmann::json::object();
  for (const auto& [id, s] : split) assignments[id] = to_string(s);
  return {{"seed", rng_seed}, {"train_fraction", train_fraction}, {"assignments", assignments}};
}

SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment out;
  for (const auto& [id, s] : j.at("assignments").items()) {
    const auto name = s.get<std::string>();
    if (name != "train" && name != "test")
      throw Error(ErrorCode::InvalidArgument, fmt::format("split for {} must be train or test", id));
    out[id] = name == "train" ? Split::Train : Split::Test;
  }
  return out;
}

LabelMap labels_for_experiment(const LabelMap& lm, const TrainingLayoutOptions& opts) {
  LabelMap out = lm;
  for (auto& v : out.labels) {
    if (opts.experiment == Experiment::Air) {
      v = v == kAir ? 1 : 0;
    } else if (!opts.keep_fluid_class) {
      v = v != 0 ? 1 : 0;
    }
  }
  return out;
}

TrainingLayoutSummary export_training_layout(const std::vector<ScanRecord>& records, const SplitAssignment& split,
                                             const fs::path& out_dir, const TrainingLayoutOptions& opts) {
  std::vector<const ScanRecord*> train, test;
  for (const auto& r : records) {
    if (!r.usable()) continue;
    const auto it = split.find(r.scan_id);
    if (it == split.end()) continue;
    (it->second == Split::Train ? train : test).push_back(&r);
    if (it->second == Split::Train && (r.label_path.empty() || !fs::exists(r.label_path)))
      throw Error(ErrorCode::MissingLabel, fmt::format("train scan {} has no label map", r.scan_id));
  }

  TrainingLayoutSummary summary;
  summary.root = out_dir / opts.dataset_name;
  for (const char* sub : {"imagesTr", "labelsTr", "imagesTs"}) {
    std::error_code ec;
    fs::create_directories(summary.root / sub, ec);
    if (ec)
      throw Error(ErrorCode::UnwritablePath,
                  fmt::format("{}: {}", (summary.root / sub).string(), ec.message()));
  }

  auto image_of = [&](const ScanRecord& r) {
    const auto& p = opts.masked_images ? r.masked_image_path : r.image_path;
    if (p.empty())
      throw Error(ErrorCode::MissingLabel,
                  fmt::format("scan {} has no {} image", r.scan_id, opts.masked_images ? "masked" : "raw"));
    return load_volume(p);
  };
  for (const auto* r : train) {
    const auto image = image_of(*r);
    const auto labels = load_labelmap(r->label_path);
    require_same_shape(image.grid, labels.grid, "training pair");
    save_volume(image, summary.root / "imagesTr" / (r->scan_id + "_0000.nii.gz"));
    save_labelmap(labels_for_experiment(labels, opts), summary.root / "labelsTr" / (r->scan_id + ".nii.gz"));
  }
  for (const auto* r : test) save_volume(image_of(*r), summary.root / "imagesTs" / (r->scan_id + "_0000.nii.gz"));

  nlohmann::json label_names;
  if (opts.experiment == Experiment::Air) {
    label_names = {{"background", 0}, {"air", 1}};
  } else if (opts.keep_fluid_class) {
    label_names = {{"background", 0}, {"air", 1}, {"fluid", 2}};
  } else {
    label_names = {{"background", 0}, {"colon", 1}};
  }
  const nlohmann::json descriptor = {
      {"name", opts.dataset_name},
      {"channel_names", {{"0", "CT"}}},
      {"labels", label_names},
      {"numTraining", train.size()},
      {"numTest", test.size()},
      {"file_ending", ".nii.gz"},
  };
  std::ofstream f(summary.root / "dataset.json");
  if (!f) throw Error(ErrorCode::UnwritablePath, "cannot write dataset.json");
  f << descriptor.dump(2) << "\n";
  summary.num_training = train.size();
  summary.num_test = test.size();
  return summary;
}

}  // namespace hqcolon
