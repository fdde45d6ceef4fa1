#include "hqcolon/review.hpp"

#include <cmath>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "hqcolon/nifti.hpp"

namespace hqcolon {

namespace fs = std::filesystem;

Image8 render_slice(const Volume& v, const LabelMap* labels, int axis, std::int64_t index,
                    std::pair<double, double> window) {
  const Grid& g = v.grid;
  if (axis < 0 || axis > 2) throw Error(ErrorCode::InvalidArgument, fmt::format("axis must be 0, 1 or 2, got {}", axis));
  if (index < 0 || index >= g.dims[static_cast<std::size_t>(axis)])
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("index {} outside [0, {}) on axis {}", index, g.dims[static_cast<std::size_t>(axis)], axis));
  if (labels) require_same_shape(g, labels->grid, "slice overlay");

  const std::int64_t w = axis == 0 ? g.ny() : g.nx();
  const std::int64_t h = axis == 2 ? g.ny() : g.nz();
  Image8 img(w, h, labels ? 3 : 1);
  for (std::int64_t row = 0; row < h; ++row)
    for (std::int64_t col = 0; col < w; ++col) {
      Index3 p{};
      if (axis == 2) p = {col, row, index};
      if (axis == 1) p = {col, index, g.nz() - 1 - row};
      if (axis == 0) p = {index, col, g.nz() - 1 - row};
      const std::uint8_t gray = window_hu(v.at(p[0], p[1], p[2]), window);
      if (!labels) {
        img.at(col, row) = gray;
        continue;
      }
      const auto lab = labels->at(p[0], p[1], p[2]);
      for (int c = 0; c < 3; ++c) {
        std::uint8_t out = gray;
        if (lab == kAir || lab == kFluid) {
          const double color = (lab == kAir ? kAirColor : kFluidColor)[static_cast<std::size_t>(c)];
          out = static_cast<std::uint8_t>(std::lround((1.0 - kOverlayAlpha) * gray + kOverlayAlpha * color));
        }
        img.at(col, row, c) = out;
      }
    }
  return img;
}

struct ReviewServer::Impl {
  Manifest& manifest;
  PipelineConfig cfg;
  std::string config_hash;
  httplib::Server server;
  std::thread thread;

  // One-scan cache; the viewer scrubs through a single scan at a time.
  struct Loaded {
    std::string scan_id;
    Volume volume;
    std::optional<LabelMap> labels;
  };
  std::mutex cache_mu;
  std::shared_ptr<const Loaded> cache;

  Impl(Manifest& m, PipelineConfig c) : manifest(m), cfg(std::move(c)), config_hash(cfg.hash()) {
    // httplib's default adds SO_REUSEPORT, which would let a second server
    // share the port instead of failing.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
  }

  std::shared_ptr<const Loaded> load(const ScanRecord& r) {
    {
      std::lock_guard lock(cache_mu);
      if (cache && cache->scan_id == r.scan_id) return cache;
    }
    auto l = std::make_shared<Loaded>();
    l->scan_id = r.scan_id;
    l->volume = load_volume(r.image_path);
    std::error_code ec;
    if (!r.label_path.empty() && fs::exists(r.label_path, ec)) l->labels = load_labelmap(r.label_path);
    std::lock_guard lock(cache_mu);
    cache = l;
    return l;
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", code}, {"message", msg}}.dump(), "application/json");
  }

  static nlohmann::json list_item(const ScanRecord& r) {
    return {{"scan_id", r.scan_id},
            {"status", to_string(r.status)},
            {"position", to_string(r.position)},
            {"gender", to_string(r.gender)},
            {"verdict", r.verdict ? nlohmann::json(to_string(*r.verdict)) : nlohmann::json(nullptr)},
            {"exclusion_reason",
             r.exclusion_reason ? nlohmann::json(to_string(*r.exclusion_reason)) : nlohmann::json(nullptr)}};
  }

  void install(const std::optional<fs::path>& static_dir) {
    server.Get("/api/scans", [this](const httplib::Request&, httplib::Response& res) {
      auto items = nlohmann::json::array();
      for (const auto& r : manifest.records()) items.push_back(list_item(r));
      res.set_content(items.dump(), "application/json");
    });

    server.Get(R"(/api/scans/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = manifest.find(req.matches[1]);
      if (!r) return send_error(res, 404, "NotFound", "unknown scan");
      if (r->image_path.empty()) return send_error(res, 404, "NotFound", "scan has no image");
      try {
        const auto l = load(*r);
        auto layers = nlohmann::json::array({"image"});
        if (l->labels) {
          bool air = false, fluid = false;
          for (const auto v : l->labels->labels) {
            air |= v == kAir;
            fluid |= v == kFluid;
          }
          if (air) layers.push_back("air");
          if (fluid) layers.push_back("fluid");
        }
        const auto& g = l->volume.grid;
        res.set_content(nlohmann::json{{"scan_id", r->scan_id},
                                       {"dims", g.dims},
                                       {"spacing", g.spacing},
                                       {"layers", layers},
                                       {"record", to_json(*r)}}
                            .dump(),
                        "application/json");
      } catch (const Error& e) {
        send_error(res, 500, to_string(e.code()), e.what());
      }
    });

    server.Get(R"(/api/scans/([^/]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = manifest.find(req.matches[1]);
      if (!r) return send_error(res, 404, "NotFound", "unknown scan");
      if (r->image_path.empty()) return send_error(res, 404, "NotFound", "scan has no image");
      int axis = 2;
      std::int64_t index = 0;
      try {
        if (req.has_param("axis")) axis = std::stoi(req.get_param_value("axis"));
        if (!req.has_param("index")) return send_error(res, 400, "InvalidArgument", "index is required");
        index = std::stoll(req.get_param_value("index"));
      } catch (const std::exception&) {
        return send_error(res, 400, "InvalidArgument", "axis and index must be integers");
      }
      const auto overlay = req.has_param("overlay") ? req.get_param_value("overlay") : std::string("none");
      if (overlay != "none" && overlay != "labels")
        return send_error(res, 400, "InvalidArgument", "overlay must be none or labels");
      try {
        const auto l = load(*r);
        const LabelMap* labels = nullptr;
        if (overlay == "labels") {
          if (!l->labels) return send_error(res, 404, "NotFound", "scan has no label map");
          labels = &*l->labels;
        }
        const auto png = encode_png(render_slice(l->volume, labels, axis, index, cfg.windowing_hu));
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      } catch (const Error& e) {
        send_error(res, e.code() == ErrorCode::InvalidArgument ? 400 : 500, to_string(e.code()), e.what());
      }
    });

    server.Post(R"(/api/scans/([^/]+)/verdict)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!manifest.find(id)) return send_error(res, 404, "NotFound", "unknown scan");
      Verdict v{};
      std::string note;
      try {
        const auto body = nlohmann::json::parse(req.body);
        v = parse_verdict(body.at("verdict").get<std::string>());
        note = body.value("note", "");
      } catch (const std::exception& e) {
        return send_error(res, 400, "InvalidArgument", e.what());
      }
      try {
        const auto updated = manifest.record_verdict(id, v, note, config_hash);
        res.set_content(to_json(updated).dump(), "application/json");
      } catch (const Error& e) {
        send_error(res, e.code() == ErrorCode::InvalidArgument ? 409 : 500, to_string(e.code()), e.what());
      }
    });

    if (static_dir) server.set_mount_point("/", static_dir->string());
  }
};

ReviewServer::ReviewServer(Manifest& manifest, PipelineConfig cfg, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(manifest, std::move(cfg))) {
  impl_->install(static_dir);
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw Error(ErrorCode::PortUnavailable, fmt::format("cannot bind {}", host));
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorCode::PortUnavailable, fmt::format("cannot bind {}:{}", host, port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ReviewServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace hqcolon
