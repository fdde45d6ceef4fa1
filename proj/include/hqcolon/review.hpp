#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "hqcolon/config.hpp"
#include "hqcolon/image2d.hpp"
#include "hqcolon/manifest.hpp"
#include "hqcolon/volume.hpp"

namespace hqcolon {

// Overlay compositing. Each channel of a labeled pixel is
//   out = lround((1 - kOverlayAlpha) * gray + kOverlayAlpha * color)
// where gray is the windowed HU value; unlabeled pixels keep gray in all
// three channels.
inline constexpr double kOverlayAlpha = 0.4;
inline constexpr std::array<std::uint8_t, 3> kAirColor{0, 200, 255};
inline constexpr std::array<std::uint8_t, 3> kFluidColor{255, 128, 0};

// Slice orientation (canonical axes, x = right, y = posterior, z = superior):
//   axis 2 (axial):    width nx, height ny, pixel (x, y)
//   axis 1 (coronal):  width nx, height nz, pixel (x, nz - 1 - z)
//   axis 0 (sagittal): width ny, height nz, pixel (y, nz - 1 - z)
// Returns 1-channel gray without labels, 3-channel RGB with them. Throws
// InvalidArgument for a bad axis or index.
Image8 render_slice(const Volume& v, const LabelMap* labels, int axis, std::int64_t index,
                    std::pair<double, double> window);

// HTTP API over a manifest:
//   GET  /api/scans
//   GET  /api/scans/{id}/meta
//   GET  /api/scans/{id}/slice?axis=&index=&overlay=none|labels
//   POST /api/scans/{id}/verdict   {"verdict": "accepted"|"rejected", "note": "..."}
// plus static files from `static_dir` when given.
class ReviewServer {
 public:
  ReviewServer(Manifest& manifest, PipelineConfig cfg, std::optional<std::filesystem::path> static_dir = {});
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port; throws PortUnavailable.
  int start(const std::string& host, int port);
  // Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hqcolon
