#include "hqcolon/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

namespace hqcolon {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum Datatype : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_INT8 = 256,
  DT_UINT16 = 512,
  DT_UINT32 = 768,
  DT_INT64 = 1024,
  DT_UINT64 = 1280,
};

int datatype_bytes(std::int16_t dt) {
  switch (dt) {
    case DT_UINT8: case DT_INT8: return 1;
    case DT_INT16: case DT_UINT16: return 2;
    case DT_INT32: case DT_UINT32: case DT_FLOAT32: return 4;
    case DT_FLOAT64: case DT_INT64: case DT_UINT64: return 8;
    default: return 0;
  }
}

struct GzFile {
  gzFile f = nullptr;
  GzFile(const std::filesystem::path& p, const char* mode) : f(gzopen(p.c_str(), mode)) {}
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
  int close() {
    const int rc = gzclose(f);
    f = nullptr;
    return rc;
  }
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: no such file", path.string()));
  GzFile in(path, "rb");
  if (!in.f) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: cannot open", path.string()));
  std::vector<std::uint8_t> buf;
  constexpr unsigned kChunk = 1u << 24;
  for (;;) {
    const auto old = buf.size();
    buf.resize(old + kChunk);
    const int n = gzread(in.f, buf.data() + old, kChunk);
    if (n < 0) {
      int errnum = 0;
      const char* msg = gzerror(in.f, &errnum);
      throw Error(ErrorCode::UnreadableFile,
                  fmt::format("{}: decompression failed ({})", path.string(), msg));
    }
    buf.resize(old + static_cast<std::size_t>(n));
    if (n == 0) break;
  }
  // A gzip stream cut short reads as EOF without error; gzclose reports it.
  if (in.close() != Z_OK)
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: truncated gzip stream", path.string()));
  return buf;
}

class HeaderReader {
 public:
  HeaderReader(const std::uint8_t* p, bool swap) : p_(p), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, p_ + offset, sizeof(T));
    if (swap_ && sizeof(T) > 1) v = byteswap(v);
    return v;
  }

  template <typename T>
  static T byteswap(T v) {
    std::array<std::uint8_t, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }

 private:
  const std::uint8_t* p_;
  bool swap_;
};

struct Header {
  std::array<std::int64_t, 3> dims{};
  Spacing spacing{};
  Affine affine{};
  std::int16_t datatype = 0;
  std::size_t vox_offset = 0;
  double slope = 1.0;
  double inter = 0.0;
  bool swap = false;
};

double det3(const Affine& a) {
  return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
         a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
         a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

Header parse_header(const std::vector<std::uint8_t>& buf, const std::filesystem::path& path) {
  if (buf.size() < static_cast<std::size_t>(kHeaderSize))
    throw Error(ErrorCode::UnreadableFile,
                fmt::format("{}: file too short for a NIfTI header", path.string()));
  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, buf.data(), 4);
  Header h;
  if (sizeof_hdr == kHeaderSize) {
    h.swap = false;
  } else if (HeaderReader::byteswap(sizeof_hdr) == kHeaderSize) {
    h.swap = true;
  } else if (sizeof_hdr == 540 || HeaderReader::byteswap(sizeof_hdr) == 540) {
    throw Error(ErrorCode::UnsupportedFormat, fmt::format("{}: NIfTI-2 is not supported", path.string()));
  } else {
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: not a NIfTI-1 file", path.string()));
  }
  const HeaderReader r(buf.data(), h.swap);
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0)
    throw Error(ErrorCode::UnsupportedFormat,
                fmt::format("{}: only single-file NIfTI-1 (magic n+1) is supported", path.string()));

  const auto ndim = r.get<std::int16_t>(40);
  if (ndim < 1 || ndim > 7)
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: bad dim[0]={}", path.string(), ndim));
  for (int i = 0; i < 3; ++i) {
    const auto d = i < ndim ? r.get<std::int16_t>(42 + 2 * i) : std::int16_t{1};
    if (d < 1) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: bad dim {}", path.string(), d));
    h.dims[i] = d;
  }
  for (int i = 3; i < ndim; ++i)
    if (r.get<std::int16_t>(42 + 2 * i) > 1)
      throw Error(ErrorCode::UnsupportedFormat,
                  fmt::format("{}: only 3D volumes are supported", path.string()));

  h.datatype = r.get<std::int16_t>(70);
  if (datatype_bytes(h.datatype) == 0)
    throw Error(ErrorCode::UnsupportedFormat,
                fmt::format("{}: unsupported datatype {}", path.string(), h.datatype));

  const auto vox_offset = r.get<float>(108);
  if (!(vox_offset >= kHeaderSize))
    throw Error(ErrorCode::UnreadableFile, fmt::format("{}: bad vox_offset", path.string()));
  h.vox_offset = static_cast<std::size_t>(vox_offset);

  const auto slope = r.get<float>(112);
  if (std::isfinite(slope) && slope != 0.0f) {
    h.slope = slope;
    const auto inter = r.get<float>(116);
    h.inter = std::isfinite(inter) ? inter : 0.0;
  }

  const auto qform_code = r.get<std::int16_t>(252);
  const auto sform_code = r.get<std::int16_t>(254);
  std::array<double, 3> pixdim{};
  for (int i = 0; i < 3; ++i) pixdim[i] = std::fabs(r.get<float>(80 + 4 * i));

  if (sform_code > 0) {
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 4; ++col)
        h.affine[row][col] = r.get<float>(280 + 16 * row + 4 * col);
  } else if (qform_code > 0) {
    const double qfac = r.get<float>(76) < 0 ? -1.0 : 1.0;
    Spacing sp;
    for (int i = 0; i < 3; ++i) sp[i] = pixdim[i] > 0 ? pixdim[i] : 1.0;
    h.affine = nifti_detail::quaternion_to_affine(
        r.get<float>(256), r.get<float>(260), r.get<float>(264), qfac, sp,
        {r.get<float>(268), r.get<float>(272), r.get<float>(276)});
  } else {
    throw Error(ErrorCode::MissingOrientation,
                fmt::format("{}: neither sform nor qform is set", path.string()));
  }
  if (std::fabs(det3(h.affine)) < 1e-12)
    throw Error(ErrorCode::MissingOrientation, fmt::format("{}: singular affine", path.string()));

  for (int i = 0; i < 3; ++i) {
    double norm = 0;
    for (int row = 0; row < 3; ++row) norm += h.affine[row][i] * h.affine[row][i];
    h.spacing[i] = pixdim[i] > 0 ? pixdim[i] : std::sqrt(norm);
  }

  const std::size_t n = static_cast<std::size_t>(h.dims[0] * h.dims[1] * h.dims[2]);
  const std::size_t need = h.vox_offset + n * static_cast<std::size_t>(datatype_bytes(h.datatype));
  if (buf.size() < need)
    throw Error(ErrorCode::UnreadableFile,
                fmt::format("{}: truncated voxel data ({} of {} bytes)", path.string(),
                            buf.size(), need));
  return h;
}

// Decodes stored voxel values, applies scl_slope/inter and hands each value
// to `convert`.
template <typename Out, typename Convert>
std::vector<Out> decode(const std::vector<std::uint8_t>& buf, const Header& h, Convert convert) {
  const std::size_t n = static_cast<std::size_t>(h.dims[0] * h.dims[1] * h.dims[2]);
  std::vector<Out> out(n);
  const std::uint8_t* src = buf.data() + h.vox_offset;
  const bool scaled = !(h.slope == 1.0 && h.inter == 0.0);
  auto run = [&](auto tag) {
    using T = decltype(tag);
    const HeaderReader r(src, h.swap);
    for (std::size_t i = 0; i < n; ++i) {
      const T raw = r.get<T>(i * sizeof(T));
      if (scaled) {
        out[i] = convert(static_cast<double>(raw) * h.slope + h.inter, i);
      } else {
        out[i] = convert(raw, i);
      }
    }
  };
  switch (h.datatype) {
    case DT_UINT8: run(std::uint8_t{}); break;
    case DT_INT8: run(std::int8_t{}); break;
    case DT_INT16: run(std::int16_t{}); break;
    case DT_UINT16: run(std::uint16_t{}); break;
    case DT_INT32: run(std::int32_t{}); break;
    case DT_UINT32: run(std::uint32_t{}); break;
    case DT_INT64: run(std::int64_t{}); break;
    case DT_UINT64: run(std::uint64_t{}); break;
    case DT_FLOAT32: run(float{}); break;
    case DT_FLOAT64: run(double{}); break;
    default: break;
  }
  return out;
}

template <typename T>
std::vector<T> reorient(std::vector<T> data, const Dims& stored,
                        const nifti_detail::Reorientation& ro) {
  if (ro.perm == std::array<int, 3>{0, 1, 2} && !ro.flip[0] && !ro.flip[1] && !ro.flip[2])
    return data;
  const std::array<std::int64_t, 3> stride{1, stored[0], stored[0] * stored[1]};
  Dims out_dims;
  std::array<std::int64_t, 3> step{};
  std::int64_t base = 0;
  for (int i = 0; i < 3; ++i) {
    const int j = ro.perm[i];
    out_dims[i] = stored[j];
    step[i] = ro.flip[i] ? -stride[j] : stride[j];
    if (ro.flip[i]) base += (stored[j] - 1) * stride[j];
  }
  std::vector<T> out(data.size());
  std::size_t o = 0;
  for (std::int64_t z = 0; z < out_dims[2]; ++z) {
    for (std::int64_t y = 0; y < out_dims[1]; ++y) {
      std::int64_t s = base + z * step[2] + y * step[1];
      for (std::int64_t x = 0; x < out_dims[0]; ++x, s += step[0]) out[o++] = data[static_cast<std::size_t>(s)];
    }
  }
  return out;
}

Grid canonical_grid(const Header& h, const nifti_detail::Reorientation& ro) {
  Dims dims;
  Spacing spacing;
  Affine a{};
  for (int row = 0; row < 3; ++row) a[row][3] = h.affine[row][3];
  for (int i = 0; i < 3; ++i) {
    const int j = ro.perm[i];
    dims[i] = h.dims[j];
    spacing[i] = h.spacing[j];
    const double sign = ro.flip[i] ? -1.0 : 1.0;
    for (int row = 0; row < 3; ++row) {
      a[row][i] = sign * h.affine[row][j];
      if (ro.flip[i]) a[row][3] += h.affine[row][j] * static_cast<double>(h.dims[j] - 1);
    }
  }
  return Grid(dims, spacing, a);
}

template <typename Out, typename Convert>
std::pair<Grid, std::vector<Out>> load_canonical(const std::filesystem::path& path, Convert convert) {
  const auto buf = read_all(path);
  const auto h = parse_header(buf, path);
  const auto ro = nifti_detail::canonical_reorientation(h.affine);
  auto data = reorient(decode<Out>(buf, h, convert), h.dims, ro);
  return {canonical_grid(h, ro), std::move(data)};
}

template <typename T>
void put(std::uint8_t* hdr, std::size_t offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

void write_nifti(const Grid& g, std::int16_t datatype, const void* data, std::size_t bytes,
                 const std::filesystem::path& path) {
  std::array<std::uint8_t, kVoxOffset> hdr{};
  put<std::int32_t>(hdr.data(), 0, kHeaderSize);
  put<std::int8_t>(hdr.data(), 38, 'r');
  put<std::int16_t>(hdr.data(), 40, 3);
  for (int i = 0; i < 3; ++i) put<std::int16_t>(hdr.data(), 42 + 2 * i, static_cast<std::int16_t>(g.dims[i]));
  for (int i = 4; i < 8; ++i) put<std::int16_t>(hdr.data(), 40 + 2 * i, 1);
  put<std::int16_t>(hdr.data(), 70, datatype);
  put<std::int16_t>(hdr.data(), 72, static_cast<std::int16_t>(8 * datatype_bytes(datatype)));
  const auto q = nifti_detail::affine_to_quaternion(g.affine);
  put<float>(hdr.data(), 76, static_cast<float>(q[3]));
  for (int i = 0; i < 3; ++i) put<float>(hdr.data(), 80 + 4 * i, static_cast<float>(g.spacing[i]));
  put<float>(hdr.data(), 108, static_cast<float>(kVoxOffset));
  put<float>(hdr.data(), 112, 1.0f);
  put<float>(hdr.data(), 116, 0.0f);
  put<std::uint8_t>(hdr.data(), 123, 2);  // mm
  put<std::int16_t>(hdr.data(), 252, 1);
  put<std::int16_t>(hdr.data(), 254, 1);
  put<float>(hdr.data(), 256, static_cast<float>(q[0]));
  put<float>(hdr.data(), 260, static_cast<float>(q[1]));
  put<float>(hdr.data(), 264, static_cast<float>(q[2]));
  for (int i = 0; i < 3; ++i) put<float>(hdr.data(), 268 + 4 * i, static_cast<float>(g.affine[i][3]));
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 4; ++col)
      put<float>(hdr.data(), 280 + 16 * row + 4 * col, static_cast<float>(g.affine[row][col]));
  std::memcpy(hdr.data() + 344, "n+1", 4);

  const bool gz = path.extension() == ".gz";
  GzFile out(path, gz ? "wb6" : "wbT");
  if (!out.f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: cannot open for writing", path.string()));
  auto write = [&](const void* p, std::size_t n) {
    const auto* bytes_ptr = static_cast<const std::uint8_t*>(p);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      if (gzwrite(out.f, bytes_ptr, chunk) != static_cast<int>(chunk))
        throw Error(ErrorCode::UnwritablePath, fmt::format("{}: write failed", path.string()));
      bytes_ptr += chunk;
      n -= chunk;
    }
  };
  write(hdr.data(), hdr.size());
  write(data, bytes);
  if (out.close() != Z_OK)
    throw Error(ErrorCode::UnwritablePath, fmt::format("{}: close failed", path.string()));
}

}  // namespace

namespace nifti_detail {

Reorientation canonical_reorientation(const Affine& affine) {
  // Target world directions in RAS: +x, -y, +z.
  constexpr std::array<double, 3> target_sign{1.0, -1.0, 1.0};
  std::array<std::array<double, 3>, 3> cosines{};  // [world][stored]
  for (int j = 0; j < 3; ++j) {
    double norm = 0;
    for (int row = 0; row < 3; ++row) norm += affine[row][j] * affine[row][j];
    norm = std::sqrt(norm);
    for (int row = 0; row < 3; ++row) cosines[row][j] = affine[row][j] / norm;
  }
  std::array<int, 3> perm{0, 1, 2};
  std::array<int, 3> best = perm;
  double best_score = -1;
  do {
    double score = 0;
    for (int i = 0; i < 3; ++i) score += std::fabs(cosines[i][perm[i]]);
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Reorientation ro;
  ro.perm = best;
  for (int i = 0; i < 3; ++i) ro.flip[i] = cosines[i][best[i]] * target_sign[i] < 0;
  return ro;
}

Affine quaternion_to_affine(double b, double c, double d, double qfac, const Spacing& spacing,
                            const std::array<double, 3>& offset) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double s = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= s;
    c *= s;
    d *= s;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double r[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  Affine out{};
  const double zs = qfac < 0 ? -spacing[2] : spacing[2];
  for (int row = 0; row < 3; ++row) {
    out[row][0] = r[row][0] * spacing[0];
    out[row][1] = r[row][1] * spacing[1];
    out[row][2] = r[row][2] * zs;
    out[row][3] = offset[row];
  }
  return out;
}

std::array<double, 4> affine_to_quaternion(const Affine& affine) {
  double m[3][3];
  for (int j = 0; j < 3; ++j) {
    double norm = 0;
    for (int row = 0; row < 3; ++row) norm += affine[row][j] * affine[row][j];
    norm = std::sqrt(norm);
    for (int row = 0; row < 3; ++row) m[row][j] = affine[row][j] / norm;
  }
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  double qfac = 1.0;
  if (det < 0) {
    qfac = -1.0;
    for (int row = 0; row < 3; ++row) m[row][2] = -m[row][2];
  }
  double a = m[0][0] + m[1][1] + m[2][2] + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (m[2][1] - m[1][2]) / a;
    c = 0.25 * (m[0][2] - m[2][0]) / a;
    d = 0.25 * (m[1][0] - m[0][1]) / a;
  } else {
    const double xd = 1.0 + m[0][0] - (m[1][1] + m[2][2]);
    const double yd = 1.0 + m[1][1] - (m[0][0] + m[2][2]);
    const double zd = 1.0 + m[2][2] - (m[0][0] + m[1][1]);
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (m[0][1] + m[1][0]) / b;
      d = 0.25 * (m[0][2] + m[2][0]) / b;
      a = 0.25 * (m[2][1] - m[1][2]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (m[0][1] + m[1][0]) / c;
      d = 0.25 * (m[1][2] + m[2][1]) / c;
      a = 0.25 * (m[0][2] - m[2][0]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (m[0][2] + m[2][0]) / d;
      c = 0.25 * (m[1][2] + m[2][1]) / d;
      a = 0.25 * (m[1][0] - m[0][1]) / d;
    }
    if (a < 0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  return {b, c, d, qfac};
}

}  // namespace nifti_detail

Volume load_volume(const std::filesystem::path& path) {
  auto [grid, data] = load_canonical<std::int16_t>(path, [](auto raw, std::size_t) {
    using T = decltype(raw);
    if constexpr (std::is_same_v<T, std::int16_t>) {
      return raw;
    } else {
      const double d = std::round(static_cast<double>(raw));
      if (!std::isfinite(d)) return std::int16_t{0};
      return static_cast<std::int16_t>(std::clamp(d, -32768.0, 32767.0));
    }
  });
  Volume v;
  v.grid = grid;
  v.values = std::move(data);
  return v;
}

LabelMap load_labelmap(const std::filesystem::path& path) {
  auto [grid, data] = load_canonical<std::uint8_t>(path, [&path](auto raw, std::size_t i) {
    const double d = static_cast<double>(raw);
    if (!(d == 0.0 || d == 1.0 || d == 2.0))
      throw Error(ErrorCode::InvalidLabelValue,
                  fmt::format("{}: label value {} at voxel {}; only 0,1,2 allowed", path.string(), d, i));
    return static_cast<std::uint8_t>(d);
  });
  LabelMap lm;
  lm.grid = grid;
  lm.labels = std::move(data);
  return lm;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  auto [grid, data] = load_canonical<std::uint8_t>(path, [](auto raw, std::size_t) {
    return static_cast<std::uint8_t>(static_cast<double>(raw) != 0.0);
  });
  BinaryMask m;
  m.grid = grid;
  m.bits = std::move(data);
  return m;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  std::vector<std::int16_t> le = v.values;
  if constexpr (std::endian::native == std::endian::big)
    for (auto& x : le) x = HeaderReader::byteswap(x);
  write_nifti(v.grid, DT_INT16, le.data(), le.size() * sizeof(std::int16_t), path);
}

void save_labelmap(const LabelMap& lm, const std::filesystem::path& path) {
  check_labels(lm);
  write_nifti(lm.grid, DT_UINT8, lm.labels.data(), lm.labels.size(), path);
}

void save_mask(const BinaryMask& m, const std::filesystem::path& path) {
  write_nifti(m.grid, DT_UINT8, m.bits.data(), m.bits.size(), path);
}

}  // namespace hqcolon
