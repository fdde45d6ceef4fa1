#include "hqcolon/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "morphology_detail.hpp"

namespace hqcolon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class UnionFind {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::uint32_t> parent_;
};

// Lower envelope of parabolas w*(q - v)^2 + f[v] (Felzenszwalb & Huttenlocher).
// Infinite entries of f contribute nothing.
void edt_1d(const double* f, std::int64_t n, double w, double* out, std::vector<std::int64_t>& v,
            std::vector<double>& z) {
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + w * static_cast<double>(q * q);
    double s = -kInf;
    while (k >= 0) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      s = (fq - (f[p] + w * static_cast<double>(p * p))) / (2.0 * w * static_cast<double>(q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (j < k && z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    const double d = static_cast<double>(q - p);
    out[q] = w * d * d + f[p];
  }
}

}  // namespace

namespace detail {

Box bounding_box(const BinaryMask& m) {
  Box b;
  b.lo = {m.grid.nx(), m.grid.ny(), m.grid.nz()};
  b.hi = {0, 0, 0};
  bool any = false;
  for (std::int64_t z = 0; z < m.grid.nz(); ++z)
    for (std::int64_t y = 0; y < m.grid.ny(); ++y) {
      const std::uint8_t* row = m.bits.data() + m.grid.index(0, y, z);
      for (std::int64_t x = 0; x < m.grid.nx(); ++x) {
        if (!row[x]) continue;
        any = true;
        b.lo[0] = std::min(b.lo[0], x);
        b.hi[0] = std::max(b.hi[0], x + 1);
        b.lo[1] = std::min(b.lo[1], y);
        b.hi[1] = std::max(b.hi[1], y + 1);
        b.lo[2] = std::min(b.lo[2], z);
        b.hi[2] = std::max(b.hi[2], z + 1);
      }
    }
  if (!any) return Box{};
  return b;
}

Box Box::merged(const Box& o) const {
  if (empty()) return o;
  if (o.empty()) return *this;
  Box b;
  for (int i = 0; i < 3; ++i) {
    b.lo[i] = std::min(lo[i], o.lo[i]);
    b.hi[i] = std::max(hi[i], o.hi[i]);
  }
  return b;
}

Box Box::expanded(std::int64_t r, const Dims& dims) const {
  if (empty()) return *this;
  Box b;
  for (int i = 0; i < 3; ++i) {
    b.lo[i] = std::max<std::int64_t>(0, lo[i] - r);
    b.hi[i] = std::min<std::int64_t>(dims[i], hi[i] + r);
  }
  return b;
}

std::vector<double> squared_distance_box(const BinaryMask& m, const Box& box, const Spacing& spacing) {
  const Dims ext = box.extent();
  const std::size_t n = static_cast<std::size_t>(ext[0] * ext[1] * ext[2]);
  std::vector<double> d(n);
  std::size_t o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::uint8_t* row = m.bits.data() + m.grid.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < ext[0]; ++x) d[o++] = row[x] ? 0.0 : kInf;
    }

  std::vector<std::int64_t> v;
  std::vector<double> zb, line, out;
  const std::array<std::int64_t, 3> stride{1, ext[0], ext[0] * ext[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t len = ext[axis];
    if (len == 0) continue;
    const double w = spacing[axis] * spacing[axis];
    line.resize(static_cast<std::size_t>(len));
    out.resize(static_cast<std::size_t>(len));
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    for (std::int64_t i2 = 0; i2 < ext[a2]; ++i2)
      for (std::int64_t i1 = 0; i1 < ext[a1]; ++i1) {
        const std::int64_t base = i1 * stride[a1] + i2 * stride[a2];
        for (std::int64_t q = 0; q < len; ++q)
          line[static_cast<std::size_t>(q)] = d[static_cast<std::size_t>(base + q * stride[axis])];
        edt_1d(line.data(), len, w, out.data(), v, zb);
        for (std::int64_t q = 0; q < len; ++q)
          d[static_cast<std::size_t>(base + q * stride[axis])] = out[static_cast<std::size_t>(q)];
      }
  }
  return d;
}

}  // namespace detail

std::vector<Index3> neighbor_offsets(int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("connectivity must be 6, 18 or 26, got {}", connectivity));
  std::vector<Index3> out;
  for (std::int64_t dz = -1; dz <= 1; ++dz)
    for (std::int64_t dy = -1; dy <= 1; ++dy)
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        const auto nonzero = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (nonzero == 0) continue;
        if (connectivity == 6 && nonzero > 1) continue;
        if (connectivity == 18 && nonzero > 2) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

ComponentLabeling connected_components(const BinaryMask& m, int connectivity) {
  const Grid& g = m.grid;
  const std::int64_t nx = g.nx(), ny = g.ny(), nz = g.nz();

  // Neighbors already visited in raster order.
  std::vector<Index3> back;
  for (const auto& o : neighbor_offsets(connectivity))
    if (o[2] < 0 || (o[2] == 0 && (o[1] < 0 || (o[1] == 0 && o[0] < 0)))) back.push_back(o);
  std::vector<std::int64_t> back_delta;
  for (const auto& o : back) back_delta.push_back(o[0] + nx * (o[1] + ny * o[2]));

  ComponentLabeling out;
  out.grid = g;
  out.ids.assign(g.size(), 0);
  auto& prov = out.ids;
  UnionFind uf;
  uf.make();  // slot 0 is background

  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y) {
      const bool interior_yz = y > 0 && y < ny - 1 && z > 0;
      std::size_t i = g.index(0, y, z);
      for (std::int64_t x = 0; x < nx; ++x, ++i) {
        if (!m.bits[i]) continue;
        std::uint32_t label = 0;
        const bool interior = interior_yz && x > 0 && x < nx - 1;
        for (std::size_t k = 0; k < back.size(); ++k) {
          if (!interior) {
            const auto& o = back[k];
            if (!g.contains(x + o[0], y + o[1], z + o[2])) continue;
          }
          const std::uint32_t nl = prov[static_cast<std::size_t>(static_cast<std::int64_t>(i) + back_delta[k])];
          if (nl == 0) continue;
          if (label == 0) {
            label = nl;
          } else if (nl != label) {
            uf.unite(label, nl);
          }
        }
        prov[i] = label != 0 ? label : uf.make();
      }
    }

  std::vector<std::uint32_t> dense(uf.size(), 0);
  for (std::size_t i = 0; i < prov.size(); ++i) {
    if (prov[i] == 0) continue;
    const std::uint32_t root = uf.find(prov[i]);
    if (dense[root] == 0) {
      out.sizes.push_back(0);
      dense[root] = static_cast<std::uint32_t>(out.sizes.size());
    }
    prov[i] = dense[root];
    ++out.sizes[prov[i] - 1];
  }
  return out;
}

BinaryMask remove_small_islands(const BinaryMask& m, std::int64_t min_voxels, int connectivity) {
  const auto cc = connected_components(m, connectivity);
  BinaryMask out(m.grid);
  for (std::size_t i = 0; i < cc.ids.size(); ++i) {
    const auto id = cc.ids[i];
    if (id != 0 && static_cast<std::int64_t>(cc.sizes[id - 1]) >= min_voxels) out.bits[i] = 1;
  }
  return out;
}

std::vector<double> squared_distance_transform(const BinaryMask& m, const Spacing& spacing) {
  detail::Box full;
  full.lo = {0, 0, 0};
  full.hi = m.grid.dims;
  return detail::squared_distance_box(m, full, spacing);
}

BinaryMask dilate(const BinaryMask& m, double r_voxels) {
  if (r_voxels < 0) throw Error(ErrorCode::InvalidArgument, "dilation radius must be >= 0");
  const auto box = detail::bounding_box(m).expanded(
      static_cast<std::int64_t>(std::floor(r_voxels)), m.grid.dims);
  BinaryMask out(m.grid);
  if (box.empty()) return out;
  const auto d2 = detail::squared_distance_box(m, box, {1.0, 1.0, 1.0});
  const double limit = r_voxels * r_voxels;
  std::size_t o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      std::uint8_t* row = out.bits.data() + m.grid.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < box.hi[0] - box.lo[0]; ++x) row[x] = d2[o++] <= limit;
    }
  return out;
}

BinaryMask fill_holes(const BinaryMask& m) {
  const Grid& g = m.grid;
  std::vector<std::uint8_t> reached(g.size(), 0);
  std::deque<std::size_t> queue;
  auto seed = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto i = g.index(x, y, z);
    if (!m.bits[i] && !reached[i]) {
      reached[i] = 1;
      queue.push_back(i);
    }
  };
  for (std::int64_t z = 0; z < g.nz(); ++z)
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x)
        if (x == 0 || y == 0 || z == 0 || x == g.nx() - 1 || y == g.ny() - 1 || z == g.nz() - 1)
          seed(x, y, z);
  const auto offsets = neighbor_offsets(6);
  while (!queue.empty()) {
    const auto i = queue.front();
    queue.pop_front();
    const auto c = g.coord(i);
    for (const auto& o : offsets) {
      const auto x = c[0] + o[0], y = c[1] + o[1], z = c[2] + o[2];
      if (g.contains(x, y, z)) seed(x, y, z);
    }
  }
  BinaryMask out(g);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = m.bits[i] || !reached[i];
  return out;
}

BinaryMask gaussian_smooth_binary(const BinaryMask& m, double sigma_voxels) {
  if (sigma_voxels < 0.5) return m;
  const auto radius = static_cast<std::int64_t>(std::ceil(4.0 * sigma_voxels));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::int64_t k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-0.5 * static_cast<double>(k * k) / (sigma_voxels * sigma_voxels));

  const Grid& g = m.grid;
  const auto box = detail::bounding_box(m).expanded(radius, g.dims);
  BinaryMask out(g);
  if (box.empty()) return out;
  const Dims ext = box.extent();
  std::vector<double> buf(static_cast<std::size_t>(ext[0] * ext[1] * ext[2]));
  std::size_t o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::uint8_t* row = m.bits.data() + g.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < ext[0]; ++x) buf[o++] = row[x] ? 1.0 : 0.0;
    }

  const std::array<std::int64_t, 3> stride{1, ext[0], ext[0] * ext[1]};
  std::vector<double> line, res;
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t len = ext[axis];
    const std::int64_t full = g.dims[axis];
    const std::int64_t origin = box.lo[axis];
    line.resize(static_cast<std::size_t>(len));
    res.resize(static_cast<std::size_t>(len));
    // Normalizer depends only on the position along the axis.
    std::vector<double> norm(static_cast<std::size_t>(len));
    for (std::int64_t q = 0; q < len; ++q) {
      const std::int64_t gq = origin + q;
      double s = 0;
      for (std::int64_t k = -radius; k <= radius; ++k)
        if (gq + k >= 0 && gq + k < full) s += kernel[static_cast<std::size_t>(k + radius)];
      norm[static_cast<std::size_t>(q)] = s;
    }
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    for (std::int64_t i2 = 0; i2 < ext[a2]; ++i2)
      for (std::int64_t i1 = 0; i1 < ext[a1]; ++i1) {
        const std::int64_t base = i1 * stride[a1] + i2 * stride[a2];
        for (std::int64_t q = 0; q < len; ++q)
          line[static_cast<std::size_t>(q)] = buf[static_cast<std::size_t>(base + q * stride[axis])];
        for (std::int64_t q = 0; q < len; ++q) {
          double s = 0;
          const std::int64_t k0 = std::max(-radius, -q);
          const std::int64_t k1 = std::min(radius, len - 1 - q);
          for (std::int64_t k = k0; k <= k1; ++k)
            s += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(q + k)];
          res[static_cast<std::size_t>(q)] = s / norm[static_cast<std::size_t>(q)];
        }
        for (std::int64_t q = 0; q < len; ++q)
          buf[static_cast<std::size_t>(base + q * stride[axis])] = res[static_cast<std::size_t>(q)];
      }
  }

  o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      std::uint8_t* row = out.bits.data() + g.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < ext[0]; ++x) row[x] = buf[o++] >= 0.5;
    }
  return out;
}

BinaryMask boundary_voxels(const BinaryMask& m) {
  const Grid& g = m.grid;
  BinaryMask out(g);
  const auto offsets = neighbor_offsets(6);
  for (std::int64_t z = 0; z < g.nz(); ++z)
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x) {
        const auto i = g.index(x, y, z);
        if (!m.bits[i]) continue;
        for (const auto& o : offsets) {
          const auto xx = x + o[0], yy = y + o[1], zz = z + o[2];
          if (!g.contains(xx, yy, zz) || !m.bits[g.index(xx, yy, zz)]) {
            out.bits[i] = 1;
            break;
          }
        }
      }
  return out;
}

std::vector<ComponentDistance> min_surface_distance_mm(const BinaryMask& from, const BinaryMask& to) {
  return min_surface_distance_mm(connected_components(from, 26), to);
}

std::vector<ComponentDistance> min_surface_distance_mm(const ComponentLabeling& from,
                                                       const BinaryMask& to) {
  require_same_shape(from.grid, to.grid, "min_surface_distance_mm");
  std::vector<ComponentDistance> out(from.count());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = {static_cast<std::uint32_t>(c + 1), from.sizes[c], kInf};
  if (out.empty()) return out;
  const auto to_box = detail::bounding_box(to);
  if (to_box.empty()) return out;

  // The nearest voxel of `to` seen from outside is always a surface voxel,
  // so the plain distance transform of `to` gives the surface distance.
  BinaryMask from_mask(from.grid);
  for (std::size_t i = 0; i < from.ids.size(); ++i) from_mask.bits[i] = from.ids[i] != 0;
  const auto box = to_box.merged(detail::bounding_box(from_mask));
  const auto d2 = detail::squared_distance_box(to, box, to.grid.spacing);
  const Dims ext = box.extent();
  std::vector<double> best(out.size(), kInf);
  std::size_t o = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::uint32_t* row = from.ids.data() + from.grid.index(box.lo[0], y, z);
      for (std::int64_t x = 0; x < ext[0]; ++x, ++o) {
        const auto id = row[x];
        if (id != 0) best[id - 1] = std::min(best[id - 1], d2[o]);
      }
    }
  for (std::size_t c = 0; c < out.size(); ++c) out[c].min_distance_mm = std::sqrt(best[c]);
  return out;
}

}  // namespace hqcolon
