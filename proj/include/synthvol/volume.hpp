#pragma once

// Scalar 3D grids and the sampling operations shared by every stage:
// trilinear / nearest lookup, backward-mapped warps, resampling to a new
// spacing, intensity normalisation and aligned cropping.
//
// Conventions:
//  * data is stored x-fastest: index = x + nx * (y + ny * z);
//  * voxel coordinates refer to voxel centres, voxel (0,0,0) is the first
//    sample and the grid affine maps voxel coordinates to world mm;
//  * warps are backward maps: each output voxel reads the source at the
//    location the transform sends it to;
//  * samples that fall outside [0, n-1] on any axis read 0 (air).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synthvol/error.hpp"
#include "synthvol/field.hpp"
#include "synthvol/geometry.hpp"
#include "synthvol/random.hpp"

namespace synthvol {

struct Grid {
  Dims dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  AffineMatrix affine;  // voxel -> world

  /// Axis-aligned grid whose first voxel centre sits at `origin`.
  static Grid make(Dims dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0}) {
    Grid g;
    g.dims = dims;
    g.spacing = spacing;
    g.affine = AffineMatrix::translation(origin) * AffineMatrix::diagonal(spacing);
    g.validate();
    return g;
  }

  std::size_t size() const { return voxel_count(dims); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  Vec3 to_world(const Vec3& voxel) const { return affine.apply_point(voxel); }
  Vec3 to_voxel(const Vec3& world) const { return invert(affine).apply_point(world); }

  Vec3 center_voxel() const {
    return {(dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0, (dims[2] - 1) / 2.0};
  }
  Vec3 center_world() const { return to_world(center_voxel()); }

  bool same_shape(const Grid& o) const { return dims == o.dims; }

  bool same_as(const Grid& o, double tol = 1e-6) const {
    if (dims != o.dims) return false;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(spacing[i] - o.spacing[i]) > tol) return false;
    }
    return affine.distance(o.affine) <= tol;
  }

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      require(dims[i] > 0, "volume", "grid dimensions must be positive");
      require(spacing[i] > 0.0 && std::isfinite(spacing[i]), "volume", "voxel size must be positive");
    }
    require(std::abs(affine.linear_determinant()) > 1e-12, "volume", "grid affine is singular");
  }
};

template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;

  explicit Image(Grid grid, T fill = T{}) : grid_(std::move(grid)), data_(grid_.size(), fill) {
    grid_.validate();
  }

  Image(Grid grid, std::vector<T> data) : grid_(std::move(grid)), data_(std::move(data)) {
    grid_.validate();
    require(data_.size() == grid_.size(), "volume", "data length does not match grid dimensions");
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[grid_.index(x, y, z)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Image& o) const { return grid_.same_as(o.grid_, 0.0) && data_ == o.data_; }

 protected:
  Grid grid_;
  std::vector<T> data_;
};

using Volume = Image<float>;
using Label = std::int32_t;

class LabelMap : public Image<Label> {
 public:
  LabelMap() = default;
  explicit LabelMap(Grid grid, Label fill = 0) : Image<Label>(std::move(grid), fill) { check(); }
  LabelMap(Grid grid, std::vector<Label> data) : Image<Label>(std::move(grid), std::move(data)) { check(); }

  /// Distinct labels present, ascending.
  std::vector<Label> label_set() const {
    std::set<Label> s(data_.begin(), data_.end());
    return {s.begin(), s.end()};
  }

 private:
  void check() const {
    for (Label l : data_) require(l >= 0, "volume", "labels must be non-negative");
  }
};

enum class Interp { trilinear, nearest };

namespace detail {

// Snaps coordinates within 1e-9 of a node so identity maps stay exact.
inline double snap(double p) {
  const double r = std::round(p);
  return std::abs(p - r) < 1e-9 ? r : p;
}

inline bool axis_lerp(double p, int n, int& i0, int& i1, double& f) {
  p = snap(p);
  if (!(p >= 0.0 && p <= static_cast<double>(n - 1))) return false;
  i0 = static_cast<int>(std::floor(p));
  if (i0 >= n - 1) {
    i0 = n - 1;
    i1 = n - 1;
    f = 0.0;
  } else {
    i1 = i0 + 1;
    f = p - i0;
  }
  return true;
}

}  // namespace detail

/// Trilinear lookup in a raw x-fastest array; 0 outside the grid.
template <typename T>
inline double trilinear_lookup(const T* data, const Dims& d, const Vec3& p) {
  int x0, x1, y0, y1, z0, z1;
  double fx, fy, fz;
  if (!detail::axis_lerp(p[0], d[0], x0, x1, fx) || !detail::axis_lerp(p[1], d[1], y0, y1, fy) ||
      !detail::axis_lerp(p[2], d[2], z0, z1, fz)) {
    return 0.0;
  }
  const std::size_t nx = static_cast<std::size_t>(d[0]);
  const std::size_t nxy = nx * static_cast<std::size_t>(d[1]);
  auto at = [&](int x, int y, int z) {
    return static_cast<double>(data[static_cast<std::size_t>(x) + nx * static_cast<std::size_t>(y) +
                                    nxy * static_cast<std::size_t>(z)]);
  };
  const double c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
  const double c0 = c00 * (1.0 - fy) + c10 * fy;
  const double c1 = c01 * (1.0 - fy) + c11 * fy;
  return c0 * (1.0 - fz) + c1 * fz;
}

inline float trilinear_sample(const Volume& v, const Vec3& p) {
  return static_cast<float>(trilinear_lookup(v.values().data(), v.dims(), p));
}

/// Nearest node, ties toward the lower index; label 0 outside the grid.
template <typename T>
inline T nearest_lookup(const T* data, const Dims& d, const Vec3& p) {
  std::array<int, 3> i{};
  for (int a = 0; a < 3; ++a) {
    const double q = detail::snap(p[a]);
    if (!std::isfinite(q)) return T{};
    i[a] = static_cast<int>(std::ceil(q - 0.5));
    if (i[a] < 0 || i[a] > d[a] - 1) return T{};
  }
  return data[static_cast<std::size_t>(i[0]) +
              static_cast<std::size_t>(d[0]) *
                  (static_cast<std::size_t>(i[1]) + static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(i[2]))];
}

inline Label nearest_sample(const LabelMap& l, const Vec3& p) {
  return nearest_lookup(l.values().data(), l.dims(), p);
}

namespace detail {

template <typename T>
T sample_as(const Image<T>& src, const Vec3& p, Interp mode) {
  if (mode == Interp::nearest) return nearest_lookup(src.values().data(), src.dims(), p);
  if constexpr (std::is_floating_point_v<T>) {
    return static_cast<T>(trilinear_lookup(src.values().data(), src.dims(), p));
  } else {
    fail(Errc::invalid_argument, "volume", "trilinear interpolation is not defined for label maps");
  }
}

// Voxel-to-voxel map: output voxel -> output world -> source world -> source voxel.
inline AffineMatrix voxel_map(const Grid& out, const Grid& src, const AffineMatrix& out_to_src_world) {
  return invert(src.affine) * out_to_src_world * out.affine;
}

template <typename T, typename Out>
void resample_into(const Image<T>& src, const Grid& out_grid, const AffineMatrix& m, Interp mode, Out& out) {
  const Dims& d = out_grid.dims;
  std::size_t idx = 0;
  for (int z = 0; z < d[2]; ++z) {
    for (int y = 0; y < d[1]; ++y) {
      Vec3 p = m.apply_point({0.0, static_cast<double>(y), static_cast<double>(z)});
      const Vec3 step{m(0, 0), m(1, 0), m(2, 0)};
      for (int x = 0; x < d[0]; ++x, ++idx) {
        const Vec3 q{p[0] + x * step[0], p[1] + x * step[1], p[2] + x * step[2]};
        out[idx] = sample_as(src, q, mode);
      }
    }
  }
}

template <typename T>
void check_mode(Interp mode) {
  if constexpr (!std::is_floating_point_v<T>) {
    if (mode == Interp::trilinear) {
      fail(Errc::invalid_argument, "volume", "trilinear interpolation is not defined for label maps");
    }
  }
}

template <typename Img>
Img make_like(const Grid& g) {
  return Img(g);
}

}  // namespace detail

/// Samples `src` on `out_grid`: output voxel q reads the source at world
/// position out_to_src_world(world(q)).
template <typename Img>
Img resample_onto(const Img& src, const Grid& out_grid,
                  const AffineMatrix& out_to_src_world = AffineMatrix::identity(),
                  Interp mode = Interp::trilinear) {
  using T = typename Img::value_type;
  detail::check_mode<T>(mode);
  Img out = detail::make_like<Img>(out_grid);
  const AffineMatrix m = detail::voxel_map(out_grid, src.grid(), out_to_src_world);
  if (src.grid().same_as(out_grid, 0.0) && m.is_identity(1e-12)) {
    out.values() = src.values();
    return out;
  }
  detail::resample_into(src, out_grid, m, mode, out.values());
  return out;
}

/// Backward warp by a world-space affine; output grid equals input grid.
template <typename Img>
Img warp(const Img& v, const AffineMatrix& t, Interp mode = Interp::trilinear) {
  return resample_onto(v, v.grid(), t, mode);
}

/// Backward warp by a dense displacement field given in voxel units of the
/// volume's own grid.
template <typename Img>
Img warp(const Img& v, const DenseDeformation& d, Interp mode = Interp::trilinear) {
  using T = typename Img::value_type;
  detail::check_mode<T>(mode);
  require(d.dims == v.dims(), "volume", "deformation grid does not match volume grid");
  Img out = detail::make_like<Img>(v.grid());
  const Dims& n = v.dims();
  std::size_t idx = 0;
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x, ++idx) {
        const Vec3 p{x + static_cast<double>(d.dx[idx]), y + static_cast<double>(d.dy[idx]),
                     z + static_cast<double>(d.dz[idx])};
        out[idx] = detail::sample_as(v, p, mode);
      }
    }
  }
  return out;
}

/// Grid covering the same world extent at a new spacing. The first voxel
/// centre is the anchor; the last output node never passes the last input
/// node.
inline Grid resampled_grid(const Grid& g, const Vec3& new_spacing) {
  Grid out;
  for (int i = 0; i < 3; ++i) {
    require(new_spacing[i] > 0.0 && std::isfinite(new_spacing[i]), "volume", "resample spacing must be positive");
    const double extent = (g.dims[i] - 1) * g.spacing[i];
    out.dims[i] = static_cast<int>(std::floor(extent / new_spacing[i] + 1e-9)) + 1;
    out.spacing[i] = new_spacing[i];
  }
  out.affine = g.affine * AffineMatrix::diagonal({new_spacing[0] / g.spacing[0], new_spacing[1] / g.spacing[1],
                                                  new_spacing[2] / g.spacing[2]});
  return out;
}

inline Volume resample(const Volume& v, const Vec3& new_spacing) {
  return resample_onto(v, resampled_grid(v.grid(), new_spacing));
}

/// Intensity window used by min-max normalisation; kept so the same affine
/// map can be applied to a second volume.
struct MinMax {
  double lo = 0.0;
  double hi = 1.0;

  double apply(double x) const { return (x - lo) / (hi - lo); }
};

inline MinMax minmax_of(const Volume& v) {
  require(v.size() > 0, "volume", "empty volume");
  auto [lo, hi] = std::minmax_element(v.values().begin(), v.values().end());
  return {static_cast<double>(*lo), static_cast<double>(*hi)};
}

inline Volume apply_window(const Volume& v, const MinMax& w) {
  Volume out(v.grid());
  const double scale = 1.0 / (w.hi - w.lo);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - w.lo) * scale);
  return out;
}

inline Volume minmax_normalize(const Volume& v) {
  const MinMax w = minmax_of(v);
  if (!(w.hi > w.lo)) fail(Errc::numerical, "normalize", "cannot min-max normalise a constant volume");
  return apply_window(v, w);
}

/// Median with the mean of the two central values for even counts.
inline double median(std::vector<double> values) {
  require(!values.empty(), "stats", "median of an empty list");
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

/// Divides by the median intensity over voxels carrying one of `wm_labels`.
inline Volume wm_median_normalize(const Volume& v, const LabelMap& l, std::span<const Label> wm_labels) {
  require(v.dims() == l.dims(), "normalize", "label map and volume grids differ");
  std::vector<double> wm;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::find(wm_labels.begin(), wm_labels.end(), l[i]) != wm_labels.end()) wm.push_back(v[i]);
  }
  if (wm.empty()) fail(Errc::invalid_argument, "normalize", "no white-matter voxels in label map");
  const double m = median(std::move(wm));
  if (!(std::abs(m) > 0.0)) fail(Errc::numerical, "normalize", "white-matter median is zero");
  Volume out(v.grid());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / m);
  return out;
}

struct CropWindow {
  Dims offset{0, 0, 0};
  Dims size{1, 1, 1};
};

/// Uniform crop offsets; sizes larger than the volume clamp to it.
inline CropWindow sample_crop_window(const Dims& dims, const Dims& size, RandomStream& rng) {
  CropWindow w;
  for (int i = 0; i < 3; ++i) {
    require(size[i] > 0, "crop", "crop size must be positive");
    w.size[i] = std::min(size[i], dims[i]);
    w.offset[i] = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(dims[i] - w.size[i] + 1)));
  }
  return w;
}

template <typename Img>
Img crop(const Img& v, const CropWindow& w) {
  for (int i = 0; i < 3; ++i) {
    require(w.offset[i] >= 0 && w.offset[i] + w.size[i] <= v.dims()[i], "crop", "crop window outside volume");
  }
  Grid g = v.grid();
  g.dims = w.size;
  g.affine = v.grid().affine * AffineMatrix::translation({static_cast<double>(w.offset[0]),
                                                          static_cast<double>(w.offset[1]),
                                                          static_cast<double>(w.offset[2])});
  Img out = detail::make_like<Img>(g);
  std::size_t idx = 0;
  for (int z = 0; z < w.size[2]; ++z) {
    for (int y = 0; y < w.size[1]; ++y) {
      for (int x = 0; x < w.size[0]; ++x, ++idx) {
        out[idx] = v.at(x + w.offset[0], y + w.offset[1], z + w.offset[2]);
      }
    }
  }
  return out;
}

/// Crops every volume of an aligned set with one shared random window.
inline std::vector<Volume> crop_random(const std::vector<Volume>& vols, const Dims& size, RandomStream& rng) {
  if (vols.empty()) return {};
  for (const auto& v : vols) require(v.dims() == vols.front().dims(), "crop", "volumes in a crop set must share dims");
  const CropWindow w = sample_crop_window(vols.front().dims(), size, rng);
  std::vector<Volume> out;
  out.reserve(vols.size());
  for (const auto& v : vols) out.push_back(crop(v, w));
  return out;
}

inline bool all_finite(const Volume& v) {
  return std::all_of(v.values().begin(), v.values().end(), [](float x) { return std::isfinite(x); });
}

}  // namespace synthvol
