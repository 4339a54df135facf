#pragma once

// Diffeomorphic augmentation: a low-resolution stationary velocity field
// (SVF) is drawn, trilinearly upsampled to the image grid and exponentiated
// by scaling and squaring. All fields are in voxel units of the HR grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "synthvol/error.hpp"
#include "synthvol/field.hpp"
#include "synthvol/geometry.hpp"
#include "synthvol/random.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

inline constexpr int kDefaultExpSteps = 8;

/// Control-grid velocities, one array per component.
struct VelocityField {
  Dims control{10, 10, 10};
  double sigma = 0.0;
  std::vector<float> vx, vy, vz;

  std::size_t size() const { return vx.size(); }
};

inline VelocityField sample_svf(double sigma, const Dims& control, RandomStream& rng) {
  require(sigma >= 0.0 && std::isfinite(sigma), "deform", "SVF sigma must be non-negative");
  for (int c : control) require(c >= 1, "deform", "control grid dims must be positive");
  VelocityField f;
  f.control = control;
  f.sigma = sigma;
  const std::size_t n = voxel_count(control);
  for (auto* comp : {&f.vx, &f.vy, &f.vz}) {
    comp->resize(n);
    for (auto& v : *comp) v = static_cast<float>(rng.normal(0.0, sigma));
  }
  return f;
}

/// `target` is accepted for interface symmetry with the other samplers; the
/// draw itself only depends on the control grid.
inline VelocityField sample_svf(const Dims& /*target*/, double sigma, const Dims& control, RandomStream& rng) {
  return sample_svf(sigma, control, rng);
}

/// Trilinear upsampling of a control grid whose corner nodes coincide with
/// the corner voxels of the dense grid.
inline std::vector<float> upsample_control(const std::vector<float>& ctrl, const Dims& control, const Dims& dims) {
  require(ctrl.size() == voxel_count(control), "deform", "control data size mismatch");
  std::array<double, 3> scale{};
  for (int a = 0; a < 3; ++a) {
    require(dims[a] >= 1, "deform", "dense dims must be positive");
    scale[a] = (dims[a] > 1 && control[a] > 1) ? static_cast<double>(control[a] - 1) / (dims[a] - 1) : 0.0;
  }
  std::vector<float> out(voxel_count(dims));
  std::size_t idx = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++idx) {
        const Vec3 q{x * scale[0], y * scale[1], z * scale[2]};
        out[idx] = static_cast<float>(trilinear_lookup(ctrl.data(), control, q));
      }
    }
  }
  return out;
}

/// Dense velocity field on `dims`, returned in a DenseDeformation container
/// (diffeomorphic flag unset: it is a velocity, not yet a map).
inline DenseDeformation upsample_svf(const VelocityField& f, const Dims& dims) {
  for (int a = 0; a < 3; ++a) require(dims[a] >= f.control[a], "deform", "dense dims must not be smaller than control dims");
  DenseDeformation d;
  d.dims = dims;
  d.dx = upsample_control(f.vx, f.control, dims);
  d.dy = upsample_control(f.vy, f.control, dims);
  d.dz = upsample_control(f.vz, f.control, dims);
  return d;
}

/// outer o inner: x -> x + inner(x) + outer(x + inner(x)). Displacements
/// are interpolated trilinearly; points mapped outside read the nearest
/// edge displacement.
inline DenseDeformation compose_fields(const DenseDeformation& outer, const DenseDeformation& inner) {
  require(outer.dims == inner.dims, "deform", "composed fields must share a grid");
  const Dims& n = inner.dims;
  DenseDeformation r(n);
  std::size_t idx = 0;
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x, ++idx) {
        const double ix = inner.dx[idx], iy = inner.dy[idx], iz = inner.dz[idx];
        const Vec3 p{std::clamp(x + ix, 0.0, n[0] - 1.0), std::clamp(y + iy, 0.0, n[1] - 1.0),
                     std::clamp(z + iz, 0.0, n[2] - 1.0)};
        r.dx[idx] = static_cast<float>(ix + trilinear_lookup(outer.dx.data(), n, p));
        r.dy[idx] = static_cast<float>(iy + trilinear_lookup(outer.dy.data(), n, p));
        r.dz[idx] = static_cast<float>(iz + trilinear_lookup(outer.dz.data(), n, p));
      }
    }
  }
  r.diffeomorphic = outer.diffeomorphic && inner.diffeomorphic;
  return r;
}

/// Scaling and squaring: v / 2^steps composed with itself `steps` times.
inline DenseDeformation exponentiate(const DenseDeformation& velocity, int num_steps = kDefaultExpSteps) {
  require(num_steps >= 1, "deform", "num_steps must be at least 1");
  const float scale = std::ldexp(1.0f, -num_steps);
  DenseDeformation u(velocity.dims);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u.dx[i] = velocity.dx[i] * scale;
    u.dy[i] = velocity.dy[i] * scale;
    u.dz[i] = velocity.dz[i] * scale;
  }
  for (int s = 0; s < num_steps; ++s) u = compose_fields(u, u);
  u.diffeomorphic = true;
  return u;
}

inline DenseDeformation negate(const DenseDeformation& d) {
  DenseDeformation r = d;
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.dx[i] = -r.dx[i];
    r.dy[i] = -r.dy[i];
    r.dz[i] = -r.dz[i];
  }
  return r;
}

/// Dense backward map for T_lin o T_nonlin on `grid`: voxel p goes to
/// p + u(p), then through the world-space affine.
inline DenseDeformation compose_affine_nonlinear(const AffineMatrix& t_lin, const DenseDeformation& t_nonlin,
                                                 const Grid& grid) {
  require(t_nonlin.dims == grid.dims, "deform", "nonlinear field does not match grid");
  const AffineMatrix m = invert(grid.affine) * t_lin * grid.affine;
  const Dims& n = grid.dims;
  DenseDeformation r(n);
  std::size_t idx = 0;
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x, ++idx) {
        const Vec3 q{x + static_cast<double>(t_nonlin.dx[idx]), y + static_cast<double>(t_nonlin.dy[idx]),
                     z + static_cast<double>(t_nonlin.dz[idx])};
        const Vec3 s = m.apply_point(q);
        r.dx[idx] = static_cast<float>(s[0] - x);
        r.dy[idx] = static_cast<float>(s[1] - y);
        r.dz[idx] = static_cast<float>(s[2] - z);
      }
    }
  }
  r.diffeomorphic = t_nonlin.diffeomorphic;
  return r;
}

/// Affine map as a dense backward field on `grid`.
inline DenseDeformation affine_as_dense(const AffineMatrix& t, const Grid& grid) {
  DenseDeformation zero(grid.dims);
  zero.diffeomorphic = true;
  return compose_affine_nonlinear(t, zero, grid);
}

/// det(I + du/dp) by central differences (one-sided on the border).
inline Volume jacobian_determinant(const DenseDeformation& d) {
  const Dims& n = d.dims;
  Volume out(Grid::make(n));
  const std::array<const std::vector<float>*, 3> comp{&d.dx, &d.dy, &d.dz};
  auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(n[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(z));
  };
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x) {
        const std::array<int, 3> p{x, y, z};
        double j[3][3];
        for (int a = 0; a < 3; ++a) {  // derivative direction
          std::array<int, 3> lo = p, hi = p;
          if (n[a] == 1) {
            for (int c = 0; c < 3; ++c) j[c][a] = (c == a) ? 1.0 : 0.0;
            continue;
          }
          lo[a] = std::max(0, p[a] - 1);
          hi[a] = std::min(n[a] - 1, p[a] + 1);
          const double h = hi[a] - lo[a];
          for (int c = 0; c < 3; ++c) {
            const auto& u = *comp[c];
            const double du = (u[idx(hi[0], hi[1], hi[2])] - u[idx(lo[0], lo[1], lo[2])]) / h;
            j[c][a] = du + (c == a ? 1.0 : 0.0);
          }
        }
        const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                           j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                           j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out.at(x, y, z) = static_cast<float>(det);
      }
    }
  }
  return out;
}

}  // namespace synthvol
