#pragma once

// Homogeneous 3D transforms used for spatial augmentation, inter-scan motion
// and simulated registration error. All matrices act on world coordinates
// in millimetres; angles are carried in degrees and converted only when a
// trigonometric function is evaluated.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>

#include "synthvol/error.hpp"
#include "synthvol/random.hpp"
#include "synthvol/ranges.hpp"

namespace synthvol {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// 4x4 homogeneous matrix, row-major. The last row is kept at (0,0,0,1).
class AffineMatrix {
 public:
  AffineMatrix() : m_{} {
    for (int i = 0; i < 4; ++i) m_[i * 4 + i] = 1.0;
  }

  static AffineMatrix identity() { return {}; }

  static AffineMatrix translation(const Vec3& t) {
    AffineMatrix a;
    a(0, 3) = t[0];
    a(1, 3) = t[1];
    a(2, 3) = t[2];
    return a;
  }

  static AffineMatrix diagonal(const Vec3& d) {
    AffineMatrix a;
    a(0, 0) = d[0];
    a(1, 1) = d[1];
    a(2, 2) = d[2];
    return a;
  }

  /// Builds from 16 row-major values. The last row must be (0,0,0,1).
  static AffineMatrix from_rows(const std::array<double, 16>& v) {
    if (std::abs(v[12]) > 1e-9 || std::abs(v[13]) > 1e-9 || std::abs(v[14]) > 1e-9 ||
        std::abs(v[15] - 1.0) > 1e-9) {
      fail(Errc::invalid_argument, "geometry", "affine matrix last row must be (0,0,0,1)");
    }
    AffineMatrix a;
    a.m_ = v;
    a.m_[12] = a.m_[13] = a.m_[14] = 0.0;
    a.m_[15] = 1.0;
    return a;
  }

  double& operator()(int r, int c) { return m_[r * 4 + c]; }
  double operator()(int r, int c) const { return m_[r * 4 + c]; }
  const std::array<double, 16>& data() const { return m_; }

  Vec3 apply_point(const Vec3& p) const {
    return {m_[0] * p[0] + m_[1] * p[1] + m_[2] * p[2] + m_[3],
            m_[4] * p[0] + m_[5] * p[1] + m_[6] * p[2] + m_[7],
            m_[8] * p[0] + m_[9] * p[1] + m_[10] * p[2] + m_[11]};
  }

  Vec3 apply_vector(const Vec3& v) const {
    return {m_[0] * v[0] + m_[1] * v[1] + m_[2] * v[2], m_[4] * v[0] + m_[5] * v[1] + m_[6] * v[2],
            m_[8] * v[0] + m_[9] * v[1] + m_[10] * v[2]};
  }

  Vec3 translation_part() const { return {m_[3], m_[7], m_[11]}; }

  double linear_determinant() const {
    const auto& a = m_;
    return a[0] * (a[5] * a[10] - a[6] * a[9]) - a[1] * (a[4] * a[10] - a[6] * a[8]) +
           a[2] * (a[4] * a[9] - a[5] * a[8]);
  }

  /// Max absolute elementwise difference.
  double distance(const AffineMatrix& o) const {
    double d = 0.0;
    for (int i = 0; i < 16; ++i) d = std::max(d, std::abs(m_[i] - o.m_[i]));
    return d;
  }

  bool is_identity(double tol = 0.0) const { return distance(identity()) <= tol; }

  friend AffineMatrix operator*(const AffineMatrix& a, const AffineMatrix& b) {
    AffineMatrix r;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
        r(i, j) = s;
      }
    }
    return r;
  }

  friend std::ostream& operator<<(std::ostream& os, const AffineMatrix& a) {
    for (int i = 0; i < 4; ++i) {
      os << (i ? "\n" : "") << a(i, 0) << ' ' << a(i, 1) << ' ' << a(i, 2) << ' ' << a(i, 3);
    }
    return os;
  }

 private:
  std::array<double, 16> m_;
};

/// Nine-parameter linear augmentation. Rotations in degrees.
struct AffineParams {
  Vec3 rotation_deg{0.0, 0.0, 0.0};
  Vec3 scaling{1.0, 1.0, 1.0};
  Vec3 shearing{0.0, 0.0, 0.0};
};

/// Six-parameter rigid motion. Rotations in degrees, translations in mm.
struct RigidParams {
  Vec3 rotation_deg{0.0, 0.0, 0.0};
  Vec3 translation_mm{0.0, 0.0, 0.0};

  bool is_zero() const {
    for (int i = 0; i < 3; ++i) {
      if (rotation_deg[i] != 0.0 || translation_mm[i] != 0.0) return false;
    }
    return true;
  }
};

inline AffineMatrix compose(const AffineMatrix& a, const AffineMatrix& b) { return a * b; }

inline AffineMatrix invert(const AffineMatrix& a) {
  const double det = a.linear_determinant();
  if (!(std::abs(det) > 1e-12) || !std::isfinite(det)) {
    fail(Errc::numerical, "geometry", "cannot invert affine with singular linear block");
  }
  const double inv = 1.0 / det;
  AffineMatrix r;
  r(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) * inv;
  r(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) * inv;
  r(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) * inv;
  r(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) * inv;
  r(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) * inv;
  r(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) * inv;
  r(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) * inv;
  r(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) * inv;
  r(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) * inv;
  const Vec3 t = a.translation_part();
  for (int i = 0; i < 3; ++i) r(i, 3) = -(r(i, 0) * t[0] + r(i, 1) * t[1] + r(i, 2) * t[2]);
  return r;
}

namespace detail {

inline AffineMatrix rot_x(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  AffineMatrix r;
  r(1, 1) = c;
  r(1, 2) = -s;
  r(2, 1) = s;
  r(2, 2) = c;
  return r;
}

inline AffineMatrix rot_y(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  AffineMatrix r;
  r(0, 0) = c;
  r(0, 2) = s;
  r(2, 0) = -s;
  r(2, 2) = c;
  return r;
}

inline AffineMatrix rot_z(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  AffineMatrix r;
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return r;
}

// Product Rot_x * Rot_y * Rot_z; acting on a vector, Rot_z is applied first.
inline AffineMatrix rotation(const Vec3& deg) { return rot_x(deg[0]) * rot_y(deg[1]) * rot_z(deg[2]); }

inline AffineMatrix about_center(const AffineMatrix& linear, const Vec3& center) {
  return AffineMatrix::translation(center) * linear * AffineMatrix::translation(-1.0 * center);
}

}  // namespace detail

/// Scale_x Scale_y Scale_z Shear_x Shear_y Shear_z Rot_x Rot_y Rot_z about
/// `center`. Shear_x adds phi_x*y to x, Shear_y adds phi_y*z to y and
/// Shear_z adds phi_z*x to z.
inline AffineMatrix build_affine(const AffineParams& p, const Vec3& center = {0.0, 0.0, 0.0}) {
  for (double s : p.scaling) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      fail(Errc::invalid_argument, "geometry", "affine scalings must be positive");
    }
  }
  AffineMatrix shear_x, shear_y, shear_z;
  shear_x(0, 1) = p.shearing[0];
  shear_y(1, 2) = p.shearing[1];
  shear_z(2, 0) = p.shearing[2];
  const AffineMatrix linear = AffineMatrix::diagonal(p.scaling) * shear_x * shear_y * shear_z *
                              detail::rotation(p.rotation_deg);
  return detail::about_center(linear, center);
}

/// Rotation about `center` followed by translation.
inline AffineMatrix build_rigid(const RigidParams& p, const Vec3& center = {0.0, 0.0, 0.0}) {
  return AffineMatrix::translation(p.translation_mm) *
         detail::about_center(detail::rotation(p.rotation_deg), center);
}

inline AffineParams sample_affine_params(const GeneratorRanges& cfg, RandomStream& rng) {
  AffineParams p;
  const double log_lo = std::log(cfg.scaling[0]);
  const double log_hi = std::log(cfg.scaling[1]);
  for (int i = 0; i < 3; ++i) {
    p.rotation_deg[i] = rng.uniform(cfg.rotation_deg[0], cfg.rotation_deg[1]);
    p.scaling[i] = std::exp(rng.uniform(log_lo, log_hi));
    p.shearing[i] = rng.uniform(cfg.shearing[0], cfg.shearing[1]);
  }
  return p;
}

/// Channel 0 is the reference frame and never moves.
inline RigidParams sample_rigid_params(const GeneratorRanges& cfg, int channel_index, RandomStream& rng) {
  require(channel_index >= 0, "geometry", "channel index must be non-negative");
  RigidParams p;
  if (channel_index == 0) return p;
  for (int i = 0; i < 3; ++i) {
    p.rotation_deg[i] = rng.uniform(cfg.rotation_deg[0], cfg.rotation_deg[1]);
    p.translation_mm[i] = rng.uniform(cfg.translation_mm[0], cfg.translation_mm[1]);
  }
  return p;
}

}  // namespace synthvol
