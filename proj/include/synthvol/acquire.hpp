#pragma once

// Low-resolution acquisition model applied per channel: slice-profile blur,
// slice-spacing subsampling, inter-scan rigid motion, simulated
// registration error, realignment onto the target grid and the matching
// reliability maps.

#include <cmath>
#include <numbers>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthvol/error.hpp"
#include "synthvol/filter.hpp"
#include "synthvol/geometry.hpp"
#include "synthvol/random.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

/// Acquisition geometry of one contrast: voxel size r (slice thickness
/// included, gaps excluded) and voxel spacing d, both in mm.
struct ChannelSpec {
  Vec3 r_mm{1.0, 1.0, 1.0};
  Vec3 d_mm{1.0, 1.0, 1.0};
  bool reference = false;
  int index = 0;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      require(r_mm[i] > 0.0 && d_mm[i] > 0.0, "config", "channel voxel size and spacing must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const ChannelSpec& c) {
  j = nlohmann::json{{"r_mm", c.r_mm}, {"d_mm", c.d_mm}, {"reference", c.reference}};
}

inline void from_json(const nlohmann::json& j, ChannelSpec& c) {
  j.at("r_mm").get_to(c.r_mm);
  c.d_mm = j.contains("d_mm") ? j.at("d_mm").get<Vec3>() : c.r_mm;
  c.reference = j.value("reference", false);
  c.validate();
}

/// Logarithm used for the factor log(10) in the slice-profile width.
enum class LogBase { natural, base10 };

/// Gaussian slice-profile widths in target voxels:
/// sigma = 2 alpha log(10) / (2 pi) * r_c / r_targ, per axis.
inline Vec3 slice_sigma(double alpha, const Vec3& r_c, const Vec3& r_targ, LogBase base = LogBase::natural) {
  require(alpha > 0.0, "acquire", "alpha must be positive");
  const double log10_term = base == LogBase::natural ? std::log(10.0) : 1.0;
  const double k = 2.0 * alpha * log10_term / (2.0 * std::numbers::pi);
  Vec3 s{};
  for (int i = 0; i < 3; ++i) {
    require(r_c[i] > 0.0 && r_targ[i] > 0.0, "acquire", "resolutions must be positive");
    s[i] = k * r_c[i] / r_targ[i];
  }
  return s;
}

inline double sample_alpha(const Range& r, RandomStream& rng) { return rng.uniform(r[0], r[1]); }

/// Low-resolution sampling grid for spacing d_c over the extent of `hr`.
/// `phase_vox` shifts the first slice by a fraction of the HR voxel along
/// each axis (all zero: first slice on HR voxel 0).
inline Grid slice_grid(const Grid& hr, const Vec3& d_c, const Vec3& phase_vox = {0.0, 0.0, 0.0}) {
  Grid g;
  for (int i = 0; i < 3; ++i) {
    require(d_c[i] > 0.0, "acquire", "slice spacing must be positive");
    require(phase_vox[i] >= 0.0, "acquire", "slice phase must be non-negative");
    const double extent = (hr.dims[i] - 1 - phase_vox[i]) * hr.spacing[i];
    g.dims[i] = extent < 0.0 ? 1 : static_cast<int>(std::floor(extent / d_c[i] + 1e-9)) + 1;
    g.spacing[i] = d_c[i];
  }
  g.affine = hr.affine * AffineMatrix::translation(phase_vox) *
             AffineMatrix::diagonal({d_c[0] / hr.spacing[0], d_c[1] / hr.spacing[1], d_c[2] / hr.spacing[2]});
  return g;
}

/// Samples the (already blurred) HR volume at spacing d_c.
inline Volume subsample_slices(const Volume& g, const Vec3& d_c, const Vec3& phase_vox = {0.0, 0.0, 0.0}) {
  return resample_onto(g, slice_grid(g.grid(), d_c, phase_vox));
}

/// G^R = G o R_c with R_c rotating about `center`. The reference channel
/// (index 0) must not move.
inline Volume apply_interscan_motion(const Volume& g, const RigidParams& rc, int channel, const Vec3& center) {
  if (channel == 0 && !rc.is_zero()) {
    fail(Errc::invalid_argument, "motion", "reference channel cannot receive inter-scan motion");
  }
  if (rc.is_zero()) return g;
  return warp(g, build_rigid(rc, center), Interp::trilinear);
}

/// Registration error: zero for the reference channel, otherwise Gaussian
/// rotations (degrees) and translations (mm).
inline RigidParams sample_registration_error(double sigma_rot_deg, double sigma_trans_mm, int channel,
                                             RandomStream& rng) {
  RigidParams e;
  if (channel == 0) return e;
  for (int i = 0; i < 3; ++i) e.rotation_deg[i] = rng.normal(0.0, sigma_rot_deg);
  for (int i = 0; i < 3; ++i) e.translation_mm[i] = rng.normal(0.0, sigma_trans_mm);
  return e;
}

/// R'_c = R_c^-1 x Rigid(err): the imperfect realignment applied to the
/// LR image to bring it back into the reference frame.
inline AffineMatrix realign_transform(const RigidParams& rc, const RigidParams& err, const Vec3& center) {
  return invert(build_rigid(rc, center)) * build_rigid(err, center);
}

/// U_c: the LR image warped by R'_c and read on the target grid in a single
/// trilinear pass.
inline Volume realign_and_resample(const Volume& i_lr, const RigidParams& rc, const RigidParams& err,
                                   const Grid& target, const Vec3& center) {
  return resample_onto(i_lr, target, realign_transform(rc, err, center), Interp::trilinear);
}

/// Same, with the target grid derived from the LR extent at spacing r_targ.
inline Volume realign_and_resample(const Volume& i_lr, const RigidParams& rc, const RigidParams& err,
                                   const Vec3& r_targ, const Vec3& center) {
  return realign_and_resample(i_lr, rc, err, resampled_grid(i_lr.grid(), r_targ), center);
}

/// Reliability V_c on `target`: each target voxel is mapped into the LR
/// grid by `target_to_lr_world`. Along every axis whose spacing exceeds the
/// target voxel size the value is a linear hat of width r_targ centred on
/// the acquired slices (1 on a slice, 0 one target voxel away or further);
/// finely sampled axes contribute 1. Points outside the acquired extent
/// are 0. The result lies in [0, 1].
inline Volume compute_reliability(const Grid& lr, const AffineMatrix& target_to_lr_world, const Grid& target) {
  const AffineMatrix m = invert(lr.affine) * target_to_lr_world * target.affine;
  std::array<bool, 3> sparse{};
  std::array<double, 3> ratio{};  // LR voxel distance -> target-voxel units
  for (int a = 0; a < 3; ++a) {
    sparse[a] = lr.spacing[a] > target.spacing[a] * (1.0 + 1e-9);
    ratio[a] = lr.spacing[a] / target.spacing[a];
  }
  Volume v(target);
  std::size_t idx = 0;
  const Dims& n = target.dims;
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x, ++idx) {
        const Vec3 q = m.apply_point({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        double r = 1.0;
        for (int a = 0; a < 3 && r > 0.0; ++a) {
          const double p = detail::snap(q[a]);
          if (!(p >= 0.0 && p <= lr.dims[a] - 1)) {
            r = 0.0;
            break;
          }
          if (sparse[a]) {
            const double dist = detail::snap(std::abs(p - std::round(p)) * ratio[a]);
            r *= std::max(0.0, 1.0 - dist);
          }
        }
        v[idx] = static_cast<float>(std::clamp(r, 0.0, 1.0));
      }
    }
  }
  return v;
}

inline Volume compute_reliability(const Grid& lr, const RigidParams& rc, const RigidParams& err, const Grid& target,
                                  const Vec3& center) {
  return compute_reliability(lr, realign_transform(rc, err, center), target);
}

}  // namespace synthvol
