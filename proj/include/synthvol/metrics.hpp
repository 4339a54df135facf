#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "synthvol/error.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double psnr = 0.0;  // +infinity when the volumes are identical
};

/// MAE, RMSE and PSNR = 20 log10(range / RMSE), range taken from `ref`.
inline ErrorMetrics compare(const Volume& pred, const Volume& ref) {
  require(pred.dims() == ref.dims(), "eval", "prediction and reference dims differ");
  require(ref.size() > 0, "eval", "empty volumes");
  double sa = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - ref[i];
    sa += std::abs(d);
    ss += d * d;
  }
  const double n = static_cast<double>(ref.size());
  ErrorMetrics m;
  m.mae = sa / n;
  m.rmse = std::sqrt(ss / n);
  const MinMax w = minmax_of(ref);
  const double range = w.hi - w.lo;
  m.psnr = m.rmse == 0.0 ? std::numeric_limits<double>::infinity() : 20.0 * std::log10(range / m.rmse);
  return m;
}

inline std::string format_psnr(double psnr) { return std::isinf(psnr) ? "inf" : std::to_string(psnr); }

namespace metrics_detail {

// Catmull-Rom cubic convolution weights (a = -0.5).
inline std::array<double, 4> cubic_weights(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0, -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
}

}  // namespace metrics_detail

/// Tricubic resampling of `src` onto `target` (same world frame); indices
/// beyond the border are clamped.
inline Volume cubic_resample(const Volume& src, const Grid& target) {
  const AffineMatrix m = invert(src.grid().affine) * target.affine;
  const Dims& n = src.dims();
  Volume out(target);
  std::size_t idx = 0;
  for (int z = 0; z < target.dims[2]; ++z) {
    for (int y = 0; y < target.dims[1]; ++y) {
      for (int x = 0; x < target.dims[0]; ++x, ++idx) {
        const Vec3 q = m.apply_point({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        std::array<int, 3> base{};
        std::array<std::array<double, 4>, 3> w{};
        for (int a = 0; a < 3; ++a) {
          const double p = std::clamp(detail::snap(q[a]), 0.0, static_cast<double>(n[a] - 1));
          base[a] = static_cast<int>(std::floor(p));
          w[a] = metrics_detail::cubic_weights(p - base[a]);
        }
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          const int zz = std::clamp(base[2] - 1 + k, 0, n[2] - 1);
          for (int j = 0; j < 4; ++j) {
            const int yy = std::clamp(base[1] - 1 + j, 0, n[1] - 1);
            double row = 0.0;
            for (int i = 0; i < 4; ++i) {
              const int xx = std::clamp(base[0] - 1 + i, 0, n[0] - 1);
              row += w[0][i] * src.at(xx, yy, zz);
            }
            acc += w[2][k] * w[1][j] * row;
          }
        }
        out[idx] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace synthvol
