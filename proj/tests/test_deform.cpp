#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "synthvol/deform.hpp"

using namespace synthvol;

namespace {

DenseDeformation constant_field(const Dims& d, Vec3 v) {
  DenseDeformation f(d);
  std::fill(f.dx.begin(), f.dx.end(), static_cast<float>(v[0]));
  std::fill(f.dy.begin(), f.dy.end(), static_cast<float>(v[1]));
  std::fill(f.dz.begin(), f.dz.end(), static_cast<float>(v[2]));
  return f;
}

template <typename Fn>
void for_interior(const Dims& d, int margin, Fn fn) {
  for (int z = margin; z < d[2] - margin; ++z)
    for (int y = margin; y < d[1] - margin; ++y)
      for (int x = margin; x < d[0] - margin; ++x)
        fn(static_cast<std::size_t>(x) + static_cast<std::size_t>(d[0]) * (y + static_cast<std::size_t>(d[1]) * z));
}

double magnitude(const DenseDeformation& f, std::size_t i) {
  return std::sqrt(double(f.dx[i]) * f.dx[i] + double(f.dy[i]) * f.dy[i] + double(f.dz[i]) * f.dz[i]);
}

DenseDeformation random_velocity(const Dims& d, double sigma, std::uint64_t seed) {
  auto rng = RandomStream::derive(seed, {0, 0, static_cast<std::uint64_t>(Stage::svf)});
  return upsample_svf(sample_svf(sigma, {10, 10, 10}, rng), d);
}

// Mean |a - b| over voxels at least `margin` from every face.
double mean_distance(const DenseDeformation& a, const DenseDeformation& b, int margin) {
  double sum = 0.0;
  std::size_t n = 0;
  for_interior(a.dims, margin, [&](std::size_t i) {
    const double ex = a.dx[i] - b.dx[i], ey = a.dy[i] - b.dy[i], ez = a.dz[i] - b.dz[i];
    sum += std::sqrt(ex * ex + ey * ey + ez * ez);
    ++n;
  });
  return sum / static_cast<double>(n);
}

double mean_magnitude(const DenseDeformation& a, int margin) {
  return mean_distance(a, DenseDeformation(a.dims), margin);
}

DenseDeformation rk4_flow(const DenseDeformation& v, int steps) {
  const Dims& n = v.dims;
  auto vel = [&](Vec3 p) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 0.0, n[a] - 1.0);
    return Vec3{trilinear_lookup(v.dx.data(), n, p), trilinear_lookup(v.dy.data(), n, p),
                trilinear_lookup(v.dz.data(), n, p)};
  };
  auto step = [](const Vec3& p, const Vec3& k, double h) { return Vec3{p[0] + h * k[0], p[1] + h * k[1], p[2] + h * k[2]}; };
  const double h = 1.0 / steps;
  DenseDeformation out(n);
  std::size_t i = 0;
  for (int z = 0; z < n[2]; ++z)
    for (int y = 0; y < n[1]; ++y)
      for (int x = 0; x < n[0]; ++x, ++i) {
        Vec3 p{double(x), double(y), double(z)};
        for (int s = 0; s < steps; ++s) {
          const Vec3 k1 = vel(p), k2 = vel(step(p, k1, h / 2)), k3 = vel(step(p, k2, h / 2)), k4 = vel(step(p, k3, h));
          for (int a = 0; a < 3; ++a) p[a] += h / 6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
        }
        out.dx[i] = static_cast<float>(p[0] - x);
        out.dy[i] = static_cast<float>(p[1] - y);
        out.dz[i] = static_cast<float>(p[2] - z);
      }
  return out;
}

}  // namespace

TEST(SampleSvf, ZeroSigmaIsZero) {
  auto rng = RandomStream::derive(1, {});
  const VelocityField f = sample_svf(0.0, {10, 10, 10}, rng);
  ASSERT_EQ(f.size(), 1000u);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(f.vx[i] + f.vy[i] + f.vz[i], 0.0f);
}

TEST(SampleSvf, EmpiricalStdMatchesSigma) {
  auto rng = RandomStream::derive(2, {});
  const VelocityField f = sample_svf(3.0, {47, 47, 47}, rng);
  double s = 0.0, s2 = 0.0;
  for (float v : f.vx) {
    s += v;
    s2 += double(v) * v;
  }
  const double n = static_cast<double>(f.size());
  ASSERT_GT(n, 1e5);
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(sd, 3.0, 3.0 * 3.0 / std::sqrt(2.0 * n));
  EXPECT_NEAR(mean, 0.0, 3.0 * 3.0 / std::sqrt(n));
}

TEST(SampleSvf, Reproducible) {
  auto a = RandomStream::derive(3, {4});
  auto b = RandomStream::derive(3, {4});
  const VelocityField fa = sample_svf(2.0, {5, 6, 7}, a), fb = sample_svf(2.0, {5, 6, 7}, b);
  EXPECT_EQ(fa.vx, fb.vx);
  EXPECT_EQ(fa.vz, fb.vz);
  EXPECT_THROW(sample_svf(-1.0, {5, 5, 5}, a), Error);
}

TEST(UpsampleSvf, ConstantAndZero) {
  VelocityField f;
  f.control = {4, 4, 4};
  f.vx.assign(64, 1.25f);
  f.vy.assign(64, 0.0f);
  f.vz.assign(64, -2.0f);
  const DenseDeformation d = upsample_svf(f, {13, 9, 11});
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_FLOAT_EQ(d.dx[i], 1.25f);
    EXPECT_EQ(d.dy[i], 0.0f);
    EXPECT_FLOAT_EQ(d.dz[i], -2.0f);
  }
}

TEST(UpsampleSvf, ControlNodesAreInterpolated) {
  auto rng = RandomStream::derive(4, {});
  const VelocityField f = sample_svf(1.0, {10, 10, 10}, rng);
  // 10 nodes spanning 28 voxels: node k sits on voxel 3k.
  const DenseDeformation d = upsample_svf(f, {28, 28, 28});
  for (int k = 0; k < 10; ++k) {
    const std::size_t dense = static_cast<std::size_t>(3 * k) + 28 * (3 * (9 - k) + 28 * static_cast<std::size_t>(3 * k));
    const std::size_t node = static_cast<std::size_t>(k) + 10 * ((9 - k) + 10 * static_cast<std::size_t>(k));
    EXPECT_NEAR(d.dx[dense], f.vx[node], 1e-6);
    EXPECT_NEAR(d.dy[dense], f.vy[node], 1e-6);
  }
  // Halfway between nodes 0 and 1 along x.
  const double mid = 0.5 * (f.vx[0] + f.vx[1]);
  const double at = 0.5 * (d.dx[1] + d.dx[2]);  // voxel 1.5 ~ node 0.5
  EXPECT_NEAR(at, mid, 1e-5);
  EXPECT_THROW(upsample_svf(f, {9, 28, 28}), Error);
}

TEST(Exponentiate, ZeroIsIdentity) {
  const DenseDeformation e = exponentiate(DenseDeformation({8, 8, 8}));
  EXPECT_TRUE(e.diffeomorphic);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(magnitude(e, i), 0.0);
  EXPECT_THROW(exponentiate(DenseDeformation({2, 2, 2}), 0), Error);
}

TEST(Exponentiate, ConstantFieldIsTranslation) {
  const Dims d{24, 24, 24};
  const Vec3 v{1.5, -0.7, 2.2};
  const DenseDeformation e = exponentiate(constant_field(d, v));
  for_interior(d, 1, [&](std::size_t i) {
    EXPECT_NEAR(e.dx[i], v[0], 1e-4);
    EXPECT_NEAR(e.dy[i], v[1], 1e-4);
    EXPECT_NEAR(e.dz[i], v[2], 1e-4);
  });
}

TEST(Exponentiate, MatchesFlowOracle) {
  // Oracle: RK4 integration of dx/dt = v(x) per voxel, edge-clamped like
  // the composition. The trilinear probe used for exp(v) o exp(-v) leaves
  // a residual even for the exact flow, so the bound is relative to it.
  const Dims d{64, 64, 64};
  const DenseDeformation v = random_velocity(d, 3.0, 5);
  const DenseDeformation ref_fwd = rk4_flow(v, 16), ref_bwd = rk4_flow(negate(v), 16);
  const DenseDeformation fwd = exponentiate(v), bwd = exponentiate(negate(v));
  EXPECT_LT(mean_distance(fwd, ref_fwd, 0), 0.05);
  const double exact = mean_magnitude(compose_fields(ref_fwd, ref_bwd), 8);
  const double ours = mean_magnitude(compose_fields(fwd, bwd), 8);
  EXPECT_LT(ours, exact + 0.025) << "oracle residual " << exact;
}

TEST(Exponentiate, StepDoublingConverges) {
  const Dims d{32, 32, 32};
  const DenseDeformation v = random_velocity(d, 3.0, 6);
  const DenseDeformation a = exponentiate(v, 4), b = exponentiate(v, 8), c = exponentiate(v, 16);
  const double coarse = mean_distance(a, b, 0), fine = mean_distance(b, c, 0);
  EXPECT_LT(fine, 0.1 * coarse);
  EXPECT_LT(fine, 0.005);
}

TEST(Exponentiate, PositiveJacobianForRandomFields) {
  const Dims d{64, 64, 64};
  for (std::uint64_t s = 0; s < 8; ++s) {
    const Volume j = jacobian_determinant(exponentiate(random_velocity(d, 3.0, 100 + s)));
    float lo = 1e9f;
    for (int z = 1; z < 63; ++z)
      for (int y = 1; y < 63; ++y)
        for (int x = 1; x < 63; ++x) lo = std::min(lo, j.at(x, y, z));
    EXPECT_GT(lo, 0.0f) << "field " << s;
  }
}

TEST(ComposeAffineNonlinear, Identities) {
  const Grid g = Grid::make({6, 5, 4}, {1.5, 1.0, 2.0}, {3, -1, 2});
  const DenseDeformation id = compose_affine_nonlinear(AffineMatrix::identity(), DenseDeformation(g.dims), g);
  for (std::size_t i = 0; i < id.size(); ++i) EXPECT_NEAR(magnitude(id, i), 0.0, 1e-12);

  AffineMatrix t = AffineMatrix::translation({3, 0, -2});
  t(0, 1) = 0.1;
  const DenseDeformation a = compose_affine_nonlinear(t, DenseDeformation(g.dims), g);
  const DenseDeformation b = affine_as_dense(t, g);
  EXPECT_EQ(a.dx, b.dx);
  // Oracle: world point of voxel p mapped by t, back to voxels.
  const AffineMatrix inv = invert(g.affine);
  const Vec3 q = inv.apply_point(t.apply_point(g.to_world({2, 3, 1})));
  const std::size_t i = g.index(2, 3, 1);
  EXPECT_NEAR(a.dx[i], q[0] - 2, 1e-6);
  EXPECT_NEAR(a.dy[i], q[1] - 3, 1e-6);
  EXPECT_NEAR(a.dz[i], q[2] - 1, 1e-6);
}

TEST(ComposeAffineNonlinear, TranslationsAddUp) {
  const Grid g = Grid::make({7, 7, 7}, {2.0, 1.0, 0.5});
  const DenseDeformation u = constant_field(g.dims, {0.25, -1.0, 3.0});
  const DenseDeformation r = compose_affine_nonlinear(AffineMatrix::translation({4.0, 1.0, -1.0}), u, g);
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_NEAR(r.dx[i], 0.25 + 4.0 / 2.0, 1e-6);
    EXPECT_NEAR(r.dy[i], -1.0 + 1.0 / 1.0, 1e-6);
    EXPECT_NEAR(r.dz[i], 3.0 - 1.0 / 0.5, 1e-6);
  }
  const DenseDeformation c = compose_fields(constant_field(g.dims, {1, 0, 0}), constant_field(g.dims, {0, 2, 0}));
  for_interior(g.dims, 2, [&](std::size_t k) {
    EXPECT_NEAR(c.dx[k], 1.0, 1e-6);
    EXPECT_NEAR(c.dy[k], 2.0, 1e-6);
  });
}

TEST(Jacobian, IdentityAndScaling) {
  const Dims d{6, 6, 6};
  const Volume jac_id = jacobian_determinant(DenseDeformation(d));
  for (float v : jac_id.values()) EXPECT_FLOAT_EQ(v, 1.0f);
  DenseDeformation s(d);
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        const std::size_t i = static_cast<std::size_t>(x + 6 * (y + 6 * z));
        s.dx[i] = static_cast<float>(x);
        s.dy[i] = static_cast<float>(y);
        s.dz[i] = static_cast<float>(z);
      }
  const Volume jac_scaled = jacobian_determinant(s);
  for (float v : jac_scaled.values()) EXPECT_FLOAT_EQ(v, 8.0f);
}
