#pragma once

// Procedural head-like label maps for tests and toy training runs:
// background, an outer shell, an inner body and a few spherical blobs.

#include <cmath>
#include <vector>

#include "synthvol/error.hpp"
#include "synthvol/random.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

/// Labels 0 .. classes-1 (3 to 5 classes) on an isotropic grid.
inline LabelMap make_phantom(const Dims& dims, int classes, RandomStream& rng, Vec3 spacing = {1.0, 1.0, 1.0}) {
  require(classes >= 3 && classes <= 5, "phantom", "phantoms have 3 to 5 classes");
  for (int d : dims) require(d >= 8, "phantom", "phantom dims must be at least 8");
  LabelMap l(Grid::make(dims, spacing));
  const Vec3 c{(dims[0] - 1) / 2.0 + rng.uniform(-1.0, 1.0), (dims[1] - 1) / 2.0 + rng.uniform(-1.0, 1.0),
               (dims[2] - 1) / 2.0 + rng.uniform(-1.0, 1.0)};
  Vec3 outer{}, inner{};
  for (int a = 0; a < 3; ++a) {
    outer[a] = dims[a] * rng.uniform(0.40, 0.46);
    inner[a] = outer[a] * rng.uniform(0.70, 0.80);
  }
  struct Blob {
    Vec3 c;
    double r;
    Label label;
  };
  std::vector<Blob> blobs;
  const int nblobs = classes > 3 ? 2 + static_cast<int>(rng.uniform_index(3)) : 0;
  for (int b = 0; b < nblobs; ++b) {
    Blob blob;
    for (int a = 0; a < 3; ++a) blob.c[a] = c[a] + rng.uniform(-0.5, 0.5) * inner[a];
    blob.r = rng.uniform(0.12, 0.25) * std::min({inner[0], inner[1], inner[2]}) * 2.0;
    blob.label = static_cast<Label>(3 + b % (classes - 3));
    blobs.push_back(blob);
  }
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        const Vec3 p{x - c[0], y - c[1], z - c[2]};
        auto ellipse = [&](const Vec3& r) {
          return p[0] * p[0] / (r[0] * r[0]) + p[1] * p[1] / (r[1] * r[1]) + p[2] * p[2] / (r[2] * r[2]);
        };
        Label v = 0;
        if (ellipse(outer) <= 1.0) v = 1;
        if (ellipse(inner) <= 1.0) {
          v = 2;
          for (const auto& b : blobs) {
            const Vec3 q{x - b.c[0], y - b.c[1], z - b.c[2]};
            if (norm(q) <= b.r) v = b.label;
          }
        }
        l.at(x, y, z) = v;
      }
    }
  }
  return l;
}

}  // namespace synthvol
