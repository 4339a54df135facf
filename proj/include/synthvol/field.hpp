#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace synthvol {

using Dims = std::array<int, 3>;

inline std::size_t voxel_count(const Dims& d) {
  return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
}

/// Dense displacement field in voxel units. Point p maps to p + u(p).
struct DenseDeformation {
  Dims dims{1, 1, 1};
  std::vector<float> dx, dy, dz;
  bool diffeomorphic = false;

  DenseDeformation() = default;
  explicit DenseDeformation(const Dims& d)
      : dims(d), dx(voxel_count(d), 0.0f), dy(voxel_count(d), 0.0f), dz(voxel_count(d), 0.0f) {}

  std::size_t size() const { return dx.size(); }
};

}  // namespace synthvol
