#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "synthvol/error.hpp"

namespace synthvol::net {

/// Dense (batch, channel, x, y, z) tensor, x fastest in memory.
template <class T>
struct Tensor5 {
  int n = 0, c = 0, x = 0, y = 0, z = 0;
  std::vector<T> data;

  Tensor5() = default;
  Tensor5(int n_, int c_, int x_, int y_, int z_) : n(n_), c(c_), x(x_), y(y_), z(z_) {
    require(n > 0 && c > 0 && x > 0 && y > 0 && z > 0, "net", "tensor dims must be positive");
    data.assign(static_cast<std::size_t>(n) * c * plane(), T(0));
  }

  std::size_t plane() const { return static_cast<std::size_t>(x) * y * z; }
  std::size_t size() const { return data.size(); }
  std::array<int, 3> spatial() const { return {x, y, z}; }
  bool same_shape(const Tensor5& o) const { return n == o.n && c == o.c && x == o.x && y == o.y && z == o.z; }

  T* channel(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane(); }
  const T* channel(int b, int ch) const { return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane(); }

  T& at(int b, int ch, int i, int j, int k) {
    return channel(b, ch)[(static_cast<std::size_t>(k) * y + j) * x + i];
  }
  T at(int b, int ch, int i, int j, int k) const {
    return channel(b, ch)[(static_cast<std::size_t>(k) * y + j) * x + i];
  }

  std::string shape_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(x) + "," + std::to_string(y) +
           "," + std::to_string(z) + ")";
  }
};

template <class T>
bool all_finite(const Tensor5<T>& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(v); });
}

/// Channel concatenation [a, b].
template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  require(a.n == b.n && a.spatial() == b.spatial(), "net", "concat shape mismatch");
  Tensor5<T> out(a.n, a.c + b.c, a.x, a.y, a.z);
  const std::size_t p = a.plane();
  for (int s = 0; s < a.n; ++s) {
    std::copy_n(a.channel(s, 0), a.c * p, out.channel(s, 0));
    std::copy_n(b.channel(s, 0), b.c * p, out.channel(s, a.c));
  }
  return out;
}

/// Inverse of concat_channels for gradients: channels [0, ca) and [ca, c).
template <class T>
void split_channels(const Tensor5<T>& g, int ca, Tensor5<T>& a, Tensor5<T>& b) {
  a = Tensor5<T>(g.n, ca, g.x, g.y, g.z);
  b = Tensor5<T>(g.n, g.c - ca, g.x, g.y, g.z);
  const std::size_t p = g.plane();
  for (int s = 0; s < g.n; ++s) {
    std::copy_n(g.channel(s, 0), ca * p, a.channel(s, 0));
    std::copy_n(g.channel(s, ca), (g.c - ca) * p, b.channel(s, 0));
  }
}

}  // namespace synthvol::net
