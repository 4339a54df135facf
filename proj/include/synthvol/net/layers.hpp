#pragma once

// Building blocks with hand-written reverse passes. Convolutions use zero
// "same" padding and accumulate fixed-width x chunks so the inner loops
// vectorise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "synthvol/net/tensor.hpp"
#include "synthvol/random.hpp"

namespace synthvol::net {

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value, grad;

  Param() = default;
  Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }
  std::size_t size() const { return value.size(); }
};

namespace layers_detail {

inline constexpr int kChunk = 16;

/// Copy of `t` with `p` zero voxels added on every spatial side.
template <class T>
Tensor5<T> pad(const Tensor5<T>& t, int p) {
  if (p == 0) return t;
  Tensor5<T> out(t.n, t.c, t.x + 2 * p, t.y + 2 * p, t.z + 2 * p);
  for (int s = 0; s < t.n; ++s) {
    for (int ch = 0; ch < t.c; ++ch) {
      const T* src = t.channel(s, ch);
      T* dst = out.channel(s, ch);
      for (int z = 0; z < t.z; ++z) {
        for (int y = 0; y < t.y; ++y) {
          std::copy_n(src + (static_cast<std::size_t>(z) * t.y + y) * t.x, t.x,
                      dst + (static_cast<std::size_t>(z + p) * out.y + (y + p)) * out.x + p);
        }
      }
    }
  }
  return out;
}

// kChunk-wide lane vectors (GCC/Clang vector extension).
typedef float FloatLanes __attribute__((vector_size(kChunk * sizeof(float))));
typedef double DoubleLanes __attribute__((vector_size(kChunk * sizeof(double))));

template <class T>
struct LaneType;
template <>
struct LaneType<float> {
  using type = FloatLanes;
};
template <>
struct LaneType<double> {
  using type = DoubleLanes;
};
template <class T>
using Lanes = typename LaneType<T>::type;

template <class T>
inline Lanes<T> load(const T* p) {
  Lanes<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T>
inline void store(T* p, const Lanes<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

// OB output rows of one full x chunk, summed over input channels and taps.
template <class T, int OB>
inline void accumulate_block(T* const* out, const T* in_row0, std::size_t chan_stride, std::ptrdiff_t ystride,
                             std::ptrdiff_t zstride, const T* w, std::size_t wstride, int cin, int k) {
  Lanes<T> acc[OB];
  for (int b = 0; b < OB; ++b) acc[b] = load(out[b]);
  const T* wp = w;
  for (int i = 0; i < cin; ++i) {
    const T* base = in_row0 + static_cast<std::size_t>(i) * chan_stride;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        const T* row = base + kz * zstride + ky * ystride;
        for (int kx = 0; kx < k; ++kx, ++wp) {
          const Lanes<T> v = load(row + kx);
          for (int b = 0; b < OB; ++b) acc[b] += wp[b * wstride] * v;
        }
      }
    }
  }
  for (int b = 0; b < OB; ++b) store(out[b], acc[b]);
}

// Scalar fallback for partial chunks.
template <class T>
inline void accumulate_tail(T* out, const T* in_row0, std::size_t chan_stride, std::ptrdiff_t ystride,
                            std::ptrdiff_t zstride, const T* w, int cin, int k, int n) {
  const T* wp = w;
  for (int i = 0; i < cin; ++i) {
    const T* base = in_row0 + static_cast<std::size_t>(i) * chan_stride;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        const T* row = base + kz * zstride + ky * ystride;
        for (int kx = 0; kx < k; ++kx, ++wp) {
          for (int x = 0; x < n; ++x) out[x] += *wp * row[kx + x];
        }
      }
    }
  }
}

template <class T, int OB>
void correlate_rows(const Tensor5<T>& in_pad, const T* w, const T* bias, int o, int k, Tensor5<T>& out, int s) {
  const int X = out.x, Y = out.y, Z = out.z;
  const std::ptrdiff_t ystride = in_pad.x;
  const std::ptrdiff_t zstride = static_cast<std::ptrdiff_t>(in_pad.x) * in_pad.y;
  const std::size_t kk = static_cast<std::size_t>(k) * k * k;
  const int cin = in_pad.c;
  const std::size_t wstride = static_cast<std::size_t>(cin) * kk;
  const T* wo = w + static_cast<std::size_t>(o) * wstride;
  const T* in0 = in_pad.channel(s, 0);
  for (int b = 0; b < OB; ++b) std::fill_n(out.channel(s, o + b), out.plane(), bias ? bias[o + b] : T(0));
  T* rows[OB];
  for (int z = 0; z < Z; ++z) {
    for (int y = 0; y < Y; ++y) {
      const T* row0 = in0 + z * zstride + y * ystride;
      for (int x0 = 0; x0 < X; x0 += kChunk) {
        const int n = std::min(kChunk, X - x0);
        for (int b = 0; b < OB; ++b) rows[b] = out.channel(s, o + b) + (static_cast<std::size_t>(z) * Y + y) * X + x0;
        if (n == kChunk) {
          accumulate_block<T, OB>(rows, row0 + x0, in_pad.plane(), ystride, zstride, wo, wstride, cin, k);
        } else {
          for (int b = 0; b < OB; ++b) {
            accumulate_tail(rows[b], row0 + x0, in_pad.plane(), ystride, zstride, wo + b * wstride, cin, k, n);
          }
        }
      }
    }
  }
}

/// Valid correlation of a padded input with weights [cout][cin][k^3]:
/// out[o] = bias[o] + sum_i w[o][i] * in[i], output dims = padded - (k - 1).
template <class T>
void correlate(const Tensor5<T>& in_pad, const T* w, const T* bias, int cout, int k, Tensor5<T>& out) {
  constexpr int OB = 4;
  for (int s = 0; s < out.n; ++s) {
    int o = 0;
    for (; o + OB <= cout; o += OB) correlate_rows<T, OB>(in_pad, w, bias, o, k, out, s);
    for (; o < cout; ++o) correlate_rows<T, 1>(in_pad, w, bias, o, k, out, s);
  }
}

// Weight gradient for OB output channels against input channel i:
// g[b][tap] += sum over voxels of dout[o + b] * in_pad[i] shifted by tap.
template <class T, int OB>
void weight_grad_block(const Tensor5<T>& in_pad, const Tensor5<T>& dout, int s, int o, int i, int k, T* const* g) {
  const int X = dout.x, Y = dout.y, Z = dout.z;
  const T* src = in_pad.channel(s, i);
  const T* go[OB];
  for (int b = 0; b < OB; ++b) go[b] = dout.channel(s, o + b);
  std::size_t tap = 0;
  for (int kz = 0; kz < k; ++kz) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++tap) {
        Lanes<T> acc[OB] = {};
        T tail[OB] = {};
        for (int z = 0; z < Z; ++z) {
          for (int y = 0; y < Y; ++y) {
            const T* sp = src + (static_cast<std::size_t>(z + kz) * in_pad.y + (y + ky)) * in_pad.x + kx;
            const std::size_t r = (static_cast<std::size_t>(z) * Y + y) * X;
            int x0 = 0;
            for (; x0 + kChunk <= X; x0 += kChunk) {
              const Lanes<T> v = load(sp + x0);
              for (int b = 0; b < OB; ++b) acc[b] += load(go[b] + r + x0) * v;
            }
            for (int b = 0; b < OB; ++b)
              for (int x = x0; x < X; ++x) tail[b] += go[b][r + x] * sp[x];
          }
        }
        for (int b = 0; b < OB; ++b) {
          T sum = tail[b];
          for (int x = 0; x < kChunk; ++x) sum += acc[b][x];
          g[b][tap] += sum;
        }
      }
    }
  }
}

}  // namespace layers_detail

/// k x k x k convolution (k odd) with bias and zero "same" padding.
/// Weights laid out [out][in][kz][ky][kx].
template <class T>
struct Conv3d {
  int cin = 0, cout = 0, k = 3;
  std::size_t weight = 0, bias = 0;  // indices into the owning parameter list

  Tensor5<T> forward(const std::vector<Param<T>>& params, const Tensor5<T>& in) const {
    require(in.c == cin, "net", "conv input has " + std::to_string(in.c) + " channels, expected " + std::to_string(cin));
    Tensor5<T> out(in.n, cout, in.x, in.y, in.z);
    layers_detail::correlate(layers_detail::pad(in, k / 2), params[weight].value.data(), params[bias].value.data(),
                             cout, k, out);
    return out;
  }

  /// Accumulates weight and bias gradients; returns dL/din when wanted.
  Tensor5<T> backward(std::vector<Param<T>>& params, const Tensor5<T>& in, const Tensor5<T>& dout,
                      bool want_input_grad = true) const {
    const int p = k / 2;
    const std::size_t kk = static_cast<std::size_t>(k) * k * k;
    auto& gw = params[weight].grad;
    auto& gb = params[bias].grad;
    const Tensor5<T> in_pad = layers_detail::pad(in, p);
    constexpr int OB = 4;
    for (int s = 0; s < in.n; ++s) {
      for (int o = 0; o < cout; ++o) {
        const T* go = dout.channel(s, o);
        T acc = 0;
        for (std::size_t v = 0; v < dout.plane(); ++v) acc += go[v];
        gb[o] += acc;
      }
      for (int i = 0; i < cin; ++i) {
        int o = 0;
        T* g[OB];
        for (; o + OB <= cout; o += OB) {
          for (int b = 0; b < OB; ++b) g[b] = gw.data() + (static_cast<std::size_t>(o + b) * cin + i) * kk;
          layers_detail::weight_grad_block<T, OB>(in_pad, dout, s, o, i, k, g);
        }
        for (; o < cout; ++o) {
          g[0] = gw.data() + (static_cast<std::size_t>(o) * cin + i) * kk;
          layers_detail::weight_grad_block<T, 1>(in_pad, dout, s, o, i, k, g);
        }
      }
    }
    if (!want_input_grad) return {};
    // dL/din is the correlation of the padded output gradient with the
    // transposed, spatially flipped kernel.
    const auto& w = params[weight].value;
    std::vector<T> wt(w.size());
    for (int o = 0; o < cout; ++o) {
      for (int i = 0; i < cin; ++i) {
        const T* src = w.data() + (static_cast<std::size_t>(o) * cin + i) * kk;
        T* dst = wt.data() + (static_cast<std::size_t>(i) * cout + o) * kk;
        for (std::size_t t = 0; t < kk; ++t) dst[t] = src[kk - 1 - t];
      }
    }
    Tensor5<T> din(in.n, cin, in.x, in.y, in.z);
    layers_detail::correlate(layers_detail::pad(dout, p), wt.data(), static_cast<const T*>(nullptr), cin, k, din);
    return din;
  }
};

/// Uniform fan-in initialisation, bound sqrt(6 / fan_in); zero biases.
template <class T>
void init_conv(std::vector<Param<T>>& params, const Conv3d<T>& conv, RandomStream& rng, bool zero = false) {
  const double fan_in = static_cast<double>(conv.cin) * conv.k * conv.k * conv.k;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : params[conv.weight].value) v = zero ? T(0) : static_cast<T>(rng.uniform(-bound, bound));
  for (auto& v : params[conv.bias].value) v = T(0);
}

template <class T>
Tensor5<T> elu(const Tensor5<T>& in) {
  Tensor5<T> out = in;
  for (auto& v : out.data) v = v > T(0) ? v : std::expm1(v);
  return out;
}

/// Uses the ELU output: d/dx = 1 for x > 0, else y + 1.
template <class T>
Tensor5<T> elu_backward(const Tensor5<T>& out, const Tensor5<T>& dout) {
  Tensor5<T> din = dout;
  for (std::size_t i = 0; i < din.size(); ++i) {
    if (!(out.data[i] > T(0))) din.data[i] *= out.data[i] + T(1);
  }
  return din;
}

/// 2x2x2 max pooling; `argmax` receives the winning offset within each input plane.
template <class T>
Tensor5<T> maxpool2(const Tensor5<T>& in, std::vector<std::uint32_t>& argmax) {
  require(in.x % 2 == 0 && in.y % 2 == 0 && in.z % 2 == 0, "net", "max pooling needs even dims, got " + in.shape_string());
  Tensor5<T> out(in.n, in.c, in.x / 2, in.y / 2, in.z / 2);
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (int s = 0; s < in.n; ++s) {
    for (int ch = 0; ch < in.c; ++ch) {
      const T* src = in.channel(s, ch);
      for (int z = 0; z < out.z; ++z) {
        for (int y = 0; y < out.y; ++y) {
          for (int x = 0; x < out.x; ++x, ++o) {
            std::size_t best = (static_cast<std::size_t>(2 * z) * in.y + 2 * y) * in.x + 2 * x;
            for (int c = 0; c < 8; ++c) {
              const std::size_t off = (static_cast<std::size_t>(2 * z + (c >> 2)) * in.y + 2 * y + ((c >> 1) & 1)) * in.x +
                                      2 * x + (c & 1);
              if (src[off] > src[best]) best = off;
            }
            out.data[o] = src[best];
            argmax[o] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor5<T> maxpool2_backward(const Tensor5<T>& dout, const std::vector<std::uint32_t>& argmax, int x, int y, int z) {
  Tensor5<T> din(dout.n, dout.c, x, y, z);
  const std::size_t p = dout.plane();
  for (int s = 0; s < dout.n; ++s) {
    for (int ch = 0; ch < dout.c; ++ch) {
      T* dst = din.channel(s, ch);
      const T* g = dout.channel(s, ch);
      const std::uint32_t* am = argmax.data() + (static_cast<std::size_t>(s) * dout.c + ch) * p;
      for (std::size_t i = 0; i < p; ++i) dst[am[i]] += g[i];
    }
  }
  return din;
}

/// Nearest-neighbour x2 upsampling.
template <class T>
Tensor5<T> upsample2(const Tensor5<T>& in) {
  Tensor5<T> out(in.n, in.c, 2 * in.x, 2 * in.y, 2 * in.z);
  for (int s = 0; s < in.n; ++s) {
    for (int ch = 0; ch < in.c; ++ch) {
      const T* src = in.channel(s, ch);
      T* dst = out.channel(s, ch);
      for (int z = 0; z < out.z; ++z) {
        for (int y = 0; y < out.y; ++y) {
          const T* row = src + (static_cast<std::size_t>(z / 2) * in.y + y / 2) * in.x;
          T* drow = dst + (static_cast<std::size_t>(z) * out.y + y) * out.x;
          for (int x = 0; x < out.x; ++x) drow[x] = row[x / 2];
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor5<T> upsample2_backward(const Tensor5<T>& dout) {
  Tensor5<T> din(dout.n, dout.c, dout.x / 2, dout.y / 2, dout.z / 2);
  for (int s = 0; s < dout.n; ++s) {
    for (int ch = 0; ch < dout.c; ++ch) {
      const T* g = dout.channel(s, ch);
      T* dst = din.channel(s, ch);
      for (int z = 0; z < dout.z; ++z) {
        for (int y = 0; y < dout.y; ++y) {
          const T* row = g + (static_cast<std::size_t>(z) * dout.y + y) * dout.x;
          T* drow = dst + (static_cast<std::size_t>(z / 2) * din.y + y / 2) * din.x;
          for (int x = 0; x < dout.x; ++x) drow[x / 2] += row[x];
        }
      }
    }
  }
  return din;
}

}  // namespace synthvol::net
