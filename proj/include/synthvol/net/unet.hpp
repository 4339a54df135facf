#pragma once

// 3D U-net regressor: per level two conv+ELU layers, max pooling on the way
// down, nearest upsampling and skip concatenation on the way up, then a
// linear 1x1x1 convolution. Level l carries base * 2^l features.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthvol/net/layers.hpp"
#include "synthvol/net/tensor.hpp"
#include "synthvol/random.hpp"

namespace synthvol::net {

struct UNetConfig {
  int levels = 5;
  int base_features = 24;
  int in_channels = 2;
  int out_channels = 1;
  int kernel = 3;

  int features(int level) const { return base_features << level; }
  int divisor() const { return 1 << (levels - 1); }

  void validate() const {
    require(levels >= 1 && levels <= 12, "net", "levels must be in [1, 12]");
    require(base_features >= 1, "net", "base_features must be positive");
    require(in_channels >= 1 && out_channels >= 1, "net", "channel counts must be positive");
    require(kernel >= 1 && kernel % 2 == 1, "net", "kernel size must be odd");
  }

  bool operator==(const UNetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = nlohmann::json{{"levels", c.levels},
                     {"base_features", c.base_features},
                     {"in_channels", c.in_channels},
                     {"out_channels", c.out_channels},
                     {"kernel", c.kernel}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.levels = j.value("levels", c.levels);
  c.base_features = j.value("base_features", c.base_features);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.kernel = j.value("kernel", c.kernel);
  c.validate();
}

template <class T>
class UNet {
 public:
  struct Cache {
    std::vector<Tensor5<T>> enc_in, enc_a, enc_b;  // conv inputs and ELU outputs per level
    std::vector<std::vector<std::uint32_t>> pool_idx;
    std::vector<Tensor5<T>> dec_cat, dec_a, dec_b;
    Tensor5<T> head_in;
  };

  UNet() : UNet(UNetConfig{}) {}

  explicit UNet(const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int L = cfg_.levels;
    enc_.resize(static_cast<std::size_t>(L));
    dec_.resize(static_cast<std::size_t>(L > 1 ? L - 1 : 0));
    for (int l = 0; l < L; ++l) {
      const int cin = l == 0 ? cfg_.in_channels : cfg_.features(l - 1);
      enc_[l][0] = add_conv("enc" + std::to_string(l) + ".conv0", cin, cfg_.features(l), cfg_.kernel);
      enc_[l][1] = add_conv("enc" + std::to_string(l) + ".conv1", cfg_.features(l), cfg_.features(l), cfg_.kernel);
    }
    for (int l = L - 2; l >= 0; --l) {
      dec_[l][0] = add_conv("dec" + std::to_string(l) + ".conv0", cfg_.features(l + 1) + cfg_.features(l),
                            cfg_.features(l), cfg_.kernel);
      dec_[l][1] = add_conv("dec" + std::to_string(l) + ".conv1", cfg_.features(l), cfg_.features(l), cfg_.kernel);
    }
    head_ = add_conv("head", cfg_.features(0), cfg_.out_channels, 1);
  }

  const UNetConfig& config() const { return cfg_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// Output feature width of each encoder level, from the built layers.
  std::vector<int> level_widths() const {
    std::vector<int> w;
    for (const auto& e : enc_) w.push_back(e[1].cout);
    return w;
  }

  /// Fan-in uniform kernels and zero biases; the head starts at zero unless
  /// `zero_head` is false.
  void initialize(RandomStream& rng, bool zero_head = true) {
    for (const auto& e : enc_) {
      init_conv(params_, e[0], rng);
      init_conv(params_, e[1], rng);
    }
    for (const auto& d : dec_) {
      init_conv(params_, d[0], rng);
      init_conv(params_, d[1], rng);
    }
    init_conv(params_, head_, rng, zero_head);
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  void check_input(const Tensor5<T>& x) const {
    require(x.c == cfg_.in_channels, "net",
            "input has " + std::to_string(x.c) + " channels, network expects " + std::to_string(cfg_.in_channels));
    const int d = cfg_.divisor();
    require(x.x % d == 0 && x.y % d == 0 && x.z % d == 0, "net",
            "spatial dims " + x.shape_string() + " must be divisible by " + std::to_string(d));
  }

  Tensor5<T> forward(const Tensor5<T>& x) const {
    Cache c;
    return forward(x, c);
  }

  Tensor5<T> forward(const Tensor5<T>& x, Cache& c) const {
    check_input(x);
    const int L = cfg_.levels;
    c = Cache{};
    c.pool_idx.resize(static_cast<std::size_t>(L));
    c.dec_cat.resize(dec_.size());
    c.dec_a.resize(dec_.size());
    c.dec_b.resize(dec_.size());
    Tensor5<T> h = x;
    for (int l = 0; l < L; ++l) {
      if (l > 0) h = maxpool2(h, c.pool_idx[l]);
      c.enc_in.push_back(h);
      c.enc_a.push_back(elu(enc_[l][0].forward(params_, h)));
      c.enc_b.push_back(elu(enc_[l][1].forward(params_, c.enc_a.back())));
      h = c.enc_b.back();
    }
    for (int l = L - 2; l >= 0; --l) {
      c.dec_cat[l] = concat_channels(upsample2(h), c.enc_b[l]);
      c.dec_a[l] = elu(dec_[l][0].forward(params_, c.dec_cat[l]));
      c.dec_b[l] = elu(dec_[l][1].forward(params_, c.dec_a[l]));
      h = c.dec_b[l];
    }
    c.head_in = h;
    return head_.forward(params_, h);
  }

  /// Accumulates parameter gradients given dL/d(output).
  void backward(const Cache& c, const Tensor5<T>& dout) {
    const int L = cfg_.levels;
    Tensor5<T> g = head_.backward(params_, c.head_in, dout);
    std::vector<Tensor5<T>> skip_grad(static_cast<std::size_t>(L));
    for (int l = 0; l <= L - 2; ++l) {
      g = elu_backward(c.dec_b[l], g);
      g = dec_[l][1].backward(params_, c.dec_a[l], g);
      g = elu_backward(c.dec_a[l], g);
      g = dec_[l][0].backward(params_, c.dec_cat[l], g);
      Tensor5<T> g_up;
      split_channels(g, cfg_.features(l + 1), g_up, skip_grad[l]);
      g = upsample2_backward(g_up);
    }
    for (int l = L - 1; l >= 0; --l) {
      if (l < L - 1) {
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grad[l].data[i];
      }
      g = elu_backward(c.enc_b[l], g);
      g = enc_[l][1].backward(params_, c.enc_a[l], g);
      g = elu_backward(c.enc_a[l], g);
      g = enc_[l][0].backward(params_, c.enc_in[l], g, l > 0);
      if (l > 0) {
        const auto& below = c.enc_b[l - 1];
        g = maxpool2_backward(g, c.pool_idx[l], below.x, below.y, below.z);
      }
    }
  }

 private:
  Conv3d<T> add_conv(const std::string& name, int cin, int cout, int k) {
    Conv3d<T> conv;
    conv.cin = cin;
    conv.cout = cout;
    conv.k = k;
    conv.weight = params_.size();
    params_.emplace_back(name + ".weight", std::vector<int>{cout, cin, k, k, k});
    conv.bias = params_.size();
    params_.emplace_back(name + ".bias", std::vector<int>{cout});
    return conv;
  }

  UNetConfig cfg_;
  std::vector<Param<T>> params_;
  std::vector<std::array<Conv3d<T>, 2>> enc_, dec_;
  Conv3d<T> head_;
};

/// Mean absolute error.
template <class T>
double l1_loss(const Tensor5<T>& pred, const Tensor5<T>& target) {
  require(pred.same_shape(target), "loss", "prediction " + pred.shape_string() + " and target " +
                                               target.shape_string() + " differ");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(static_cast<double>(pred.data[i]) - target.data[i]);
  return s / static_cast<double>(pred.size());
}

/// d(l1_loss)/d(pred) scaled by `scale`; the subgradient at zero is 0.
template <class T>
Tensor5<T> l1_loss_grad(const Tensor5<T>& pred, const Tensor5<T>& target, double scale = 1.0) {
  require(pred.same_shape(target), "loss", "prediction and target shapes differ");
  Tensor5<T> g = pred;
  const T w = static_cast<T>(scale / static_cast<double>(pred.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = pred.data[i] - target.data[i];
    g.data[i] = d > T(0) ? w : (d < T(0) ? -w : T(0));
  }
  return g;
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;

  void resize_for(const std::vector<Param<T>>& params) {
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].size(), T(0));
      v[i].assign(params[i].size(), T(0));
    }
  }
};

/// One bias-corrected Adam update from the accumulated gradients.
template <class T>
void adam_step(std::vector<Param<T>>& params, AdamState<T>& st, const AdamOptions& opt = {}) {
  if (st.m.size() != params.size()) st.resize_for(params);
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& val = params[p].value;
    const auto& g = params[p].grad;
    auto& m = st.m[p];
    auto& v = st.v[p];
    require(m.size() == val.size() && v.size() == val.size(), "adam", "optimizer state does not match parameters");
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = g[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = opt.lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps);
      if (update != 0.0) val[i] = static_cast<T>(val[i] - update);
    }
  }
}

}  // namespace synthvol::net
