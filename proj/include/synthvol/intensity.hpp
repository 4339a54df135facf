#pragma once

// HR intensity synthesis: label-conditioned Gaussian mixture sampling,
// gamma augmentation, smooth multiplicative bias fields and the light
// realism blur applied to synthetic HR images.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthvol/deform.hpp"
#include "synthvol/error.hpp"
#include "synthvol/filter.hpp"
#include "synthvol/random.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

using Matrix2 = std::vector<std::vector<double>>;  // [class][channel]

/// Priors over per-class, per-channel means and standard deviations.
/// mu ~ N(m_mu, a_mu^2); sigma ~ N(m_sigma, a_sigma^2) truncated at zero.
struct GmmHyper {
  std::vector<Label> labels;
  int channels = 1;
  Matrix2 m_mu, a_mu, m_sigma, a_sigma;

  std::size_t classes() const { return labels.size(); }

  std::size_t class_index(Label l) const {
    auto it = std::find(labels.begin(), labels.end(), l);
    if (it == labels.end()) fail(Errc::invalid_argument, "gmm", "label " + std::to_string(l) + " missing from GMM");
    return static_cast<std::size_t>(it - labels.begin());
  }

  /// Hyper with fixed parameters (zero prior spread) for every class.
  static GmmHyper fixed(std::vector<Label> labels, const Matrix2& mu, const Matrix2& sigma) {
    GmmHyper h;
    h.labels = std::move(labels);
    h.channels = mu.empty() ? 1 : static_cast<int>(mu.front().size());
    h.m_mu = mu;
    h.m_sigma = sigma;
    h.a_mu = Matrix2(mu.size(), std::vector<double>(static_cast<std::size_t>(h.channels), 0.0));
    h.a_sigma = h.a_mu;
    h.validate();
    return h;
  }

  void validate() const {
    require(!labels.empty(), "gmm", "GMM needs at least one class");
    require(channels >= 1, "gmm", "GMM needs at least one channel");
    const std::size_t k = labels.size();
    for (const Matrix2* m : {&m_mu, &a_mu, &m_sigma, &a_sigma}) {
      require(m->size() == k, "gmm", "hyperparameter tables must have one row per label");
      for (const auto& row : *m) {
        require(row.size() == static_cast<std::size_t>(channels), "gmm", "hyperparameter rows must have one entry per channel");
        for (double v : row) require(std::isfinite(v), "gmm", "hyperparameters must be finite");
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (int c = 0; c < channels; ++c) {
        require(a_mu[i][c] >= 0.0 && a_sigma[i][c] >= 0.0, "gmm", "prior spreads must be non-negative");
        require(m_sigma[i][c] >= 0.0, "gmm", "m_sigma must be non-negative");
      }
    }
    std::vector<Label> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "gmm", "duplicate labels in GMM");
  }
};

inline void to_json(nlohmann::json& j, const GmmHyper& h) {
  j = nlohmann::json{{"labels", h.labels}, {"channels", h.channels}, {"m_mu", h.m_mu},
                     {"a_mu", h.a_mu},     {"m_sigma", h.m_sigma},   {"a_sigma", h.a_sigma}};
}

inline void from_json(const nlohmann::json& j, GmmHyper& h) {
  j.at("labels").get_to(h.labels);
  j.at("channels").get_to(h.channels);
  j.at("m_mu").get_to(h.m_mu);
  j.at("a_mu").get_to(h.a_mu);
  j.at("m_sigma").get_to(h.m_sigma);
  j.at("a_sigma").get_to(h.a_sigma);
  h.validate();
}

/// Realised mixture parameters for one sample.
struct GmmDraw {
  std::vector<Label> labels;
  Matrix2 mu, sigma;  // [class][channel]
};

/// Draws channel `c` only; used with one substream per channel so channels
/// stay independent.
inline void sample_gmm_channel(const GmmHyper& h, int c, RandomStream& rng, GmmDraw& out) {
  for (std::size_t k = 0; k < h.classes(); ++k) {
    out.mu[k][c] = rng.normal(h.m_mu[k][c], h.a_mu[k][c]);
    out.sigma[k][c] = rng.truncated_normal_nonneg(h.m_sigma[k][c], h.a_sigma[k][c]);
  }
}

inline GmmDraw empty_draw(const GmmHyper& h) {
  GmmDraw d;
  d.labels = h.labels;
  d.mu = Matrix2(h.classes(), std::vector<double>(static_cast<std::size_t>(h.channels), 0.0));
  d.sigma = d.mu;
  return d;
}

inline GmmDraw sample_gmm_params(const GmmHyper& h, RandomStream& rng) {
  h.validate();
  GmmDraw d = empty_draw(h);
  for (int c = 0; c < h.channels; ++c) sample_gmm_channel(h, c, rng, d);
  return d;
}

/// Per-voxel Gaussian intensities conditioned on the labels.
inline Volume synthesize_intensities(const LabelMap& l, const GmmDraw& d, int channel, RandomStream& rng) {
  require(channel >= 0 && !d.mu.empty() && channel < static_cast<int>(d.mu.front().size()), "gmm",
          "channel out of range");
  std::unordered_map<Label, std::size_t> lut;
  for (std::size_t k = 0; k < d.labels.size(); ++k) lut.emplace(d.labels[k], k);
  Volume g(l.grid());
  for (std::size_t i = 0; i < l.size(); ++i) {
    auto it = lut.find(l[i]);
    if (it == lut.end()) {
      fail(Errc::invalid_argument, "gmm", "label " + std::to_string(l[i]) + " has no mixture component");
    }
    const std::size_t k = it->second;
    g[i] = static_cast<float>(rng.normal(d.mu[k][channel], d.sigma[k][channel]));
  }
  return g;
}

/// min + (max - min) * ((g - min) / (max - min))^gamma. Constant inputs are
/// returned unchanged.
inline Volume gamma_augment(const Volume& g, double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), "gamma", "gamma must be positive");
  const MinMax w = minmax_of(g);
  if (!(w.hi > w.lo)) return g;
  Volume out(g.grid());
  const double range = w.hi - w.lo;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = std::clamp((g[i] - w.lo) / range, 0.0, 1.0);
    out[i] = static_cast<float>(w.lo + range * std::pow(t, gamma));
  }
  // Endpoints are fixed points of the map; pin them against rounding.
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] == static_cast<float>(w.lo) || g[i] == static_cast<float>(w.hi)) out[i] = g[i];
  }
  return out;
}

inline double sample_gamma(const Range& r, RandomStream& rng) { return rng.uniform(r[0], r[1]); }

struct BiasField {
  Volume field;  // strictly positive multiplicative field
  Dims control{4, 4, 4};
  double sigma = 0.0;
  std::vector<float> control_log;  // control-grid log values
};

/// exp of a trilinearly upsampled N(0, sigma^2) control grid.
inline BiasField sample_bias(const Grid& grid, double sigma, const Dims& control, RandomStream& rng) {
  require(sigma >= 0.0 && std::isfinite(sigma), "bias", "bias sigma must be non-negative");
  BiasField b;
  b.control = control;
  b.sigma = sigma;
  b.control_log.resize(voxel_count(control));
  for (auto& v : b.control_log) v = static_cast<float>(rng.normal(0.0, sigma));
  std::vector<float> dense = upsample_control(b.control_log, control, grid.dims);
  for (auto& v : dense) v = std::exp(v);
  b.field = Volume(grid, std::move(dense));
  return b;
}

inline Volume apply_bias(const Volume& g, const BiasField& b) {
  if (g.dims() != b.field.dims()) fail(Errc::invalid_argument, "bias", "bias field grid does not match volume");
  Volume out(g.grid());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * b.field[i];
  return out;
}

inline constexpr double kHrBlurMm = 0.5;

/// Light isotropic blur of synthetic HR volumes, width in mm.
inline Volume blur_hr(const Volume& g, double sigma_mm = kHrBlurMm) { return gaussian_blur_mm(g, sigma_mm); }

}  // namespace synthvol
