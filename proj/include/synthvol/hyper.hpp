#pragma once

// Estimation of GMM hyperparameters from a handful of real scans with rough
// segmentations: robust per-class statistics per scan, variance rescaling
// for the acquisition resolution, then a Gaussian fit across scans with the
// spreads widened.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "synthvol/error.hpp"
#include "synthvol/intensity.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

inline constexpr double kMadToSigma = 1.4826;
inline constexpr double kDefaultWiden = 5.0;

struct RobustStats {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Median and 1.4826 * median absolute deviation.
inline RobustStats robust_stats(const std::vector<double>& values) {
  if (values.empty()) fail(Errc::invalid_argument, "hyper", "robust statistics of an empty list");
  const double m = median(values);
  std::vector<double> dev(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - m);
  return {m, kMadToSigma * median(std::move(dev))};
}

enum class VarianceScaling {
  sum,      // (1^T r_c) / (1^T r_targ)
  product,  // prod(r_c) / prod(r_targ), the voxel volume ratio
};

inline double variance_scale_factor(const Vec3& r_c, const Vec3& r_targ, VarianceScaling mode = VarianceScaling::sum) {
  for (int i = 0; i < 3; ++i) require(r_c[i] > 0.0 && r_targ[i] > 0.0, "hyper", "resolutions must be positive");
  if (mode == VarianceScaling::sum) {
    return (r_c[0] + r_c[1] + r_c[2]) / (r_targ[0] + r_targ[1] + r_targ[2]);
  }
  return (r_c[0] * r_c[1] * r_c[2]) / (r_targ[0] * r_targ[1] * r_targ[2]);
}

inline double scale_variance(double variance, const Vec3& r_c, const Vec3& r_targ,
                             VarianceScaling mode = VarianceScaling::sum) {
  return variance * variance_scale_factor(r_c, r_targ, mode);
}

struct ScanObservation {
  Volume image;
  LabelMap labels;
  int channel = 0;
};

/// Robust (mu, sigma) for each class present in one scan.
struct ScanEstimate {
  int channel = 0;
  std::map<Label, RobustStats> per_class;
};

struct EstimateOptions {
  bool normalize = true;  // min-max normalise each scan before estimation
  VarianceScaling scaling = VarianceScaling::sum;
  Vec3 r_targ{1.0, 1.0, 1.0};
  double widen_factor = kDefaultWiden;
  double floor_fraction = 0.05;  // single-scan spread floor, relative
  double floor_epsilon = 1e-6;   // and absolute
};

inline ScanEstimate estimate_scan(const ScanObservation& obs, const EstimateOptions& opt) {
  require(obs.image.dims() == obs.labels.dims(), "hyper", "image and label grids differ");
  require(obs.channel >= 0, "hyper", "channel must be non-negative");
  const Volume img = opt.normalize ? minmax_normalize(obs.image) : obs.image;
  std::map<Label, std::vector<double>> values;
  for (std::size_t i = 0; i < img.size(); ++i) values[obs.labels[i]].push_back(img[i]);
  const double factor = variance_scale_factor(obs.image.grid().spacing, opt.r_targ, opt.scaling);
  ScanEstimate est;
  est.channel = obs.channel;
  for (auto& [label, v] : values) {
    RobustStats s = robust_stats(v);
    s.sigma = std::sqrt(s.sigma * s.sigma * factor);
    est.per_class.emplace(label, s);
  }
  return est;
}

namespace hyper_detail {

inline double floor_for(double mean, const EstimateOptions& opt) {
  return opt.floor_fraction * std::abs(mean) + opt.floor_epsilon;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Population mean and standard deviation (divisor n). The spread never
// drops below a relative floor, so a single scan or identical estimates
// still give a proper prior.
inline MeanStd fit(const std::vector<double>& v, const EstimateOptions& opt) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double std = std::sqrt(ss / static_cast<double>(v.size()));
  return {mean, std::max(std, floor_for(mean, opt))};
}

}  // namespace hyper_detail

/// Fits the hyper priors across scans. `labels` fixes the class list (and
/// order); when empty, every label seen in any scan is used.
inline GmmHyper fit_hyper(const std::vector<ScanEstimate>& scans, const EstimateOptions& opt,
                          std::vector<Label> labels = {}) {
  require(!scans.empty(), "hyper", "no scan estimates");
  require(opt.widen_factor >= 0.0, "hyper", "widen factor must be non-negative");
  int channels = 0;
  for (const auto& s : scans) channels = std::max(channels, s.channel + 1);
  if (labels.empty()) {
    std::set<Label> all;
    for (const auto& s : scans) {
      for (const auto& kv : s.per_class) all.insert(kv.first);
    }
    labels.assign(all.begin(), all.end());
  }
  GmmHyper h;
  h.labels = labels;
  h.channels = channels;
  const Matrix2 zeros(labels.size(), std::vector<double>(static_cast<std::size_t>(channels), 0.0));
  h.m_mu = h.a_mu = h.m_sigma = h.a_sigma = zeros;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (int c = 0; c < channels; ++c) {
      std::vector<double> mus, sigmas;
      for (const auto& s : scans) {
        if (s.channel != c) continue;
        auto it = s.per_class.find(labels[k]);
        if (it == s.per_class.end()) continue;
        mus.push_back(it->second.mu);
        sigmas.push_back(it->second.sigma);
      }
      if (mus.empty()) {
        fail(Errc::invalid_argument, "hyper",
             "class " + std::to_string(labels[k]) + " absent from every scan of channel " + std::to_string(c));
      }
      const auto fm = hyper_detail::fit(mus, opt);
      const auto fs = hyper_detail::fit(sigmas, opt);
      h.m_mu[k][c] = fm.mean;
      h.a_mu[k][c] = opt.widen_factor * fm.std;
      h.m_sigma[k][c] = std::max(0.0, fs.mean);
      h.a_sigma[k][c] = opt.widen_factor * fs.std;
    }
  }
  h.validate();
  return h;
}

inline GmmHyper estimate_hyper(const std::vector<ScanObservation>& scans, const EstimateOptions& opt,
                               std::vector<Label> labels = {}) {
  std::vector<ScanEstimate> est;
  est.reserve(scans.size());
  for (const auto& s : scans) est.push_back(estimate_scan(s, opt));
  return fit_hyper(est, opt, std::move(labels));
}

}  // namespace synthvol
