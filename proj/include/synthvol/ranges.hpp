#pragma once

#include <array>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "synthvol/error.hpp"

namespace synthvol {

using Range = std::array<double, 2>;

/// Sampling ranges and variances of the generative model. Defaults are the
/// published hyperparameter row: rotations and registration rotations in
/// degrees, translations in mm, SVF variance in voxels^2 of the HR grid.
struct GeneratorRanges {
  Range rotation_deg{-10.0, 10.0};
  Range scaling{0.9, 1.1};  // sampled log-uniformly between the two values
  Range shearing{-0.01, 0.01};
  double svf_variance = 9.0;
  Range gamma{0.7, 1.3};
  double bias_variance = 0.25;
  Range translation_mm{-20.0, 20.0};
  Range alpha{0.8, 1.2};
  double reg_rotation_variance = 0.09;
  double reg_translation_variance = 0.09;

  double svf_sigma() const { return std::sqrt(svf_variance); }
  double bias_sigma() const { return std::sqrt(bias_variance); }
  double reg_rotation_sigma() const { return std::sqrt(reg_rotation_variance); }
  double reg_translation_sigma() const { return std::sqrt(reg_translation_variance); }

  /// Every range collapsed to its neutral value: no rotation, unit scale,
  /// no shear, no deformation, gamma 1, no bias, no motion, alpha 1.
  static GeneratorRanges neutral() {
    GeneratorRanges r;
    r.rotation_deg = {0.0, 0.0};
    r.scaling = {1.0, 1.0};
    r.shearing = {0.0, 0.0};
    r.svf_variance = 0.0;
    r.gamma = {1.0, 1.0};
    r.bias_variance = 0.0;
    r.translation_mm = {0.0, 0.0};
    r.alpha = {1.0, 1.0};
    r.reg_rotation_variance = 0.0;
    r.reg_translation_variance = 0.0;
    return r;
  }

  void validate() const {
    auto check = [](const Range& r, const char* name) {
      if (!(r[0] <= r[1])) fail(Errc::invalid_argument, "config", std::string(name) + ": range lower bound exceeds upper");
    };
    check(rotation_deg, "rotation_deg");
    check(scaling, "scaling");
    check(shearing, "shearing");
    check(gamma, "gamma");
    check(translation_mm, "translation_mm");
    check(alpha, "alpha");
    require(scaling[0] > 0.0, "config", "scaling bounds must be positive");
    require(gamma[0] > 0.0, "config", "gamma bounds must be positive");
    require(alpha[0] > 0.0, "config", "alpha bounds must be positive");
    require(svf_variance >= 0.0 && bias_variance >= 0.0 && reg_rotation_variance >= 0.0 &&
                reg_translation_variance >= 0.0,
            "config", "variances must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorRanges& r) {
  j = nlohmann::json{{"rotation_deg", r.rotation_deg},
                     {"scaling", r.scaling},
                     {"shearing", r.shearing},
                     {"svf_variance", r.svf_variance},
                     {"gamma", r.gamma},
                     {"bias_variance", r.bias_variance},
                     {"translation_mm", r.translation_mm},
                     {"alpha", r.alpha},
                     {"reg_rotation_variance", r.reg_rotation_variance},
                     {"reg_translation_variance", r.reg_translation_variance}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, GeneratorRanges& r) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("rotation_deg", r.rotation_deg);
  get("scaling", r.scaling);
  get("shearing", r.shearing);
  get("svf_variance", r.svf_variance);
  get("gamma", r.gamma);
  get("bias_variance", r.bias_variance);
  get("translation_mm", r.translation_mm);
  get("alpha", r.alpha);
  get("reg_rotation_variance", r.reg_rotation_variance);
  get("reg_translation_variance", r.reg_translation_variance);
}

}  // namespace synthvol
