#pragma once

// Training-sample generator.
//
// One sample is a pure function of (config, pool, sample index): every
// random draw comes from a substream keyed by (seed, index, attempt, stage,
// channel), so samples can be produced on any number of worker threads in
// any order without changing their content.
//
// Pipeline per sample:
//   select (I, L) -> T = T_lin o exp(SVF) -> L^T (nearest), I^T (trilinear)
//   per channel: GMM draw -> G' -> gamma -> 0.5 mm blur -> G
//     -> rigid motion G^R -> bias G^B -> slice blur -> subsample I^LR
//     -> realign with registration error onto the target grid U_c, V_c
//   crop -> min-max normalise inputs -> regression target Y.

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthvol/acquire.hpp"
#include "synthvol/deform.hpp"
#include "synthvol/error.hpp"
#include "synthvol/geometry.hpp"
#include "synthvol/intensity.hpp"
#include "synthvol/nifti.hpp"
#include "synthvol/random.hpp"
#include "synthvol/ranges.hpp"
#include "synthvol/volume.hpp"

namespace synthvol {

enum class Mode { sr, sr_synth };

inline std::string to_string(Mode m) { return m == Mode::sr ? "sr" : "sr_synth"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "sr") return Mode::sr;
  if (s == "sr_synth") return Mode::sr_synth;
  fail(Errc::invalid_argument, "config", "unknown mode '" + s + "' (expected sr or sr_synth)");
}

struct GeneratorConfig {
  GeneratorRanges ranges;
  std::vector<ChannelSpec> channels{ChannelSpec{{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}, true, 0}};
  Vec3 r_targ{1.0, 1.0, 1.0};
  Mode mode = Mode::sr;
  Dims crop{192, 192, 192};
  Dims svf_control{10, 10, 10};
  Dims bias_control{4, 4, 4};
  int num_steps = kDefaultExpSteps;
  double hr_blur_mm = kHrBlurMm;
  std::uint64_t seed = 0;
  std::optional<int> similar_channel;  // c*: input contrast close to the target
  std::vector<Label> wm_labels;
  bool random_slice_phase = false;
  LogBase log_base = LogBase::natural;
  int max_attempts = 8;
  GmmHyper gmm;

  int num_channels() const { return static_cast<int>(channels.size()); }

  void validate() const {
    ranges.validate();
    require(!channels.empty(), "config", "at least one channel is required");
    int refs = 0;
    for (const auto& c : channels) {
      c.validate();
      refs += c.reference ? 1 : 0;
    }
    require(refs == 1, "config", "exactly one channel must be the reference");
    require(channels.front().reference, "config", "the reference channel must be listed first");
    for (int i = 0; i < 3; ++i) {
      require(r_targ[i] > 0.0, "config", "target resolution must be positive");
      require(crop[i] > 0, "config", "crop size must be positive");
      require(svf_control[i] >= 1 && bias_control[i] >= 1, "config", "control grids must be positive");
    }
    require(num_steps >= 1, "config", "num_steps must be at least 1");
    require(hr_blur_mm >= 0.0, "config", "hr_blur_mm must be non-negative");
    require(max_attempts >= 1, "config", "max_attempts must be at least 1");
    gmm.validate();
    require(gmm.channels == num_channels(), "config", "GMM channel count does not match channel list");
    if (similar_channel) {
      require(*similar_channel >= 0 && *similar_channel < num_channels(), "config", "similar_channel out of range");
    }
    if (mode == Mode::sr_synth) require(!wm_labels.empty(), "config", "sr_synth mode needs wm_labels");
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  std::vector<nlohmann::json> ch;
  for (const auto& s : c.channels) ch.push_back(s);
  j = nlohmann::json{{"ranges", c.ranges},
                     {"channels", ch},
                     {"target_res_mm", c.r_targ},
                     {"mode", to_string(c.mode)},
                     {"crop", c.crop},
                     {"svf_control", c.svf_control},
                     {"bias_control", c.bias_control},
                     {"num_steps", c.num_steps},
                     {"hr_blur_mm", c.hr_blur_mm},
                     {"seed", c.seed},
                     {"wm_labels", c.wm_labels},
                     {"random_slice_phase", c.random_slice_phase},
                     {"log_base", c.log_base == LogBase::natural ? "e" : "10"},
                     {"max_attempts", c.max_attempts},
                     {"gmm", c.gmm}};
  j["similar_channel"] = c.similar_channel ? nlohmann::json(*c.similar_channel) : nlohmann::json(nullptr);
}

// Missing keys keep their defaults. "gmm" must be present inline; file
// references are resolved by load_generator_config.
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  if (j.contains("ranges")) j.at("ranges").get_to(c.ranges);
  if (j.contains("channels")) {
    c.channels.clear();
    for (const auto& e : j.at("channels")) c.channels.push_back(e.get<ChannelSpec>());
    for (std::size_t i = 0; i < c.channels.size(); ++i) c.channels[i].index = static_cast<int>(i);
  }
  if (j.contains("target_res_mm")) j.at("target_res_mm").get_to(c.r_targ);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("crop")) j.at("crop").get_to(c.crop);
  if (j.contains("svf_control")) j.at("svf_control").get_to(c.svf_control);
  if (j.contains("bias_control")) j.at("bias_control").get_to(c.bias_control);
  if (j.contains("num_steps")) j.at("num_steps").get_to(c.num_steps);
  if (j.contains("hr_blur_mm")) j.at("hr_blur_mm").get_to(c.hr_blur_mm);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("wm_labels")) j.at("wm_labels").get_to(c.wm_labels);
  if (j.contains("random_slice_phase")) j.at("random_slice_phase").get_to(c.random_slice_phase);
  if (j.contains("max_attempts")) j.at("max_attempts").get_to(c.max_attempts);
  if (j.contains("log_base")) {
    const auto b = j.at("log_base").get<std::string>();
    require(b == "e" || b == "10", "config", "log_base must be \"e\" or \"10\"");
    c.log_base = b == "e" ? LogBase::natural : LogBase::base10;
  }
  if (j.contains("similar_channel") && !j.at("similar_channel").is_null()) {
    c.similar_channel = j.at("similar_channel").get<int>();
  }
  if (j.contains("gmm")) j.at("gmm").get_to(c.gmm);
}

struct PoolEntry {
  std::optional<Volume> image;  // required only for sr_synth
  LabelMap labels;
};

struct TrainingPool {
  std::vector<PoolEntry> entries;

  std::size_t size() const { return entries.size(); }

  void validate(Mode mode) const {
    require(!entries.empty(), "pool", "training pool is empty");
    for (const auto& e : entries) {
      if (mode == Mode::sr_synth) require(e.image.has_value(), "pool", "sr_synth mode needs an image for every label map");
      if (e.image) require(e.image->dims() == e.labels.dims(), "pool", "image and label map grids differ");
    }
  }
};

/// Uniform choice of a pool index.
inline std::size_t select_pair(const TrainingPool& pool, RandomStream& rng) {
  if (pool.entries.empty()) fail(Errc::invalid_argument, "select", "training pool is empty");
  return static_cast<std::size_t>(rng.uniform_index(pool.entries.size()));
}

struct SampleMetadata {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  std::size_t source = 0;
  int attempt = 0;
  AffineParams affine;
  std::vector<RigidParams> motion, reg_error;
  std::vector<double> gamma, alpha;
  CropWindow crop;
  GmmDraw gmm;
};

inline nlohmann::json to_json_value(const SampleMetadata& m) {
  nlohmann::json j;
  j["index"] = m.index;
  j["seed"] = m.seed;
  j["source"] = m.source;
  j["attempt"] = m.attempt;
  j["affine"] = {{"rotation_deg", m.affine.rotation_deg}, {"scaling", m.affine.scaling}, {"shearing", m.affine.shearing}};
  auto rigid = [](const std::vector<RigidParams>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : v) a.push_back({{"rotation_deg", r.rotation_deg}, {"translation_mm", r.translation_mm}});
    return a;
  };
  j["motion"] = rigid(m.motion);
  j["reg_error"] = rigid(m.reg_error);
  j["gamma"] = m.gamma;
  j["alpha"] = m.alpha;
  j["crop"] = {{"offset", m.crop.offset}, {"size", m.crop.size}};
  j["gmm"] = {{"labels", m.gmm.labels}, {"mu", m.gmm.mu}, {"sigma", m.gmm.sigma}};
  return j;
}

struct TrainingSample {
  std::vector<Volume> inputs;  // U_0, V_0, U_1, V_1, ...
  Volume target;               // regression target Y
  Volume reference;            // normalised HR volume that Y (+ U) reconstructs
  SampleMetadata meta;

  int channels() const { return static_cast<int>(inputs.size() / 2); }
  const Volume& U(int c) const { return inputs[static_cast<std::size_t>(2 * c)]; }
  const Volume& V(int c) const { return inputs[static_cast<std::size_t>(2 * c + 1)]; }
};

/// Everything make_target needs, already cropped to the sample window.
struct TargetInputs {
  Mode mode = Mode::sr;
  const Volume* image_t = nullptr;      // I^T, sr_synth only
  const Volume* hr_reference = nullptr;  // G^B of the reference channel, raw
  const LabelMap* labels_t = nullptr;    // L^T, for white-matter normalisation
  std::vector<Volume> normalized_u;      // min-max normalised U_c
  MinMax reference_window;               // window used to normalise U_0
  std::optional<int> similar_channel;
  std::vector<Label> wm_labels;
};

struct Target {
  Volume y;
  Volume reference;
};

/// sr: Y = G^B_0 - U_0, both through U_0's min-max window.
/// sr_synth: I^T normalised so white matter has median 1; Y is its
/// residual over U_{c*} when c* is set, else I^T itself.
inline Target make_target(const TargetInputs& in) {
  Target t;
  const Volume* residual_base = nullptr;
  if (in.mode == Mode::sr) {
    require(in.hr_reference != nullptr && !in.normalized_u.empty(), "target", "sr target needs G^B and U");
    t.reference = apply_window(*in.hr_reference, in.reference_window);
    residual_base = &in.normalized_u.front();
  } else {
    if (in.image_t == nullptr) fail(Errc::invalid_argument, "target", "sr_synth target needs the deformed real image");
    require(in.labels_t != nullptr, "target", "sr_synth target needs the deformed label map");
    t.reference = wm_median_normalize(*in.image_t, *in.labels_t, in.wm_labels);
    if (in.similar_channel) {
      require(*in.similar_channel < static_cast<int>(in.normalized_u.size()), "target", "similar channel out of range");
      residual_base = &in.normalized_u[static_cast<std::size_t>(*in.similar_channel)];
    }
  }
  t.y = Volume(t.reference.grid());
  for (std::size_t i = 0; i < t.y.size(); ++i) {
    t.y[i] = residual_base ? t.reference[i] - (*residual_base)[i] : t.reference[i];
  }
  return t;
}

namespace gen_detail {

inline RandomStream stream_for(const GeneratorConfig& cfg, std::uint64_t index, int attempt, Stage stage,
                               int channel = 0) {
  return RandomStream::derive(cfg.seed, {index, static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(stage),
                                         static_cast<std::uint64_t>(channel)});
}

inline void check_finite(const Volume& v, const char* stage) {
  if (!all_finite(v)) fail(Errc::numerical, stage, "non-finite intermediate values");
}

class Retry : public std::exception {};

}  // namespace gen_detail

/// Builds sample `index`. Deterministic in (cfg, pool, index).
inline TrainingSample generate_sample(const GeneratorConfig& cfg, const TrainingPool& pool, std::uint64_t index) {
  using gen_detail::stream_for;
  cfg.validate();
  pool.validate(cfg.mode);
  const int C = cfg.num_channels();

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    TrainingSample s;
    SampleMetadata& meta = s.meta;
    meta.index = index;
    meta.seed = cfg.seed;
    meta.attempt = attempt;

    auto rng_select = stream_for(cfg, index, attempt, Stage::select);
    meta.source = select_pair(pool, rng_select);
    const PoolEntry& entry = pool.entries[meta.source];
    const Grid& hr = entry.labels.grid();
    for (int i = 0; i < 3; ++i) {
      require(std::abs(hr.spacing[i] - cfg.r_targ[i]) <= 1e-4 * cfg.r_targ[i], "spatial",
              "label maps must be defined at the target resolution");
    }
    const Vec3 center = hr.center_world();

    // Spatial augmentation.
    auto rng_affine = stream_for(cfg, index, attempt, Stage::affine);
    meta.affine = sample_affine_params(cfg.ranges, rng_affine);
    const AffineMatrix t_lin = build_affine(meta.affine, center);
    DenseDeformation t_nonlin(hr.dims);
    t_nonlin.diffeomorphic = true;
    if (cfg.ranges.svf_variance > 0.0) {
      auto rng_svf = stream_for(cfg, index, attempt, Stage::svf);
      const VelocityField svf = sample_svf(cfg.ranges.svf_sigma(), cfg.svf_control, rng_svf);
      t_nonlin = exponentiate(upsample_svf(svf, hr.dims), cfg.num_steps);
    }
    const DenseDeformation t_total = compose_affine_nonlinear(t_lin, t_nonlin, hr);
    const LabelMap labels_t = warp(entry.labels, t_total, Interp::nearest);
    std::optional<Volume> image_t;
    if (cfg.mode == Mode::sr_synth) {
      image_t = warp(*entry.image, t_total, Interp::trilinear);
      gen_detail::check_finite(*image_t, "spatial");
    }

    // HR synthesis, one independent substream per channel and stage.
    meta.gmm = empty_draw(cfg.gmm);
    std::vector<Volume> hr_channels;
    for (int c = 0; c < C; ++c) {
      auto rng_gmm = stream_for(cfg, index, attempt, Stage::gmm, c);
      sample_gmm_channel(cfg.gmm, c, rng_gmm, meta.gmm);
    }
    for (int c = 0; c < C; ++c) {
      auto rng_synth = stream_for(cfg, index, attempt, Stage::synth, c);
      Volume g = synthesize_intensities(labels_t, meta.gmm, c, rng_synth);
      auto rng_gamma = stream_for(cfg, index, attempt, Stage::gamma, c);
      const double gamma = sample_gamma(cfg.ranges.gamma, rng_gamma);
      meta.gamma.push_back(gamma);
      g = gamma_augment(g, gamma);
      if (cfg.hr_blur_mm > 0.0) g = blur_hr(g, cfg.hr_blur_mm);
      gen_detail::check_finite(g, "synthesis");
      hr_channels.push_back(std::move(g));
    }

    // Per-channel acquisition and realignment.
    std::vector<Volume> u(static_cast<std::size_t>(C)), v(static_cast<std::size_t>(C));
    Volume reference_gb;
    for (int c = 0; c < C; ++c) {
      const ChannelSpec& spec = cfg.channels[static_cast<std::size_t>(c)];
      auto rng_motion = stream_for(cfg, index, attempt, Stage::motion, c);
      const RigidParams rc = sample_rigid_params(cfg.ranges, c, rng_motion);
      meta.motion.push_back(rc);
      Volume g = apply_interscan_motion(hr_channels[static_cast<std::size_t>(c)], rc, c, center);

      if (cfg.ranges.bias_variance > 0.0) {
        auto rng_bias = stream_for(cfg, index, attempt, Stage::bias, c);
        g = apply_bias(g, sample_bias(hr, cfg.ranges.bias_sigma(), cfg.bias_control, rng_bias));
      }
      gen_detail::check_finite(g, "bias");
      if (c == 0) reference_gb = g;

      auto rng_alpha = stream_for(cfg, index, attempt, Stage::alpha, c);
      const double alpha = sample_alpha(cfg.ranges.alpha, rng_alpha);
      meta.alpha.push_back(alpha);
      const Volume blurred = gaussian_blur_aniso(g, slice_sigma(alpha, spec.r_mm, cfg.r_targ, cfg.log_base));

      Vec3 phase{0.0, 0.0, 0.0};
      if (cfg.random_slice_phase) {
        auto rng_phase = stream_for(cfg, index, attempt, Stage::phase, c);
        for (int a = 0; a < 3; ++a) {
          const double ratio = spec.d_mm[a] / cfg.r_targ[a];
          phase[a] = ratio > 1.0 ? std::floor(rng_phase.uniform(0.0, ratio)) : 0.0;
        }
      }
      const Grid lr_grid = slice_grid(hr, spec.d_mm, phase);
      const Volume i_lr = resample_onto(blurred, lr_grid);
      gen_detail::check_finite(i_lr, "acquisition");

      auto rng_err = stream_for(cfg, index, attempt, Stage::reg_error, c);
      const RigidParams err = sample_registration_error(cfg.ranges.reg_rotation_sigma(),
                                                        cfg.ranges.reg_translation_sigma(), c, rng_err);
      meta.reg_error.push_back(err);
      const AffineMatrix realign = realign_transform(rc, err, center);
      u[static_cast<std::size_t>(c)] = resample_onto(i_lr, hr, realign, Interp::trilinear);
      v[static_cast<std::size_t>(c)] = compute_reliability(lr_grid, realign, hr);
      gen_detail::check_finite(u[static_cast<std::size_t>(c)], "realign");
    }

    // Crop everything with one window.
    auto rng_crop = stream_for(cfg, index, attempt, Stage::crop);
    meta.crop = sample_crop_window(hr.dims, cfg.crop, rng_crop);
    for (int c = 0; c < C; ++c) {
      u[static_cast<std::size_t>(c)] = crop(u[static_cast<std::size_t>(c)], meta.crop);
      v[static_cast<std::size_t>(c)] = crop(v[static_cast<std::size_t>(c)], meta.crop);
    }
    reference_gb = crop(reference_gb, meta.crop);
    const LabelMap labels_crop = crop(labels_t, meta.crop);
    if (image_t) image_t = crop(*image_t, meta.crop);

    // Normalise; a constant crop cannot be min-max normalised, so retry
    // with the next attempt key.
    TargetInputs ti;
    ti.mode = cfg.mode;
    ti.similar_channel = cfg.similar_channel;
    ti.wm_labels = cfg.wm_labels;
    bool degenerate = false;
    for (int c = 0; c < C; ++c) {
      const MinMax w = minmax_of(u[static_cast<std::size_t>(c)]);
      if (!(w.hi > w.lo)) {
        degenerate = true;
        break;
      }
      if (c == 0) ti.reference_window = w;
      ti.normalized_u.push_back(apply_window(u[static_cast<std::size_t>(c)], w));
    }
    if (degenerate) continue;
    ti.hr_reference = &reference_gb;
    ti.labels_t = &labels_crop;
    ti.image_t = image_t ? &*image_t : nullptr;

    Target t;
    try {
      t = make_target(ti);
    } catch (const Error& e) {
      if (cfg.mode == Mode::sr_synth && e.code() != Errc::invalid_argument) continue;
      throw;
    }
    gen_detail::check_finite(t.y, "target");

    for (int c = 0; c < C; ++c) {
      s.inputs.push_back(std::move(ti.normalized_u[static_cast<std::size_t>(c)]));
      s.inputs.push_back(std::move(v[static_cast<std::size_t>(c)]));
    }
    s.target = std::move(t.y);
    s.reference = std::move(t.reference);
    return s;
  }
  fail(Errc::numerical, "normalize",
       "sample " + std::to_string(index) + " was constant after " + std::to_string(cfg.max_attempts) + " attempts");
}

/// Ordered sample feed backed by up to `workers` concurrent producers.
/// Content never depends on the worker count.
class SampleStream {
 public:
  SampleStream(const GeneratorConfig& cfg, const TrainingPool& pool, std::uint64_t start, std::uint64_t count,
               int workers = 1)
      : cfg_(cfg), pool_(pool), next_(start), end_(start + count), workers_(std::max(1, workers)) {
    cfg_.validate();
    pool_.validate(cfg_.mode);
  }

  /// Next sample in index order, or nullopt when the range is exhausted.
  std::optional<TrainingSample> next() {
    fill();
    if (pending_.empty()) return std::nullopt;
    auto f = std::move(pending_.front());
    pending_.pop_front();
    TrainingSample s = f.get();
    fill();
    return s;
  }

 private:
  void fill() {
    while (static_cast<int>(pending_.size()) < workers_ && next_ < end_) {
      const std::uint64_t idx = next_++;
      if (workers_ == 1) {
        std::promise<TrainingSample> p;
        try {
          p.set_value(generate_sample(cfg_, pool_, idx));
        } catch (...) {
          p.set_exception(std::current_exception());
        }
        pending_.push_back(p.get_future());
      } else {
        pending_.push_back(std::async(std::launch::async, [this, idx] { return generate_sample(cfg_, pool_, idx); }));
      }
    }
  }

  GeneratorConfig cfg_;
  const TrainingPool& pool_;
  std::uint64_t next_;
  std::uint64_t end_;
  int workers_;
  std::deque<std::future<TrainingSample>> pending_;
};

/// Samples [start, start + count) in index order.
inline std::vector<TrainingSample> stream(const GeneratorConfig& cfg, const TrainingPool& pool, std::uint64_t start,
                                          std::uint64_t count, int workers = 1) {
  std::vector<TrainingSample> out;
  out.reserve(count);
  SampleStream s(cfg, pool, start, count, workers);
  while (auto sample = s.next()) out.push_back(std::move(*sample));
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "config", "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, "config", path.string() + ": " + e.what());
  }
}

/// Reads a generator config; "gmm_path" is resolved relative to the file.
inline GeneratorConfig load_generator_config(const std::filesystem::path& path) {
  nlohmann::json j = read_json_file(path);
  if (!j.contains("gmm") && j.contains("gmm_path")) {
    std::filesystem::path gp = j.at("gmm_path").get<std::string>();
    if (gp.is_relative()) gp = path.parent_path() / gp;
    j["gmm"] = read_json_file(gp);
  }
  GeneratorConfig cfg;
  try {
    cfg = j.get<GeneratorConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, "config", path.string() + ": " + e.what());
  }
  return cfg;
}

/// Loads "pool": [{"labels": path, "image": path?}, ...] relative to `base`.
inline TrainingPool load_pool(const nlohmann::json& entries, const std::filesystem::path& base) {
  TrainingPool pool;
  for (const auto& e : entries) {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp = p;
      return fp.is_relative() ? base / fp : fp;
    };
    PoolEntry pe;
    pe.labels = read_labels(resolve(e.at("labels").get<std::string>()));
    if (e.contains("image") && !e.at("image").is_null()) pe.image = read_volume(resolve(e.at("image").get<std::string>()));
    pool.entries.push_back(std::move(pe));
  }
  return pool;
}

}  // namespace synthvol
