#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "synthvol/generator.hpp"
#include "synthvol/phantom.hpp"

using namespace synthvol;

namespace {

TrainingPool phantom_pool(int n, const Dims& d, int classes = 5) {
  TrainingPool pool;
  for (int i = 0; i < n; ++i) {
    auto rng = RandomStream::derive(500, {static_cast<std::uint64_t>(i)});
    pool.entries.push_back({std::nullopt, make_phantom(d, classes, rng)});
  }
  return pool;
}

GmmHyper toy_gmm(int channels = 1) {
  GmmHyper h;
  h.labels = {0, 1, 2, 3, 4};
  h.channels = channels;
  for (int k = 0; k < 5; ++k) {
    h.m_mu.push_back(std::vector<double>(channels, 0.2 * k));
    h.a_mu.push_back(std::vector<double>(channels, 0.05));
    h.m_sigma.push_back(std::vector<double>(channels, 0.02));
    h.a_sigma.push_back(std::vector<double>(channels, 0.005));
  }
  return h;
}

GeneratorConfig toy_config(const Dims& crop) {
  GeneratorConfig cfg;
  cfg.crop = crop;
  cfg.seed = 17;
  cfg.channels = {ChannelSpec{{1, 1, 4}, {1, 1, 4}, true, 0}};
  cfg.gmm = toy_gmm();
  return cfg;
}

float max_abs_diff(const Volume& a, const Volume& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(SelectPair, SingleEntryAndUniformity) {
  TrainingPool one = phantom_pool(1, {8, 8, 8}, 3);
  auto rng = RandomStream::derive(1, {});
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_pair(one, rng), 0u);

  TrainingPool four = phantom_pool(4, {8, 8, 8}, 3);
  const int n = 100000;
  std::array<int, 4> counts{};
  for (int i = 0; i < n; ++i) ++counts[select_pair(four, rng)];
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int c : counts) EXPECT_NEAR(c / double(n), 0.25, 3 * se);

  auto a = RandomStream::derive(2, {3}), b = RandomStream::derive(2, {3});
  for (int i = 0; i < 50; ++i) EXPECT_EQ(select_pair(four, a), select_pair(four, b));
  EXPECT_THROW(select_pair(TrainingPool{}, rng), Error);
}

TEST(Generate, NeutralPipelineMatchesBlurredSynthesis) {
  const Dims d{20, 20, 20};
  TrainingPool pool = phantom_pool(1, d);
  GeneratorConfig cfg = toy_config(d);
  cfg.ranges = GeneratorRanges::neutral();
  cfg.channels = {ChannelSpec{{1, 1, 1}, {1, 1, 1}, true, 0}};
  cfg.gmm = GmmHyper::fixed({0, 1, 2, 3, 4}, {{0.0}, {0.3}, {0.5}, {0.7}, {1.0}}, {{0}, {0}, {0}, {0}, {0}});
  cfg.hr_blur_mm = 0.0;
  const TrainingSample s = generate_sample(cfg, pool, 0);

  // Oracle: piecewise-constant image from the labels, slice-profile blur,
  // min-max normalisation.
  const LabelMap& l = pool.entries[0].labels;
  Volume g(l.grid());
  const std::array<float, 5> mu{0.0f, 0.3f, 0.5f, 0.7f, 1.0f};
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mu[static_cast<std::size_t>(l[i])];
  const double sig = std::log(10.0) / std::numbers::pi;
  const Volume u = minmax_normalize(gaussian_blur_aniso(g, {sig, sig, sig}));
  EXPECT_LT(max_abs_diff(s.U(0), u), 1e-5f);
  for (float v : s.V(0).values()) EXPECT_EQ(v, 1.0f);

  // Reference keeps one value per label.
  std::map<Label, float> seen;
  for (std::size_t i = 0; i < l.size(); ++i) {
    auto [it, fresh] = seen.emplace(l[i], s.reference[i]);
    if (!fresh) {
      ASSERT_EQ(it->second, s.reference[i]);
    }
  }
  for (std::size_t i = 0; i < s.target.size(); ++i) EXPECT_NEAR(s.target[i] + s.U(0)[i], s.reference[i], 1e-6);
}

TEST(Generate, DefaultsResidualIdentityAndRanges) {
  const Dims d{32, 32, 32};
  TrainingPool pool = phantom_pool(3, d);
  GeneratorConfig cfg = toy_config({24, 24, 24});
  for (std::uint64_t i = 0; i < 6; ++i) {
    const TrainingSample s = generate_sample(cfg, pool, i);
    ASSERT_EQ(s.inputs.size(), 2u);
    EXPECT_EQ(s.target.dims(), (Dims{24, 24, 24}));
    EXPECT_EQ(s.U(0).dims(), s.target.dims());
    EXPECT_EQ(s.V(0).dims(), s.target.dims());
    for (std::size_t k = 0; k < s.target.size(); ++k) {
      ASSERT_LE(std::abs(s.target[k] + s.U(0)[k] - s.reference[k]), 1e-6f);
      ASSERT_GE(s.U(0)[k], 0.0f);
      ASSERT_LE(s.U(0)[k], 1.0f);
      ASSERT_GE(s.V(0)[k], 0.0f);
      ASSERT_LE(s.V(0)[k], 1.0f);
    }
  }
}

TEST(Generate, ReliabilityMeanFollowsSliceSpacing) {
  const Dims d{30, 30, 31};
  TrainingPool pool = phantom_pool(2, d);
  GeneratorConfig cfg = toy_config(d);
  cfg.channels = {ChannelSpec{{1, 1, 5}, {1, 1, 5}, true, 0}};
  const TrainingSample s = generate_sample(cfg, pool, 3);
  double sum = 0;
  for (float v : s.V(0).values()) sum += v;
  EXPECT_NEAR(sum / s.V(0).size(), 7.0 / 31.0, 1e-6);  // planes 0,5,..,30
  for (int z = 0; z < 31; ++z) EXPECT_EQ(s.V(0).at(4, 7, z), z % 5 == 0 ? 1.0f : 0.0f);
}

TEST(Generate, DeterministicAndWorkerIndependent) {
  TrainingPool pool = phantom_pool(3, {24, 24, 24});
  GeneratorConfig cfg = toy_config({16, 16, 16});
  const TrainingSample a = generate_sample(cfg, pool, 5), b = generate_sample(cfg, pool, 5);
  EXPECT_EQ(a.inputs[0], b.inputs[0]);
  EXPECT_EQ(a.target, b.target);
  const auto one = stream(cfg, pool, 2, 5, 1), four = stream(cfg, pool, 2, 5, 4);
  ASSERT_EQ(one.size(), 5u);
  ASSERT_EQ(four.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(one[i].meta.index, 2 + i);
    EXPECT_EQ(four[i].meta.index, 2 + i);
    EXPECT_EQ(one[i].target, four[i].target);
    EXPECT_EQ(one[i].inputs[0], four[i].inputs[0]);
    EXPECT_EQ(one[i].inputs[1], four[i].inputs[1]);
  }
  EXPECT_NE(one[0].target, one[1].target);
  EXPECT_TRUE(stream(cfg, pool, 0, 0, 2).empty());
  const auto later = stream(cfg, pool, 7, 3, 1);
  std::set<std::uint64_t> idx;
  for (const auto& s : one) idx.insert(s.meta.index);
  for (const auto& s : later) EXPECT_EQ(idx.count(s.meta.index), 0u);
}

TEST(Generate, MultiChannelWithMotion) {
  TrainingPool pool = phantom_pool(2, {24, 24, 24});
  GeneratorConfig cfg = toy_config({24, 24, 24});
  cfg.channels = {ChannelSpec{{1, 1, 1}, {1, 1, 1}, true, 0}, ChannelSpec{{4, 1, 1}, {4, 1, 1}, false, 1}};
  cfg.gmm = toy_gmm(2);
  const TrainingSample s = generate_sample(cfg, pool, 1);
  ASSERT_EQ(s.channels(), 2);
  EXPECT_TRUE(s.meta.motion[0].is_zero());
  EXPECT_FALSE(s.meta.motion[1].is_zero());
  EXPECT_TRUE(s.meta.reg_error[0].is_zero());
  for (float v : s.V(0).values()) EXPECT_EQ(v, 1.0f);
  float lo = 1, hi = 0;
  for (float v : s.V(1).values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.0f);
  EXPECT_LE(hi, 1.0f);
  EXPECT_LT(lo, 0.5f);
}

TEST(Generate, RejectsLabelsOffTargetResolution) {
  TrainingPool pool;
  auto rng = RandomStream::derive(9, {});
  pool.entries.push_back({std::nullopt, make_phantom({16, 16, 16}, 3, rng, {2, 2, 2})});
  GeneratorConfig cfg = toy_config({16, 16, 16});
  cfg.gmm = GmmHyper::fixed({0, 1, 2}, {{0.0}, {0.5}, {1.0}}, {{0.01}, {0.01}, {0.01}});
  EXPECT_THROW(generate_sample(cfg, pool, 0), Error);
}

TEST(Generate, SynthesisModeTarget) {
  const Dims d{24, 24, 24};
  TrainingPool pool = phantom_pool(2, d);
  for (auto& e : pool.entries) {
    Volume img(e.labels.grid());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = 40.0f * static_cast<float>(e.labels[i]) + 5.0f;
    e.image = img;
  }
  GeneratorConfig cfg = toy_config(d);
  cfg.mode = Mode::sr_synth;
  cfg.wm_labels = {2};
  cfg.ranges = GeneratorRanges::neutral();
  const TrainingSample plain = generate_sample(cfg, pool, 0);
  // No c*: Y is the white-matter-normalised image itself.
  EXPECT_EQ(plain.target, plain.reference);
  const LabelMap& l = pool.entries[plain.meta.source].labels;
  for (std::size_t i = 0; i < l.size(); ++i) {
    EXPECT_FLOAT_EQ(plain.reference[i], (40.0f * l[i] + 5.0f) / 85.0f);
  }
  cfg.similar_channel = 0;
  const TrainingSample res = generate_sample(cfg, pool, 0);
  for (std::size_t i = 0; i < res.target.size(); ++i) {
    EXPECT_NEAR(res.target[i] + res.U(0)[i], res.reference[i], 1e-6);
  }

  TrainingPool no_images = phantom_pool(1, d);
  EXPECT_THROW(generate_sample(cfg, no_images, 0), Error);
}

TEST(MakeTarget, DegenerateAndMissingImage) {
  Volume u(Grid::make({3, 1, 1}), std::vector<float>{2, 3, 4});
  TargetInputs ti;
  ti.mode = Mode::sr;
  ti.hr_reference = &u;
  ti.reference_window = minmax_of(u);
  ti.normalized_u = {minmax_normalize(u)};
  const Target t = make_target(ti);
  for (float y : t.y.values()) EXPECT_EQ(y, 0.0f);

  ti.mode = Mode::sr_synth;
  EXPECT_THROW(make_target(ti), Error);
}

TEST(Config, JsonRoundTripAndValidation) {
  GeneratorConfig cfg = toy_config({10, 12, 14});
  cfg.similar_channel = 0;
  cfg.log_base = LogBase::base10;
  cfg.ranges.gamma = {0.8, 1.25};
  const nlohmann::json j = cfg;
  const GeneratorConfig back = j.get<GeneratorConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.crop, (Dims{10, 12, 14}));
  EXPECT_EQ(back.similar_channel, std::optional<int>(0));

  GeneratorConfig two_refs = cfg;
  two_refs.channels.push_back(ChannelSpec{{1, 1, 1}, {1, 1, 1}, true, 1});
  EXPECT_THROW(two_refs.validate(), Error);
  GeneratorConfig bad_range = cfg;
  bad_range.ranges.rotation_deg = {5, -5};
  EXPECT_THROW(bad_range.validate(), Error);
  GeneratorConfig bad_gmm = cfg;
  bad_gmm.gmm = toy_gmm(2);
  EXPECT_THROW(bad_gmm.validate(), Error);
  EXPECT_THROW(parse_mode("segment"), Error);
}

TEST(Config, TableOneDefaults) {
  const GeneratorRanges r;
  EXPECT_EQ(r.rotation_deg, (Range{-10, 10}));
  EXPECT_EQ(r.scaling, (Range{0.9, 1.1}));
  EXPECT_EQ(r.shearing, (Range{-0.01, 0.01}));
  EXPECT_EQ(r.svf_variance, 9.0);
  EXPECT_EQ(r.gamma, (Range{0.7, 1.3}));
  EXPECT_EQ(r.bias_variance, 0.25);
  EXPECT_EQ(r.translation_mm, (Range{-20, 20}));
  EXPECT_EQ(r.alpha, (Range{0.8, 1.2}));
  EXPECT_EQ(r.reg_rotation_variance, 0.09);
  EXPECT_EQ(r.reg_translation_variance, 0.09);
}
