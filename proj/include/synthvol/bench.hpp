#pragma once

// Timings of the hot paths. Each op runs once untimed, then `repetitions`
// timed calls; the median is reported along with a checksum of the output.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "synthvol/deform.hpp"
#include "synthvol/filter.hpp"
#include "synthvol/generator.hpp"
#include "synthvol/net/unet.hpp"
#include "synthvol/phantom.hpp"

namespace synthvol {

struct BenchReport {
  std::string op;
  Dims dims{};
  double ms_per_call = 0.0;
  double voxels_per_second = 0.0;
  int workers = 1;
  double checksum = 0.0;
};

/// Median wall time in ms of `fn` over `repetitions` calls after one warm-up.
inline double time_median_ms(const std::function<void()>& fn, int repetitions) {
  require(repetitions >= 1, "bench", "repetitions must be positive");
  fn();
  std::vector<double> t;
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

inline double checksum(const std::vector<float>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * static_cast<double>(1 + i % 7);
  return s;
}

namespace bench_detail {

inline Volume noise_volume(const Dims& d, std::uint64_t seed) {
  auto rng = RandomStream::derive(seed, {1});
  Volume v(Grid::make(d));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.uniform());
  return v;
}

inline BenchReport make_report(std::string op, const Dims& d, double ms, int workers, double sum,
                               std::size_t voxels_per_call = 0) {
  BenchReport r;
  r.op = std::move(op);
  r.dims = d;
  r.ms_per_call = std::max(ms, 1e-6);
  r.voxels_per_second = static_cast<double>(voxels_per_call ? voxels_per_call : voxel_count(d)) / (r.ms_per_call * 1e-3);
  r.workers = workers;
  r.checksum = sum;
  return r;
}

}  // namespace bench_detail

inline BenchReport bench_blur(const Dims& d, int reps, Vec3 sigma = {1.0, 1.0, 3.0}) {
  const Volume v = bench_detail::noise_volume(d, 11);
  Volume out;
  const double ms = time_median_ms([&] { out = gaussian_blur_aniso(v, sigma); }, reps);
  return bench_detail::make_report("gaussian_blur", d, ms, 1, checksum(out.values()));
}

inline BenchReport bench_warp(const Dims& d, int reps) {
  const Volume v = bench_detail::noise_volume(d, 12);
  auto rng = RandomStream::derive(12, {2});
  const DenseDeformation f = upsample_svf(sample_svf(3.0, {10, 10, 10}, rng), d);
  Volume out;
  const double ms = time_median_ms([&] { out = warp(v, f, Interp::trilinear); }, reps);
  return bench_detail::make_report("trilinear_warp", d, ms, 1, checksum(out.values()));
}

inline BenchReport bench_exponentiate(const Dims& d, int reps) {
  auto rng = RandomStream::derive(13, {3});
  const DenseDeformation v = upsample_svf(sample_svf(3.0, {10, 10, 10}, rng), d);
  DenseDeformation out(d);
  const double ms = time_median_ms([&] { out = exponentiate(v); }, reps);
  return bench_detail::make_report("scaling_squaring", d, ms, 1, checksum(out.dx) + checksum(out.dy) + checksum(out.dz));
}

inline std::vector<BenchReport> bench_conv(const Dims& d, int reps, int cin = 8, int cout = 8) {
  using namespace net;
  std::vector<Param<float>> params;
  Conv3d<float> conv{cin, cout, 3, 0, 1};
  params.emplace_back("w", std::vector<int>{cout, cin, 3, 3, 3});
  params.emplace_back("b", std::vector<int>{cout});
  auto rng = RandomStream::derive(14, {4});
  init_conv(params, conv, rng);
  Tensor5<float> x(1, cin, d[0], d[1], d[2]);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor5<float> y, gx;
  const double fwd = time_median_ms([&] { y = conv.forward(params, x); }, reps);
  const double bwd = time_median_ms([&] { gx = conv.backward(params, x, y); }, reps);
  const std::string tag = "_" + std::to_string(cin) + "to" + std::to_string(cout);
  return {bench_detail::make_report("conv_forward" + tag, d, fwd, 1, checksum(y.data)),
          bench_detail::make_report("conv_backward" + tag, d, bwd, 1, checksum(gx.data))};
}

/// Sample throughput: `count` samples per call through a SampleStream.
inline BenchReport bench_generate(const Dims& d, int reps, int workers, int count = 4) {
  GeneratorConfig cfg;
  cfg.crop = d;
  cfg.channels = {ChannelSpec{{1.0, 1.0, 4.0}, {1.0, 1.0, 4.0}, true, 0}};
  cfg.gmm = GmmHyper::fixed({0, 1, 2, 3}, {{0.0}, {0.3}, {0.6}, {0.9}}, {{0.01}, {0.03}, {0.03}, {0.03}});
  TrainingPool pool;
  auto rng = RandomStream::derive(15, {5});
  pool.entries.push_back({std::nullopt, make_phantom(d, 4, rng)});
  double sum = 0.0;
  const double ms = time_median_ms(
      [&] {
        sum = 0.0;
        for (const auto& s : stream(cfg, pool, 0, static_cast<std::uint64_t>(count), workers)) {
          sum += checksum(s.target.values());
        }
      },
      reps);
  return bench_detail::make_report("generate_sample", d, ms / count, workers, sum);
}

/// One row per hot op; generation is timed single-worker and at `workers`.
inline std::vector<BenchReport> bench_all(const Dims& d, int repetitions, int workers = 4) {
  std::vector<BenchReport> r;
  r.push_back(bench_blur(d, repetitions));
  r.push_back(bench_warp(d, repetitions));
  r.push_back(bench_exponentiate(d, repetitions));
  for (auto& c : bench_conv(d, repetitions)) r.push_back(std::move(c));
  r.push_back(bench_generate(d, repetitions, 1));
  if (workers > 1) r.push_back(bench_generate(d, repetitions, workers));
  return r;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& rows) {
  os << "op,nx,ny,nz,ms_per_call,voxels_per_second,workers,checksum\n";
  for (const auto& r : rows) {
    os << r.op << ',' << r.dims[0] << ',' << r.dims[1] << ',' << r.dims[2] << ',' << r.ms_per_call << ','
       << r.voxels_per_second << ',' << r.workers << ',' << r.checksum << '\n';
  }
}

}  // namespace synthvol
