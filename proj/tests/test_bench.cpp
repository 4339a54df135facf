#include <set>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "synthvol/bench.hpp"

using namespace synthvol;

TEST(Bench, MedianCallsWarmupPlusRepetitions) {
  int calls = 0;
  const double ms = time_median_ms([&] { ++calls; }, 5);
  EXPECT_EQ(calls, 6);
  EXPECT_GE(ms, 0.0);
  EXPECT_THROW(time_median_ms([] {}, 0), Error);
}

TEST(Bench, ReportHasOneRowPerOp) {
  const auto rows = bench_all({16, 16, 16}, 1, 2);
  std::set<std::string> ops;
  for (const auto& r : rows) {
    ops.insert(r.op);
    EXPECT_GT(r.ms_per_call, 0.0);
    EXPECT_GT(r.voxels_per_second, 0.0);
  }
  for (const char* op : {"gaussian_blur", "trilinear_warp", "scaling_squaring", "conv_forward_8to8",
                         "conv_backward_8to8", "generate_sample"})
    EXPECT_TRUE(ops.count(op)) << op;
  EXPECT_EQ(rows.back().workers, 2);
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  std::size_t lines = 0;
  for (char c : csv.str()) lines += c == '\n';
  EXPECT_EQ(lines, rows.size() + 1);
}

TEST(Bench, ChecksumsMatchUnbenchmarkedOutputs) {
  const Dims d{20, 18, 16};
  const BenchReport a = bench_blur(d, 2), b = bench_blur(d, 3);
  EXPECT_EQ(a.checksum, b.checksum);
  const Volume v = bench_detail::noise_volume(d, 11);
  EXPECT_EQ(a.checksum, checksum(gaussian_blur_aniso(v, {1.0, 1.0, 3.0}).values()));
  EXPECT_EQ(bench_warp(d, 1).checksum, bench_warp(d, 2).checksum);
  EXPECT_EQ(bench_exponentiate(d, 1).checksum, bench_exponentiate(d, 1).checksum);
  EXPECT_EQ(bench_generate({16, 16, 16}, 1, 1, 2).checksum, bench_generate({16, 16, 16}, 1, 3, 2).checksum);
}

TEST(Bench, BlurScalesNearLinearly) {
  // Median of several runs; the larger volume has twice the voxels.
  const double t1 = bench_blur({64, 64, 64}, 7).ms_per_call;
  const double t2 = bench_blur({64, 64, 128}, 7).ms_per_call;
  EXPECT_LE(t2, 2.5 * t1) << t1 << " ms vs " << t2 << " ms";
}

TEST(Bench, GenerationScalesWithWorkers) {
  if (std::thread::hardware_concurrency() < 4) GTEST_SKIP() << "needs at least 4 hardware threads";
  const double one = bench_generate({48, 48, 48}, 3, 1, 8).ms_per_call;
  const double four = bench_generate({48, 48, 48}, 3, 4, 8).ms_per_call;
  EXPECT_GE(one / four, 1.5);
}
