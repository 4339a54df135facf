#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "synthvol/synthvol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace synthvol;

namespace {

struct Result {
  int code = -1;
  std::string err, out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("synthvol_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args, const std::string& env = "") const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + SYNTHVOL_CLI_PATH + std::string(" ") + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path toy_config(int crop = 16) const {
    json j;
    j["crop"] = {crop, crop, crop};
    j["seed"] = 5;
    j["channels"] = json::array({{{"r_mm", {1, 1, 4}}, {"d_mm", {1, 1, 4}}, {"reference", true}}});
    j["gmm"] = GmmHyper::fixed({0, 1, 2, 3, 4}, {{0.0}, {0.25}, {0.5}, {0.75}, {1.0}},
                               {{0.01}, {0.02}, {0.02}, {0.02}, {0.02}});
    j["phantom_pool"] = {{"count", 2}, {"dims", {20, 20, 20}}, {"classes", 5}, {"seed", 3}};
    j["net"] = {{"levels", 2}, {"base_features", 2}};
    const fs::path p = dir_ / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  const Result r = run("generate --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error:", 0), 0u) << r.err;
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, MissingFileExitsTwoWithErrorLine) {
  const Result r = run("estimate-hyper --scan " + (dir_ / "nope.nii").string() + ":" + (dir_ / "nope_l.nii").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error:", 0), 0u) << r.err;
}

TEST_F(Cli, EstimateHyperWidenOne) {
  // Two scans with known per-class values, one voxel spread per class.
  std::vector<std::string> scan_args;
  for (int s = 0; s < 2; ++s) {
    LabelMap l(Grid::make({10, 10, 10}));
    Volume v(l.grid());
    for (std::size_t i = 0; i < l.size(); ++i) {
      l[i] = static_cast<Label>(i % 2);
      v[i] = (i % 2 ? 100.0f + 20.0f * s : 10.0f) + static_cast<float>(i % 3);
    }
    const fs::path img = dir_ / ("img" + std::to_string(s) + ".nii"), lab = dir_ / ("lab" + std::to_string(s) + ".nii");
    write_nifti(v, img);
    write_nifti(l, lab);
    scan_args.push_back("--scan " + img.string() + ":" + lab.string());
  }
  const fs::path out = dir_ / "hyper.json";
  ASSERT_EQ(run("estimate-hyper " + scan_args[0] + " " + scan_args[1] + " --no-normalize --widen 1 --out " + out.string())
                .code,
            0);
  const GmmHyper h = json::parse(slurp(out)).get<GmmHyper>();
  ASSERT_EQ(h.labels, (std::vector<Label>{0, 1}));
  EXPECT_DOUBLE_EQ(h.m_mu[0][0], 11.0);
  EXPECT_DOUBLE_EQ(h.m_mu[1][0], 111.0);
  EXPECT_DOUBLE_EQ(h.a_mu[1][0], 10.0);
}

TEST_F(Cli, GenerateZeroCountWritesManifestOnly) {
  const fs::path out = dir_ / "gen";
  ASSERT_EQ(run("generate --config " + toy_config().string() + " --count 0 --out " + out.string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(json::parse(slurp(out / "manifest.json")).at("samples").size(), 0u);
}

TEST_F(Cli, GenerateIsDeterministicAndSeedable) {
  const std::string cfg = toy_config().string();
  const fs::path a = dir_ / "a", b = dir_ / "b", c = dir_ / "c", d = dir_ / "d", e = dir_ / "e";
  ASSERT_EQ(run("generate --config " + cfg + " --count 3 --out " + a.string()).code, 0);
  ASSERT_EQ(run("generate --config " + cfg + " --count 3 --workers 3 --out " + b.string()).code, 0);
  ASSERT_EQ(run("generate --config " + cfg + " --count 3 --out " + c.string(), "SYNTHVOL_SEED=99").code, 0);
  ASSERT_EQ(run("generate --config " + cfg + " --count 3 --seed 99 --out " + d.string(), "SYNTHVOL_SEED=7").code, 0);
  ASSERT_EQ(run("generate --config " + cfg + " --count 1 --start 2 --out " + e.string()).code, 0);
  const json m = json::parse(slurp(a / "manifest.json"));
  ASSERT_EQ(m.at("samples").size(), 3u);
  for (const auto& s : m.at("samples")) {
    for (const std::string& f : {s.at("target").get<std::string>(), s.at("inputs")[0].at("U").get<std::string>(),
                                s.at("inputs")[0].at("V").get<std::string>()}) {
      EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
      EXPECT_EQ(slurp(c / f), slurp(d / f)) << f;
      EXPECT_NE(slurp(a / f), slurp(c / f)) << f;
    }
  }
  EXPECT_EQ(slurp(a / "sample_000002_Y.nii"), slurp(e / "sample_000002_Y.nii"));
  const Volume y = read_volume(a / "sample_000000_Y.nii");
  EXPECT_EQ(y.dims(), (Dims{16, 16, 16}));
  EXPECT_EQ(run("generate --config " + cfg + " --count 1 --out " + c.string(), "SYNTHVOL_SEED=abc").code, 2);
}

TEST_F(Cli, TrainZeroIterationsAndResume) {
  const std::string cfg = toy_config().string();
  const fs::path out = dir_ / "run";
  ASSERT_EQ(run("train --config " + cfg + " --iters 0 --out " + out.string()).code, 0);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(out)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"ckpt_00000000.svck", "loss.csv"}));
  EXPECT_EQ(slurp(out / "loss.csv"), "iteration,loss\n");

  const fs::path full = dir_ / "full", part = dir_ / "part";
  ASSERT_EQ(run("train --config " + cfg + " --iters 4 --lr 1e-3 --checkpoint-every 2 --out " + full.string()).code, 0);
  EXPECT_TRUE(fs::exists(full / "ckpt_00000002.svck"));
  EXPECT_TRUE(fs::exists(full / "ckpt_00000004.svck"));
  const std::string trace = slurp(full / "loss.csv");
  EXPECT_EQ(count_lines(trace), 5u);

  ASSERT_EQ(run("train --config " + cfg + " --iters 2 --lr 1e-3 --out " + part.string()).code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --iters 2 --lr 1e-3 --out " + part.string() + " --resume " +
                (part / "ckpt_00000002.svck").string())
                .code,
            0);
  EXPECT_EQ(slurp(part / "loss.csv"), trace);
  EXPECT_EQ(slurp(part / "ckpt_00000004.svck"), slurp(full / "ckpt_00000004.svck"));
}

TEST_F(Cli, PredictAndEval) {
  const std::string cfg = toy_config().string();
  const fs::path run_dir = dir_ / "run";
  ASSERT_EQ(run("train --config " + cfg + " --iters 0 --out " + run_dir.string()).code, 0);
  const std::string ck = (run_dir / "ckpt_00000000.svck").string();

  Volume scan(Grid::make({12, 12, 5}, {1, 1, 4}));
  auto rng = RandomStream::derive(9, {});
  for (auto& v : scan.values()) v = static_cast<float>(rng.uniform(0, 100));
  const fs::path in = dir_ / "scan.nii.gz", tf = dir_ / "identity.txt";
  write_nifti(scan, in);
  std::ofstream(tf) << "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n";
  const fs::path pred = dir_ / "pred.nii", rel = dir_ / "rel";
  ASSERT_EQ(run("predict --checkpoint " + ck + " --input " + in.string() + ":" + tf.string() +
                " --target-res 1,1,1 --save-reliability " + rel.string() + " --out " + pred.string())
                .code,
            0);
  const Volume p = read_volume(pred);
  const Grid target = resampled_grid(scan.grid(), {1, 1, 1});
  EXPECT_TRUE(p.grid().same_as(target));
  // Zero head: the prediction is the normalised, resampled input.
  const Volume expect = minmax_normalize(resample_onto(scan, target));
  EXPECT_EQ(p.values(), expect.values());
  const Volume v = read_volume(rel / "V0.nii.gz");
  EXPECT_EQ(v.at(3, 3, 0), 1.0f);
  EXPECT_EQ(v.at(3, 3, 2), 0.0f);

  EXPECT_EQ(run("predict --checkpoint " + ck + " --input " + in.string() + " --input " + in.string() + " --out " +
                pred.string())
                .code,
            2);
  std::ofstream(dir_ / "bad.txt") << "1 0 0\n";
  EXPECT_EQ(run("predict --checkpoint " + ck + " --input " + in.string() + ":" + (dir_ / "bad.txt").string() +
                " --out " + pred.string())
                .code,
            2);

  // eval: identical volumes and a constant offset on [0, 1] data.
  Result r = run("eval --pred " + pred.string() + " --ref " + pred.string());
  ASSERT_EQ(r.code, 0);
  json j = json::parse(r.out);
  EXPECT_EQ(j.at("prediction").at("mae").get<double>(), 0.0);
  EXPECT_EQ(j.at("prediction").at("psnr").get<std::string>(), "inf");
  Volume shifted = p;
  for (auto& x : shifted.values()) x += 0.1f;
  write_nifti(shifted, dir_ / "shifted.nii");
  r = run("eval --pred " + (dir_ / "shifted.nii").string() + " --ref " + pred.string() + " --baseline " + in.string());
  ASSERT_EQ(r.code, 0);
  j = json::parse(r.out);
  EXPECT_NEAR(j.at("prediction").at("mae").get<double>(), 0.1, 1e-6);
  EXPECT_NEAR(j.at("prediction").at("psnr").get<double>(), 20.0, 1e-4);
  EXPECT_TRUE(j.contains("baseline_cubic"));
}

TEST_F(Cli, PhantomAndBench) {
  ASSERT_EQ(run("phantom --dims 12,12,12 --classes 4 --count 2 --out " + (dir_ / "ph").string()).code, 0);
  const LabelMap l = read_labels(dir_ / "ph" / "phantom_001.nii.gz");
  EXPECT_EQ(l.dims(), (Dims{12, 12, 12}));
  EXPECT_EQ(run("phantom --classes 9 --out " + (dir_ / "ph2").string()).code, 2);
  const Result r = run("bench --dims 12,12,12 --reps 1 --workers 2");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("op,nx,ny,nz", 0), 0u);
  EXPECT_EQ(count_lines(r.out), 8u);
}
