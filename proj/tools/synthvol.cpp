// synthvol command-line front end.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "synthvol/synthvol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace synthvol;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

Vec3 to_vec3(const std::vector<double>& v, const std::string& what) {
  require(v.size() == 3, "cli", what + " needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

Dims to_dims(const std::vector<int>& v, const std::string& what) {
  require(v.size() == 3, "cli", what + " needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

// Seed precedence: --seed, then SYNTHVOL_SEED, then the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SYNTHVOL_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    fail(Errc::invalid_argument, "cli", std::string("SYNTHVOL_SEED is not an unsigned integer: ") + env);
  }
  return fallback;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(Errc::io, "cli", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// "a:b" -> {a, b}, split at the last colon; no colon gives {a, ""}.
std::pair<std::string, std::string> split_pair(const std::string& s) {
  const auto pos = s.rfind(':');
  if (pos == std::string::npos) return {s, ""};
  return {s.substr(0, pos), s.substr(pos + 1)};
}

AffineMatrix read_transform(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "predict", "cannot open transform " + path.string());
  std::array<double, 16> v{};
  for (auto& x : v) {
    if (!(in >> x)) fail(Errc::format, "predict", path.string() + ": expected 16 numbers (4x4, row-major)");
  }
  std::string rest;
  if (in >> rest) fail(Errc::format, "predict", path.string() + ": trailing content after 16 numbers");
  return AffineMatrix::from_rows(v);
}

struct RunSetup {
  GeneratorConfig cfg;
  TrainingPool pool;
  json raw;
};

// Generator config plus the training pool, given either as "pool" (files,
// relative to the config) or "phantom_pool" (built in memory).
RunSetup load_run(const fs::path& path) {
  RunSetup r;
  r.cfg = load_generator_config(path);
  r.raw = read_json_file(path);
  if (r.raw.contains("pool")) {
    r.pool = load_pool(r.raw.at("pool"), path.parent_path());
  } else if (r.raw.contains("phantom_pool")) {
    const json& p = r.raw.at("phantom_pool");
    const int count = p.value("count", 4);
    const Dims dims = p.value("dims", Dims{32, 32, 32});
    const int classes = p.value("classes", 5);
    const std::uint64_t seed = p.value("seed", std::uint64_t{0});
    require(count >= 1, "config", "phantom_pool.count must be positive");
    for (int i = 0; i < count; ++i) {
      auto rng = RandomStream::derive(seed, {static_cast<std::uint64_t>(i)});
      r.pool.entries.push_back({std::nullopt, make_phantom(dims, classes, rng)});
    }
  } else {
    fail(Errc::invalid_argument, "config", path.string() + ": needs \"pool\" or \"phantom_pool\"");
  }
  return r;
}

std::string sample_name(std::uint64_t index) {
  std::ostringstream s;
  s << "sample_" << std::setw(6) << std::setfill('0') << index;
  return s.str();
}

std::string checkpoint_name(std::uint64_t iteration) {
  std::ostringstream s;
  s << "ckpt_" << std::setw(8) << std::setfill('0') << iteration << ".svck";
  return s.str();
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::vector<std::string> scans;
  std::vector<int> channels;
  std::vector<double> target_res{1.0, 1.0, 1.0};
  double widen = kDefaultWiden;
  std::string scaling = "sum";
  bool no_normalize = false;
  std::vector<Label> labels;
  std::string out;
};

int run_estimate(const EstimateArgs& a) {
  require(!a.scans.empty(), "estimate-hyper", "at least one --scan is required");
  require(a.channels.empty() || a.channels.size() == 1 || a.channels.size() == a.scans.size(), "estimate-hyper",
          "give one --channel for all scans or one per scan");
  require(a.scaling == "sum" || a.scaling == "product", "estimate-hyper", "--scaling must be sum or product");
  EstimateOptions opt;
  opt.normalize = !a.no_normalize;
  opt.scaling = a.scaling == "sum" ? VarianceScaling::sum : VarianceScaling::product;
  opt.r_targ = to_vec3(a.target_res, "--target-res");
  opt.widen_factor = a.widen;
  require(opt.widen_factor > 0.0, "estimate-hyper", "--widen must be positive");
  std::vector<ScanObservation> obs;
  for (std::size_t i = 0; i < a.scans.size(); ++i) {
    const auto [img, lab] = split_pair(a.scans[i]);
    require(!lab.empty(), "estimate-hyper", "--scan expects image.nii:labels.nii, got " + a.scans[i]);
    const int ch = a.channels.empty() ? 0 : a.channels[a.channels.size() == 1 ? 0 : i];
    obs.push_back({read_volume(img), read_labels(lab), ch});
  }
  const json out = estimate_hyper(obs, opt, a.labels);
  if (a.out.empty()) {
    std::cout << out.dump(2) << '\n';
  } else {
    write_json(a.out, out);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::string out;
  std::uint64_t count = 1;
  std::uint64_t start = 0;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  bool gzip = false;
};

int run_generate(const GenerateArgs& a) {
  RunSetup run = load_run(a.config);
  run.cfg.seed = resolve_seed(a.seed, run.cfg.seed);
  run.cfg.validate();
  run.pool.validate(run.cfg.mode);
  require(a.workers >= 1, "generate", "--workers must be positive");
  fs::create_directories(a.out);
  const std::string ext = a.gzip ? ".nii.gz" : ".nii";
  json manifest{{"seed", run.cfg.seed}, {"start", a.start}, {"count", a.count}, {"mode", to_string(run.cfg.mode)}};
  json entries = json::array();
  SampleStream feed(run.cfg, run.pool, a.start, a.count, a.workers);
  while (auto s = feed.next()) {
    const std::string base = sample_name(s->meta.index);
    json entry{{"index", s->meta.index}};
    json inputs = json::array();
    for (int c = 0; c < s->channels(); ++c) {
      const std::string u = base + "_U" + std::to_string(c) + ext, v = base + "_V" + std::to_string(c) + ext;
      write_nifti(s->U(c), fs::path(a.out) / u);
      write_nifti(s->V(c), fs::path(a.out) / v);
      inputs.push_back({{"U", u}, {"V", v}});
    }
    const std::string y = base + "_Y" + ext, ref = base + "_ref" + ext, meta = base + "_meta.json";
    write_nifti(s->target, fs::path(a.out) / y);
    write_nifti(s->reference, fs::path(a.out) / ref);
    write_json(fs::path(a.out) / meta, to_json_value(s->meta));
    entry["inputs"] = inputs;
    entry["target"] = y;
    entry["reference"] = ref;
    entry["meta"] = meta;
    entries.push_back(entry);
  }
  manifest["samples"] = entries;
  write_json(fs::path(a.out) / "manifest.json", manifest);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> iters;
  std::optional<std::uint64_t> checkpoint_every;
  std::optional<double> lr;
  std::optional<int> batch;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

int run_train(const TrainArgs& a) {
  RunSetup run = load_run(a.config);
  run.cfg.seed = resolve_seed(a.seed, run.cfg.seed);
  run.cfg.validate();
  run.pool.validate(run.cfg.mode);
  const json tj = run.raw.value("train", json::object());
  net::TrainOptions opt;
  opt.iterations = a.iters.value_or(tj.value("iterations", std::uint64_t{100}));
  opt.checkpoint_every = a.checkpoint_every.value_or(tj.value("checkpoint_every", std::uint64_t{0}));
  opt.adam.lr = a.lr.value_or(tj.value("lr", 1e-4));
  opt.batch = a.batch.value_or(tj.value("batch", 1));
  opt.workers = a.workers;
  require(opt.workers >= 1, "train", "--workers must be positive");
  require(opt.adam.lr >= 0.0, "train", "learning rate must be non-negative");

  net::Checkpoint ck;
  if (!a.resume.empty()) {
    ck = net::read_checkpoint(a.resume);
  } else {
    net::UNetConfig nc = run.raw.value("net", json::object()).get<net::UNetConfig>();
    nc.in_channels = 2 * run.cfg.num_channels();
    ck.net = net::UNet<float>(nc);
    auto rng = RandomStream::derive(run.cfg.seed, {0, 0, static_cast<std::uint64_t>(Stage::init)});
    ck.net.initialize(rng);
  }
  json gen = run.cfg;
  gen.erase("gmm");
  ck.meta = {{"mode", to_string(run.cfg.mode)},
             {"target_res_mm", run.cfg.r_targ},
             {"channels", run.cfg.num_channels()},
             {"similar_channel", run.cfg.similar_channel ? json(*run.cfg.similar_channel) : json(nullptr)},
             {"generator", gen}};

  fs::create_directories(a.out);
  const fs::path loss_path = fs::path(a.out) / "loss.csv";
  const bool append = !a.resume.empty() && fs::exists(loss_path);
  std::ofstream loss(loss_path, append ? std::ios::app : std::ios::trunc);
  if (!loss) fail(Errc::io, "train", "cannot write " + loss_path.string());
  if (!append) loss << "iteration,loss\n";
  loss << std::setprecision(9);

  std::uint64_t last_written = ~std::uint64_t{0};
  auto save = [&](const net::Checkpoint& c) {
    net::write_checkpoint(c, fs::path(a.out) / checkpoint_name(c.iteration));
    last_written = c.iteration;
  };
  if (a.resume.empty()) save(ck);
  opt.on_iteration = [&](std::uint64_t it, double l) { loss << it << ',' << l << '\n'; };
  opt.on_checkpoint = save;
  net::train(ck, run.cfg, run.pool, opt);
  if (last_written != ck.iteration) save(ck);
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::vector<double> target_res;
  std::string out;
  std::string save_reliability;
  std::string mode;
  std::optional<int> similar_channel;
};

int run_predict(const PredictArgs& a) {
  const net::Checkpoint ck = net::read_checkpoint(a.checkpoint);
  require(!a.inputs.empty(), "predict", "at least one --input is required");
  const int expected = ck.net.config().in_channels / 2;
  require(static_cast<int>(a.inputs.size()) == expected, "predict",
          "checkpoint expects " + std::to_string(expected) + " channels, got " + std::to_string(a.inputs.size()));

  Vec3 r_targ{1.0, 1.0, 1.0};
  if (!a.target_res.empty()) {
    r_targ = to_vec3(a.target_res, "--target-res");
  } else if (ck.meta.contains("target_res_mm")) {
    r_targ = ck.meta.at("target_res_mm").get<Vec3>();
  }
  const Mode mode = parse_mode(!a.mode.empty() ? a.mode : ck.meta.value("mode", std::string("sr")));
  std::optional<int> similar = a.similar_channel;
  if (!similar && ck.meta.contains("similar_channel") && !ck.meta.at("similar_channel").is_null()) {
    similar = ck.meta.at("similar_channel").get<int>();
  }

  std::vector<Volume> scans;
  std::vector<AffineMatrix> transforms;
  for (const auto& spec : a.inputs) {
    // A trailing ":file.txt" names the transform; plain paths may not contain ':'.
    const auto [img, tf] = split_pair(spec);
    scans.push_back(read_volume(img));
    transforms.push_back(tf.empty() ? AffineMatrix::identity() : read_transform(tf));
  }
  const Grid target = resampled_grid(scans.front().grid(), r_targ);
  std::vector<Volume> net_in;
  for (std::size_t c = 0; c < scans.size(); ++c) {
    net::PreparedChannel p = net::prepare_channel(scans[c], transforms[c], target);
    if (!a.save_reliability.empty()) {
      fs::create_directories(a.save_reliability);
      write_nifti(p.v, fs::path(a.save_reliability) / ("V" + std::to_string(c) + ".nii.gz"));
    }
    net_in.push_back(std::move(p.u));
    net_in.push_back(std::move(p.v));
  }
  const Volume out = net::predict(ck.net, mode, similar, net_in);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_nifti(out, a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred, ref, baseline;
};

json metrics_json(const ErrorMetrics& m) {
  json j{{"mae", m.mae}, {"rmse", m.rmse}};
  j["psnr"] = std::isinf(m.psnr) ? json("inf") : json(m.psnr);
  return j;
}

int run_eval(const EvalArgs& a) {
  const Volume ref = read_volume(a.ref);
  const Volume pred = read_volume(a.pred);
  json out{{"prediction", metrics_json(compare(pred, ref))}};
  if (!a.baseline.empty()) {
    const Volume up = cubic_resample(read_volume(a.baseline), ref.grid());
    out["baseline_cubic"] = metrics_json(compare(up, ref));
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::vector<int> dims{64, 64, 64};
  int reps = 5;
  int workers = 4;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  const auto rows = bench_all(to_dims(a.dims, "--dims"), a.reps, a.workers);
  if (a.out.empty()) {
    write_bench_csv(std::cout, rows);
  } else {
    std::ofstream f(a.out);
    if (!f) fail(Errc::io, "bench", "cannot write " + a.out);
    write_bench_csv(f, rows);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::vector<int> dims{32, 32, 32};
  int classes = 5;
  int count = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_phantom(const PhantomArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed, 0);
  require(a.count >= 1, "phantom", "--count must be positive");
  fs::create_directories(a.out);
  for (int i = 0; i < a.count; ++i) {
    auto rng = RandomStream::derive(seed, {static_cast<std::uint64_t>(i)});
    std::ostringstream name;
    name << "phantom_" << std::setw(3) << std::setfill('0') << i << ".nii.gz";
    write_nifti(make_phantom(to_dims(a.dims, "--dims"), a.classes, rng), fs::path(a.out) / name.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic training data and toy super-resolution networks for anisotropic MRI"};
  app.require_subcommand(1);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate-hyper", "Estimate GMM hyperparameters from labelled scans");
  est->add_option("--scan", ea.scans, "image.nii:labels.nii (repeatable)")->required();
  est->add_option("--channel", ea.channels, "Channel index per scan, or one for all");
  est->add_option("--target-res", ea.target_res, "Target resolution x,y,z in mm")->delimiter(',');
  est->add_option("--widen", ea.widen, "Spread widening factor");
  est->add_option("--scaling", ea.scaling, "Variance scaling: sum or product");
  est->add_flag("--no-normalize", ea.no_normalize, "Skip min-max normalisation of each scan");
  est->add_option("--labels", ea.labels, "Required label set")->delimiter(',');
  est->add_option("--out", ea.out, "Output JSON (default stdout)");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write synthetic training samples");
  gen->add_option("--config", ga.config, "Generator config JSON")->required();
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--count", ga.count, "Number of samples");
  gen->add_option("--start", ga.start, "First sample index");
  gen->add_option("--workers", ga.workers, "Generator worker threads");
  gen->add_option("--seed", ga.seed, "Seed (overrides SYNTHVOL_SEED and the config)");
  gen->add_flag("--gzip", ga.gzip, "Write .nii.gz");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a U-net on the generator stream");
  tr->add_option("--config", ta.config, "Run config JSON")->required();
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--iters", ta.iters, "Iterations to run");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint cadence (0: end only)");
  tr->add_option("--lr", ta.lr, "Adam learning rate");
  tr->add_option("--batch", ta.batch, "Samples per iteration");
  tr->add_option("--workers", ta.workers, "Generator worker threads");
  tr->add_option("--seed", ta.seed, "Seed (overrides SYNTHVOL_SEED and the config)");
  tr->add_option("--resume", ta.resume, "Checkpoint to continue from");

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Run a trained network on acquired scans");
  pr->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  pr->add_option("--input", pa.inputs, "scan.nii[:transform.txt], reference first (repeatable)")->required();
  pr->add_option("--target-res", pa.target_res, "Target resolution x,y,z in mm")->delimiter(',');
  pr->add_option("--out", pa.out, "Output NIfTI")->required();
  pr->add_option("--save-reliability", pa.save_reliability, "Directory for reliability maps");
  pr->add_option("--mode", pa.mode, "sr or sr_synth (default from checkpoint)");
  pr->add_option("--similar-channel", pa.similar_channel, "Residual channel in sr_synth mode");

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Compare a prediction with a reference volume");
  ev->add_option("--pred", va.pred, "Predicted volume")->required();
  ev->add_option("--ref", va.ref, "Reference volume")->required();
  ev->add_option("--baseline", va.baseline, "Low-resolution input for a cubic baseline");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Time the hot paths");
  be->add_option("--dims", ba.dims, "Volume dims x,y,z")->delimiter(',');
  be->add_option("--reps", ba.reps, "Timed repetitions");
  be->add_option("--workers", ba.workers, "Workers for the parallel generation row");
  be->add_option("--out", ba.out, "CSV output (default stdout)");

  PhantomArgs ha;
  auto* ph = app.add_subcommand("phantom", "Write procedural label maps");
  ph->add_option("--dims", ha.dims, "Volume dims x,y,z")->delimiter(',');
  ph->add_option("--classes", ha.classes, "Number of classes (3 to 5)");
  ph->add_option("--count", ha.count, "Number of label maps");
  ph->add_option("--seed", ha.seed, "Seed (overrides SYNTHVOL_SEED)");
  ph->add_option("--out", ha.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: cli: " << e.what() << '\n';
    return kExitInput;
  }

  try {
    if (est->parsed()) return run_estimate(ea);
    if (gen->parsed()) return run_generate(ga);
    if (tr->parsed()) return run_train(ta);
    if (pr->parsed()) return run_predict(pa);
    if (ev->parsed()) return run_eval(va);
    if (be->parsed()) return run_bench(ba);
    if (ph->parsed()) return run_phantom(ha);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_input_error() ? kExitInput : kExitRuntime;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInput;
}
