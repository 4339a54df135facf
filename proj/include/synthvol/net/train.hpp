#pragma once

// Training loop over the generator stream, and inference on preprocessed
// inputs. Iteration i consumes samples [i * batch, (i + 1) * batch), so a
// resumed run sees exactly the samples an uninterrupted run would.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "synthvol/generator.hpp"
#include "synthvol/net/checkpoint.hpp"
#include "synthvol/net/unet.hpp"

namespace synthvol::net {

template <class T>
Tensor5<T> stack_volumes(const std::vector<const Volume*>& vols) {
  require(!vols.empty(), "net", "no volumes to stack");
  const Dims d = vols.front()->dims();
  Tensor5<T> t(1, static_cast<int>(vols.size()), d[0], d[1], d[2]);
  for (std::size_t c = 0; c < vols.size(); ++c) {
    require(vols[c]->dims() == d, "net", "stacked volumes must share dims");
    std::copy(vols[c]->data().begin(), vols[c]->data().end(), t.channel(0, static_cast<int>(c)));
  }
  return t;
}

/// Appends sample tensors along the batch axis.
template <class T>
Tensor5<T> batch_cat(const std::vector<Tensor5<T>>& items) {
  require(!items.empty(), "net", "empty batch");
  const auto& f = items.front();
  Tensor5<T> out(static_cast<int>(items.size()), f.c, f.x, f.y, f.z);
  for (std::size_t i = 0; i < items.size(); ++i) {
    require(items[i].c == f.c && items[i].spatial() == f.spatial(), "net", "batch items differ in shape");
    std::copy(items[i].data.begin(), items[i].data.end(), out.channel(static_cast<int>(i), 0));
  }
  return out;
}

template <class T>
Tensor5<T> sample_inputs(const TrainingSample& s) {
  std::vector<const Volume*> v;
  for (const auto& in : s.inputs) v.push_back(&in);
  return stack_volumes<T>(v);
}

template <class T>
Tensor5<T> sample_target(const TrainingSample& s) {
  return stack_volumes<T>({&s.target});
}

struct TrainOptions {
  std::uint64_t iterations = 0;
  int batch = 1;
  int workers = 1;
  AdamOptions adam;
  std::uint64_t checkpoint_every = 0;  // 0: never
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(std::uint64_t, double)> on_iteration;
};

/// Runs `opt.iterations` steps starting at ck.iteration and returns the
/// per-iteration loss trace. `ck` is updated in place.
inline std::vector<double> train(Checkpoint& ck, const GeneratorConfig& cfg, const TrainingPool& pool,
                                 const TrainOptions& opt) {
  require(opt.batch >= 1, "train", "batch size must be positive");
  require(ck.net.config().in_channels == 2 * cfg.num_channels(), "train",
          "network expects " + std::to_string(ck.net.config().in_channels) + " input channels, generator provides " +
              std::to_string(2 * cfg.num_channels()));
  if (ck.adam.m.size() != ck.net.params().size()) ck.adam.resize_for(ck.net.params());
  std::vector<double> trace;
  trace.reserve(opt.iterations);
  const auto b = static_cast<std::uint64_t>(opt.batch);
  SampleStream feed(cfg, pool, ck.iteration * b, opt.iterations * b, opt.workers);
  for (std::uint64_t k = 0; k < opt.iterations; ++k) {
    std::vector<Tensor5<float>> xs, ys;
    for (int i = 0; i < opt.batch; ++i) {
      auto s = feed.next();
      require(s.has_value(), "train", "generator stream ended early");
      xs.push_back(sample_inputs<float>(*s));
      ys.push_back(sample_target<float>(*s));
    }
    const Tensor5<float> x = batch_cat(xs), y = batch_cat(ys);
    UNet<float>::Cache cache;
    ck.net.zero_grad();
    const Tensor5<float> pred = ck.net.forward(x, cache);
    const double loss = l1_loss(pred, y);
    if (!std::isfinite(loss)) {
      fail(Errc::numerical, "train", "non-finite loss at iteration " + std::to_string(ck.iteration));
    }
    ck.net.backward(cache, l1_loss_grad(pred, y));
    adam_step(ck.net.params(), ck.adam, opt.adam);
    ++ck.iteration;
    trace.push_back(loss);
    if (opt.on_iteration) opt.on_iteration(ck.iteration - 1, loss);
    if (opt.checkpoint_every > 0 && ck.iteration % opt.checkpoint_every == 0 && opt.on_checkpoint) {
      opt.on_checkpoint(ck);
    }
  }
  return trace;
}

/// Network output on channel-stacked inputs (U_0, V_0, U_1, V_1, ...).
/// Inputs are zero-padded up to the level divisor and the result cropped
/// back, so any dims are accepted.
inline Volume run_network(const UNet<float>& net, const std::vector<Volume>& inputs) {
  require(static_cast<int>(inputs.size()) == net.config().in_channels, "predict",
          "network expects " + std::to_string(net.config().in_channels) + " input volumes, got " +
              std::to_string(inputs.size()));
  const Dims d = inputs.front().dims();
  const int div = net.config().divisor();
  Dims p{};
  for (int a = 0; a < 3; ++a) p[a] = (d[a] + div - 1) / div * div;
  Tensor5<float> x(1, static_cast<int>(inputs.size()), p[0], p[1], p[2]);
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    require(inputs[c].dims() == d, "predict", "input volumes must share dims");
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) x.at(0, static_cast<int>(c), i, j, k) = inputs[c].at(i, j, k);
  }
  const Tensor5<float> y = net.forward(x);
  Volume out(inputs.front().grid());
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) out.at(i, j, k) = y.at(0, 0, i, j, k);
  return out;
}

/// sr: U_0 + output; sr_synth: U_{c*} + output, or the output alone.
inline Volume predict(const UNet<float>& net, Mode mode, std::optional<int> similar_channel,
                      const std::vector<Volume>& inputs) {
  Volume out = run_network(net, inputs);
  std::optional<int> base;
  if (mode == Mode::sr) base = 0;
  else if (similar_channel) base = *similar_channel;
  if (base) {
    require(2 * *base < static_cast<int>(inputs.size()), "predict", "residual channel out of range");
    const Volume& u = inputs[static_cast<std::size_t>(2 * *base)];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += u[i];
  }
  return out;
}

/// Realigned, normalised inputs for one acquired channel at inference.
/// `target_to_channel_world` maps reference-frame world points into the
/// channel's world frame.
struct PreparedChannel {
  Volume u, v;
};

inline PreparedChannel prepare_channel(const Volume& scan, const AffineMatrix& target_to_channel_world,
                                       const Grid& target) {
  PreparedChannel p;
  const Volume resampled = resample_onto(scan, target, target_to_channel_world, Interp::trilinear);
  p.u = minmax_normalize(resampled);
  p.v = compute_reliability(scan.grid(), target_to_channel_world, target);
  return p;
}

}  // namespace synthvol::net
