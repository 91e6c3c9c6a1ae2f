#include "avdnet/train.hpp"

#include <cstdio>
#include <fstream>

#include "avdnet/weights_io.hpp"

namespace avdnet {

namespace {

struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed ? seed : 0x9E3779B97F4A7C15ull) {}
  std::uint64_t next_u64() {
    state ^= state >> 12;
    state ^= state << 25;
    state ^= state >> 27;
    return state * 0x2545F4914F6CDD1Dull;
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
};

}  // namespace

std::vector<TrainLogEntry> train_loop(Network<float>& net, const std::vector<TrainSample>& dataset,
                                      const AnchorSet& anchors, const TrainConfig& cfg,
                                      const std::string& checkpoint_path) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_loop: dataset is empty");
  const std::size_t S = static_cast<std::size_t>(net.spec.grid());
  const std::size_t C = static_cast<std::size_t>(net.spec.num_classes);
  const std::size_t in = static_cast<std::size_t>(net.spec.input_size);
  for (const auto& sample : dataset) {
    if (sample.image.rank() != 3 || sample.image.extent(0) != 3 || sample.image.extent(1) != in ||
        sample.image.extent(2) != in)
      throw std::invalid_argument("train_loop: sample image shape " + sample.image.shape_str() +
                                  " does not match network input " + std::to_string(in));
  }

  std::vector<TargetTensor<float>> targets;
  targets.reserve(dataset.size());
  for (const auto& sample : dataset)
    targets.push_back(assign_targets<float>(sample.boxes, anchors, S, C));

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::size_t cursor = order.size();  // forces a shuffle before the first draw

  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  Tensor<float> batch({b, 3, in, in});
  std::vector<TargetTensor<float>> batch_targets(b);
  std::vector<float> velocity;
  ForwardCache<float> cache;
  std::vector<TrainLogEntry> log;
  log.reserve(static_cast<std::size_t>(cfg.total_iterations));

  for (long iter = 0; iter < cfg.total_iterations; ++iter) {
    for (std::size_t slot = 0; slot < b; ++slot) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      const std::size_t pick = order[cursor++];
      const Tensor<float>& img = dataset[pick].image;
      std::copy(img.data(), img.data() + img.numel(), batch.data() + slot * img.numel());
      batch_targets[slot] = targets[pick];
    }

    Tensor<float> pred = forward_train(net, batch, cache, true);
    auto res = detection_loss<float>(
        pred, std::span<const TargetTensor<float>>(batch_targets.data(), b), cfg);
    NetworkGrads<float> grads = backward(net, cache, res.grad);
    const double lr = lr_schedule(iter, cfg);
    sgd_step(net, grads, velocity, lr, cfg);
    log.push_back({iter, lr, res.loss});

    if (!checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
        (iter + 1) % cfg.checkpoint_interval == 0)
      save_weights(net, checkpoint_path, &anchors);
  }
  if (!checkpoint_path.empty()) save_weights(net, checkpoint_path, &anchors);
  return log;
}

void save_loss_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open loss log for writing: " + path);
  out << "iteration,lr,loss\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g\n", e.iteration, e.lr, e.loss);
    out << buf;
  }
}

namespace {

struct FlatParams {
  std::vector<double*> ptr;  // one per scalar, canonical order
};

FlatParams flatten(Network<double>& net) {
  FlatParams flat;
  visit_params(net, false, [&](const ParamRef<double>& p) {
    for (std::size_t i = 0; i < p.size; ++i) flat.ptr.push_back(p.data + i);
  });
  return flat;
}

std::vector<double> flatten_grads(NetworkGrads<double>& grads, const Network<double>& net) {
  std::vector<double> flat;
  visit_grads(grads, const_cast<Network<double>&>(net), [&](double* g, std::size_t n) {
    flat.insert(flat.end(), g, g + n);
  });
  return flat;
}

}  // namespace

GradCheckResult gradient_check(const NetworkSpec& spec, std::uint64_t seed, double eps,
                               std::size_t sample_count) {
  if (eps <= 0.0) throw std::invalid_argument("gradient_check: eps must be positive");
  spec.validate();
  if (spec.input_size > 64)
    throw std::invalid_argument("gradient_check: use a tiny network (input size <= 64)");

  Network<double> net = build_network<double>(spec);
  init_weights(net, seed);

  Rng rng(seed ^ 0xABCDEF1234567890ull);
  const std::size_t in = static_cast<std::size_t>(spec.input_size);
  Tensor<double> batch({2, 3, in, in});
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = rng.unit();

  // a couple of boxes per image, random shape and class
  AnchorSet anchors;
  anchors.anchors = {{0.08, 0.10}, {0.15, 0.12}, {0.20, 0.25}, {0.40, 0.35}};
  const std::size_t S = static_cast<std::size_t>(spec.grid());
  const std::size_t C = static_cast<std::size_t>(spec.num_classes);
  std::vector<TargetTensor<double>> targets;
  for (int img = 0; img < 2; ++img) {
    std::vector<GroundTruthBox> boxes;
    for (int bidx = 0; bidx < 3; ++bidx) {
      GroundTruthBox gt;
      gt.class_id = static_cast<int>(rng.below(C));
      gt.w = 0.05 + 0.3 * rng.unit();
      gt.h = 0.05 + 0.3 * rng.unit();
      gt.cx = gt.w / 2 + (1.0 - gt.w) * rng.unit();
      gt.cy = gt.h / 2 + (1.0 - gt.h) * rng.unit();
      boxes.push_back(gt);
    }
    targets.push_back(assign_targets<double>(boxes, anchors, S, C));
  }

  TrainConfig cfg;
  // Loss plus the sign pattern of every pre-activation. Central differences
  // are only a valid derivative estimate when no leaky-ReLU kink sits inside
  // the probe window, i.e. when the two probes share one sign pattern.
  auto eval_probe = [&](std::vector<bool>* signs) {
    ForwardCache<double> cache;
    Tensor<double> pred = forward_train(net, batch, cache, false);
    if (signs) {
      signs->clear();
      auto collect = [&](const LayerCache<double>& lc) {
        const Tensor<double>& pre = lc.bn_out;
        for (std::size_t i = 0; i < pre.numel(); ++i) signs->push_back(pre[i] >= 0.0);
      };
      collect(cache.conv1);
      collect(cache.conv2);
      for (const auto& blk : cache.blocks)
        for (const auto& lc : blk) collect(lc);
    }
    return detection_loss<double>(pred, std::span<const TargetTensor<double>>(targets.data(), 2),
                                  cfg)
        .loss;
  };

  ForwardCache<double> cache;
  Tensor<double> pred = forward_train(net, batch, cache, false);
  auto res = detection_loss<double>(pred, std::span<const TargetTensor<double>>(targets.data(), 2),
                                    cfg);
  NetworkGrads<double> grads = backward(net, cache, res.grad);
  const std::vector<double> analytic = flatten_grads(grads, net);
  FlatParams flat = flatten(net);

  // sample parameter indices without replacement
  std::vector<std::size_t> indices(flat.ptr.size());
  std::iota(indices.begin(), indices.end(), std::size_t(0));
  const std::size_t n = std::min(sample_count, indices.size());
  for (std::size_t i = 0; i < n; ++i)
    std::swap(indices[i], indices[i + rng.below(indices.size() - i)]);

  GradCheckResult result;
  result.checked = n;
  std::vector<bool> signs_p, signs_m;
  for (std::size_t s = 0; s < n; ++s) {
    double* theta = flat.ptr[indices[s]];
    const double saved = *theta;
    double numeric = 0.0;
    double eps_k = eps;
    for (int attempt = 0; attempt < 4; ++attempt) {
      *theta = saved + eps_k;
      const double lp = eval_probe(&signs_p);
      *theta = saved - eps_k;
      const double lm = eval_probe(&signs_m);
      *theta = saved;
      numeric = (lp - lm) / (2.0 * eps_k);
      if (signs_p == signs_m) break;  // kink-free window
      eps_k /= 10.0;
    }
    const double a = analytic[indices[s]];
    const double denom = std::max(std::abs(a), std::abs(numeric));
    const double err = denom >= 1e-8 ? std::abs(a - numeric) / denom : std::abs(a - numeric);
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  return result;
}

}  // namespace avdnet
