#include <doctest.h>

#include <random>

#include "avdnet/decode.hpp"
#include "avdnet/train.hpp"
#include "oracles.hpp"

using namespace avdnet;

namespace {

AnchorSet four_anchors() {
  AnchorSet a;
  a.anchors = {{0.05, 0.08}, {0.10, 0.10}, {0.18, 0.12}, {0.30, 0.28}};
  return a;
}

NetworkSpec micro_spec() {
  NetworkSpec spec;
  spec.input_size = 24;
  spec.num_classes = 2;
  spec.widths = {2, 3, 3, 4, 4, 5, 5};
  return spec;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("assign_targets: empty list leaves every slot non-responsible") {
  const auto anchors = four_anchors();
  auto t = assign_targets<double>({}, anchors, 8, 3);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(!t.responsible(a, i, j));
}

TEST_CASE("assign_targets: center just past the midpoint lands in cell (S/2, S/2)") {
  const auto anchors = four_anchors();
  const std::size_t S = 8;
  GroundTruthBox gt{0, 0.5 + 1e-6, 0.5 + 1e-6, 0.1, 0.1};
  auto t = assign_targets<double>({gt}, anchors, S, 2);
  int count = 0;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j)
        if (t.responsible(a, i, j)) {
          ++count;
          CHECK(i == S / 2);
          CHECK(j == S / 2);
        }
  CHECK(count == 1);
}

TEST_CASE("assign_targets: exact anchor shape wins the slot") {
  const auto anchors = four_anchors();
  GroundTruthBox gt{1, 0.31, 0.72, 0.18, 0.12};  // anchor index 2 exactly
  auto t = assign_targets<double>({gt}, anchors, 8, 2);
  const std::size_t i = static_cast<std::size_t>(0.72 * 8), j = static_cast<std::size_t>(0.31 * 8);
  CHECK(t.responsible(2, i, j));
  // objectness target and one-hot class
  const std::size_t base = 2 * (5 + 2);
  CHECK(t.values.at(base + 4, i, j) == 1.0);
  CHECK(t.values.at(base + 5 + 1, i, j) == 1.0);
  CHECK(t.values.at(base + 5 + 0, i, j) == 0.0);
}

TEST_CASE("assign_targets: out-of-range coordinates and class are rejected") {
  const auto anchors = four_anchors();
  CHECK_THROWS_WITH_AS((assign_targets<double>({{0, 1.5, 0.5, 0.1, 0.1}}, anchors, 8, 2)),
                       doctest::Contains("cx"), std::invalid_argument);
  CHECK_THROWS_AS((assign_targets<double>({{0, 0.5, 0.5, 0.0, 0.1}}, anchors, 8, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS((assign_targets<double>({{5, 0.5, 0.5, 0.1, 0.1}}, anchors, 8, 2)),
                  std::invalid_argument);
}

TEST_CASE("assign_targets collision: larger box keeps the slot, smaller falls back") {
  const auto anchors = four_anchors();
  // both in the same cell, both preferring anchor 2
  GroundTruthBox big{0, 0.51, 0.51, 0.18, 0.12};
  GroundTruthBox small{1, 0.52, 0.52, 0.17, 0.11};
  auto t = assign_targets<double>({small, big}, anchors, 4, 2);
  const std::size_t i = 2, j = 2;
  CHECK(t.responsible(2, i, j));
  // the big one owns anchor 2: class 0 one-hot there
  CHECK(t.values.at(2 * 7 + 5 + 0, i, j) == 1.0);
  // the small one fell to some other anchor in the same cell
  int others = 0;
  for (std::size_t a = 0; a < 4; ++a)
    if (a != 2 && t.responsible(a, i, j)) ++others;
  CHECK(others == 1);
}

TEST_CASE("encode then decode reproduces boxes within 1e-6") {
  const auto anchors = four_anchors();
  const std::size_t S = 13, C = 3;
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    GroundTruthBox gt;
    gt.class_id = static_cast<int>(rng() % C);
    gt.w = 0.02 + 0.5 * unit(rng);
    gt.h = 0.02 + 0.5 * unit(rng);
    gt.cx = unit(rng);
    gt.cy = unit(rng);
    auto t = assign_targets<double>({gt}, anchors, S, C);
    // decode the raw target tensor and find the responsible slot's box
    auto dets = decode(t.values, anchors, 0.0);
    bool found = false;
    for (const auto& d : dets) {
      if (std::abs(d.cx - gt.cx) < 1e-6 && std::abs(d.cy - gt.cy) < 1e-6 &&
          std::abs(d.w - gt.w) < 1e-6 && std::abs(d.h - gt.h) < 1e-6) {
        found = true;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("loss is ~0 when predictions reproduce the targets") {
  const auto anchors = four_anchors();
  const std::size_t S = 6, C = 2;
  std::vector<GroundTruthBox> gts = {{0, 0.42, 0.37, 0.2, 0.15}, {1, 0.8, 0.8, 0.08, 0.09}};
  auto t = assign_targets<double>({gts}, anchors, S, C);

  Tensor<double> pred(t.values.shape());
  for (std::size_t a = 0; a < 4; ++a) {
    const std::size_t base = a * (5 + C);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        if (t.responsible(a, i, j)) {
          for (std::size_t ch = 0; ch < 4; ++ch)
            pred.at(base + ch, i, j) = t.values.at(base + ch, i, j);
          pred.at(base + 4, i, j) = 20.0;  // sigmoid -> 1
          for (std::size_t c = 0; c < C; ++c) {
            const bool hot = t.values.at(base + 5 + c, i, j) == 1.0;
            pred.at(base + 5 + c, i, j) = hot ? 40.0 : -40.0;  // softmax -> one-hot
          }
        } else {
          pred.at(base + 4, i, j) = -20.0;  // sigmoid -> 0
        }
      }
  }
  TrainConfig cfg;
  auto res = detection_loss<double>(pred, t, cfg);
  CHECK(res.loss < 1e-6);
}

TEST_CASE("all-zero prediction with no truths costs lambda_noobj * slots / 4") {
  const auto anchors = four_anchors();
  const std::size_t S = 5, C = 3;
  auto t = assign_targets<double>({}, anchors, S, C);
  Tensor<double> pred(t.values.shape());
  TrainConfig cfg;
  auto res = detection_loss<double>(pred, t, cfg);
  const double expect = cfg.lambda_noobj * static_cast<double>(4 * S * S) * 0.25;
  CHECK(res.loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batched loss divides by the batch extent") {
  const auto anchors = four_anchors();
  const std::size_t S = 4, C = 2;
  auto t = assign_targets<double>({}, anchors, S, C);
  Tensor<double> pred({2, 4 * (5 + C), S, S});
  std::vector<TargetTensor<double>> ts = {t, t};
  TrainConfig cfg;
  auto res = detection_loss<double>(pred, std::span<const TargetTensor<double>>(ts.data(), 2), cfg);
  const double expect = cfg.lambda_noobj * static_cast<double>(4 * S * S) * 0.25;
  CHECK(res.loss == doctest::Approx(expect).epsilon(1e-12));  // 2x the sum over 2 images
}

TEST_CASE("loss gradient matches finite differences") {
  const auto anchors = four_anchors();
  const std::size_t S = 4, C = 3;
  std::vector<GroundTruthBox> gts = {{0, 0.3, 0.3, 0.2, 0.25}, {2, 0.77, 0.6, 0.1, 0.07}};
  auto t = assign_targets<double>({gts}, anchors, S, C);
  std::mt19937 rng(66);
  Tensor<double> pred(t.values.shape());
  oracle::fill_random(pred, rng);
  TrainConfig cfg;
  auto res = detection_loss<double>(pred, t, cfg);

  const double eps = 1e-6;
  for (int probe = 0; probe < 120; ++probe) {
    const std::size_t i = rng() % pred.numel();
    Tensor<double> p = pred;
    p[i] = pred[i] + eps;
    const double lp = detection_loss<double>(p, t, cfg).loss;
    p[i] = pred[i] - eps;
    const double lm = detection_loss<double>(p, t, cfg).loss;
    CHECK(oracle::rel_err(res.grad[i], (lp - lm) / (2 * eps)) < 1e-4);
  }
}

TEST_CASE("loss rejects shape mismatches") {
  const auto anchors = four_anchors();
  auto t = assign_targets<double>({}, anchors, 4, 2);
  Tensor<double> pred({4 * 7, 5, 5});
  TrainConfig cfg;
  CHECK_THROWS_AS(detection_loss<double>(pred, t, cfg), std::invalid_argument);
}

TEST_CASE("loss is non-negative on random inputs") {
  const auto anchors = four_anchors();
  std::mt19937 rng(4);
  TrainConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t S = 3 + rng() % 4, C = 1 + rng() % 4;
    std::vector<GroundTruthBox> gts;
    for (std::size_t n = 0; n < rng() % 3; ++n) {
      std::uniform_real_distribution<double> unit(0.05, 0.95);
      gts.push_back({static_cast<int>(rng() % C), unit(rng), unit(rng), 0.1, 0.1});
    }
    auto t = assign_targets<double>(gts, anchors, S, C);
    Tensor<double> pred(t.values.shape());
    oracle::fill_random(pred, rng, -3.0, 3.0);
    CHECK(detection_loss<double>(pred, t, cfg).loss >= 0.0);
  }
}

TEST_CASE("lr schedule: 0.001 before 20k, 0.0001 at and after") {
  TrainConfig cfg;
  CHECK(lr_schedule(0, cfg) == 0.001);
  CHECK(lr_schedule(19999, cfg) == 0.001);
  CHECK(lr_schedule(20000, cfg) == doctest::Approx(0.0001));
  CHECK(lr_schedule(30000, cfg) == doctest::Approx(0.0001));
  CHECK_THROWS_AS(lr_schedule(-1, cfg), std::invalid_argument);
}

TEST_CASE("sgd: zero gradients leave weights unchanged") {
  auto net = build_network<double>(micro_spec());
  init_weights(net, 3);
  auto before = net;
  ForwardCache<double> cache;
  Tensor<double> x({1, 3, 24, 24});
  forward_train(net, x, cache, false);
  NetworkGrads<double> grads = backward(net, cache, Tensor<double>(
      {1, static_cast<std::size_t>(net.spec.head_channels()), 3, 3}));
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> velocity;
  sgd_step(net, grads, velocity, 0.1, cfg);
  std::vector<double> va, vb;
  visit_params(before, false, [&](const ParamRef<double>& p) {
    va.insert(va.end(), p.data, p.data + p.size);
  });
  visit_params(net, false, [&](const ParamRef<double>& p) {
    vb.insert(vb.end(), p.data, p.data + p.size);
  });
  CHECK(va == vb);
}

TEST_CASE("sgd arithmetic: w=1, grad=1, lr=0.1, no momentum/decay -> 0.9") {
  auto net = build_network<double>(micro_spec());
  net.head.conv.bias[0] = 1.0;
  ForwardCache<double> cache;
  Tensor<double> x({1, 3, 24, 24});
  forward_train(net, x, cache, false);
  NetworkGrads<double> grads = backward(net, cache, Tensor<double>(
      {1, static_cast<std::size_t>(net.spec.head_channels()), 3, 3}));
  grads.head.b[0] = 1.0;
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  std::vector<double> velocity;
  sgd_step(net, grads, velocity, 0.1, cfg);
  CHECK(net.head.conv.bias[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("sgd momentum: two identical-gradient steps give velocity 1.9*lr*g") {
  auto net = build_network<double>(micro_spec());
  const double w0 = 0.5;
  net.head.conv.bias[0] = w0;
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  const double lr = 0.01, g = 2.0;
  ForwardCache<double> cache;
  Tensor<double> x({1, 3, 24, 24});
  forward_train(net, x, cache, false);
  NetworkGrads<double> grads = backward(net, cache, Tensor<double>(
      {1, static_cast<std::size_t>(net.spec.head_channels()), 3, 3}));
  grads.head.b[0] = g;
  std::vector<double> velocity;
  sgd_step(net, grads, velocity, lr, cfg);
  const double after_one = net.head.conv.bias[0];
  CHECK(after_one == doctest::Approx(w0 - lr * g));
  grads.head.b[0] = g;  // same gradient again
  sgd_step(net, grads, velocity, lr, cfg);
  const double second_step = net.head.conv.bias[0] - after_one;
  CHECK(std::abs(second_step) == doctest::Approx(1.9 * lr * g));
}

TEST_CASE("weight decay contributes exactly lr*decay*w with zero data gradient") {
  auto net = build_network<double>(micro_spec());
  init_weights(net, 8);
  const double w0 = net.conv1.conv.weights[0];
  ForwardCache<double> cache;
  Tensor<double> x({1, 3, 24, 24});
  forward_train(net, x, cache, false);
  NetworkGrads<double> grads = backward(net, cache, Tensor<double>(
      {1, static_cast<std::size_t>(net.spec.head_channels()), 3, 3}));
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0005;
  const double lr = 0.1;
  std::vector<double> velocity;
  const double scale0 = net.conv1.bn.scale[0];
  sgd_step(net, grads, velocity, lr, cfg);
  CHECK(net.conv1.conv.weights[0] == doctest::Approx(w0 - lr * cfg.weight_decay * w0).epsilon(1e-13));
  // batch-norm scale is exempt from decay
  CHECK(net.conv1.bn.scale[0] == scale0);
}

TEST_CASE("train_loop: one iteration logs one loss and changes the weights") {
  auto net = build_network<float>(micro_spec());
  init_weights(net, 5);
  auto before = net;
  std::vector<TrainSample> data(1);
  std::mt19937 rng(5);
  data[0].image = Tensor<float>({3, 24, 24});
  oracle::fill_random(data[0].image, rng, 0.0, 1.0);
  data[0].boxes = {{0, 0.5, 0.5, 0.3, 0.3}};
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.total_iterations = 1;
  auto log = train_loop(net, data, four_anchors(), cfg);
  REQUIRE(log.size() == 1);
  CHECK(log[0].iteration == 0);
  bool any_diff = false;
  std::vector<float> va, vb;
  visit_params(before, false, [&](const ParamRef<float>& p) {
    va.insert(va.end(), p.data, p.data + p.size);
  });
  visit_params(net, false, [&](const ParamRef<float>& p) {
    vb.insert(vb.end(), p.data, p.data + p.size);
  });
  for (std::size_t i = 0; i < va.size(); ++i) any_diff |= va[i] != vb[i];
  CHECK(any_diff);
}

TEST_CASE("train_loop: empty dataset is an error") {
  auto net = build_network<float>(micro_spec());
  TrainConfig cfg;
  CHECK_THROWS_AS(train_loop(net, {}, four_anchors(), cfg), std::invalid_argument);
}

TEST_CASE("train_loop: same seed reproduces the loss log exactly") {
  std::vector<TrainSample> data(3);
  std::mt19937 rng(123);
  for (auto& s : data) {
    s.image = Tensor<float>({3, 24, 24});
    oracle::fill_random(s.image, rng, 0.0, 1.0);
    s.boxes = {{0, 0.4, 0.6, 0.2, 0.2}, {1, 0.7, 0.3, 0.15, 0.1}};
  }
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.total_iterations = 6;
  cfg.seed = 99;

  auto run = [&]() {
    auto net = build_network<float>(micro_spec());
    init_weights(net, cfg.seed);
    return train_loop(net, data, four_anchors(), cfg);
  };
  const auto log1 = run();
  const auto log2 = run();
  REQUIRE(log1.size() == log2.size());
  for (std::size_t i = 0; i < log1.size(); ++i) {
    CHECK(log1[i].loss == log2[i].loss);
    CHECK(log1[i].lr == log2[i].lr);
  }
}

TEST_CASE("fixed-batch loss is non-increasing early in >= 90% of seeds") {
  int monotone = 0;
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    auto net = build_network<float>(micro_spec());
    init_weights(net, static_cast<std::uint64_t>(seed) + 1000);
    std::vector<TrainSample> data(2);
    std::mt19937 rng(seed + 1);
    for (auto& s : data) {
      s.image = Tensor<float>({3, 24, 24});
      oracle::fill_random(s.image, rng, 0.0, 1.0);
      s.boxes = {{0, 0.45, 0.55, 0.25, 0.2}};
    }
    TrainConfig cfg;
    cfg.batch_size = 2;  // the whole dataset: every iteration sees the same batch
    cfg.total_iterations = 50;
    // plain descent with a small step; momentum overshoot would wiggle the
    // curve and batch-norm makes some directions stiff
    cfg.initial_lr = 1e-6;
    cfg.momentum = 0.0;
    cfg.seed = static_cast<std::uint64_t>(seed);
    auto log = train_loop(net, data, four_anchors(), cfg);
    bool ok = true;
    for (std::size_t i = 1; i < log.size(); ++i)
      if (log[i].loss > log[i - 1].loss) ok = false;
    if (ok) ++monotone;
  }
  CHECK(monotone >= 9);
}

TEST_CASE("gradient_check: tiny net end-to-end under 1e-4; eps=0 rejected") {
  NetworkSpec spec;
  spec.input_size = 32;
  spec.num_classes = 2;
  spec.widths = {4, 6, 6, 8, 8, 12, 12};
  auto res = gradient_check(spec, 7, 1e-5, 60);
  CHECK(res.checked == 60);
  CHECK(res.max_rel_error < 1e-4);
  CHECK_THROWS_AS(gradient_check(spec, 7, 0.0), std::invalid_argument);
}

TEST_CASE("single conv layer with quadratic loss: finite differences agree to 1e-8") {
  std::mt19937 rng(31415);
  ConvParams<double> p;
  p.weights = Tensor<double>({2, 2, 3, 3});
  p.bias.assign(2, 0.0);
  p.stride = 1;
  p.padding = 1;
  oracle::fill_random(p.weights, rng, -0.5, 0.5);
  Tensor<double> x({2, 6, 6}), target({2, 6, 6});
  oracle::fill_random(x, rng);
  oracle::fill_random(target, rng);

  auto loss_of = [&](const ConvParams<double>& probe) {
    Tensor<double> o = conv2d_forward(x, probe);
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) {
      const double r = o[i] - target[i];
      s += r * r;
    }
    return s;
  };
  Tensor<double> out = conv2d_forward(x, p);
  Tensor<double> g(out.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) g[i] = 2.0 * (out[i] - target[i]);
  auto [gi, gw, gb] = conv2d_backward(g, x, p);

  const double eps = 1e-5;
  for (std::size_t i = 0; i < p.weights.numel(); ++i) {
    ConvParams<double> pp = p;
    pp.weights[i] = p.weights[i] + eps;
    const double lp = loss_of(pp);
    pp.weights[i] = p.weights[i] - eps;
    const double lm = loss_of(pp);
    CHECK(oracle::rel_err(gw[i], (lp - lm) / (2 * eps)) < 1e-8);
  }
}

}  // TEST_SUITE
