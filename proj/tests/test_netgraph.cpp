#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "avdnet/network.hpp"
#include "avdnet/weights_io.hpp"
#include "oracles.hpp"

using namespace avdnet;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec spec;
  spec.input_size = 152;
  spec.num_classes = 2;
  spec.widths = {8, 16, 16, 32, 32, 64, 64};
  return spec;
}

NetworkSpec micro_spec() {
  NetworkSpec spec;
  spec.input_size = 24;
  spec.num_classes = 2;
  spec.widths = {2, 3, 3, 4, 4, 5, 5};
  return spec;
}

/// batch-norm stats that make inference the identity: mean 0, var 1-eps
template <typename T>
void set_identity_infer_stats(ConvLayer<T>& layer) {
  std::fill(layer.bn.running_mean.begin(), layer.bn.running_mean.end(), T(0));
  std::fill(layer.bn.running_var.begin(), layer.bn.running_var.end(), T(1) - layer.bn.epsilon);
  std::fill(layer.bn.scale.begin(), layer.bn.scale.end(), T(1));
  std::fill(layer.bn.shift.begin(), layer.bn.shift.end(), T(0));
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("netgraph") {

TEST_CASE("default plan: 76x76 head, three stride-2 stages, size ladder") {
  NetworkSpec spec;  // defaults: 608, C=4
  auto net = build_network<float>(spec);
  const auto out = output_shape(spec);
  CHECK(out[0] == 36);
  CHECK(out[1] == 76);
  CHECK(out[2] == 76);
  CHECK(stride2_count(net) == 3);
  CHECK(net.conv2.conv.stride == 2);
  CHECK(net.blocks[1].a.conv.stride == 2);
  CHECK(net.blocks[3].a.conv.stride == 2);
  CHECK(net.head.has_bn == false);
  CHECK(net.head.activated == false);
}

TEST_CASE("tiny plan gives a 19x19x28 head") {
  const auto spec = tiny_spec();
  const auto out = output_shape(spec);
  CHECK(out[0] == 28);
  CHECK(out[1] == 19);
  CHECK(out[2] == 19);
}

TEST_CASE("invalid specs are rejected") {
  NetworkSpec bad;
  bad.num_classes = 0;
  CHECK_THROWS_AS(build_network<float>(bad), std::invalid_argument);
  NetworkSpec indivisible;
  indivisible.input_size = 100;
  CHECK_THROWS_AS(build_network<float>(indivisible), std::invalid_argument);
}

TEST_CASE("parameter counts: frozen totals and the single-layer example") {
  NetworkSpec spec;
  auto net = build_network<float>(spec);
  CHECK(count_params(net) == 11392868u);

  NetworkSpec spec11 = spec;
  spec11.num_classes = 11;
  auto net11 = build_network<float>(spec11);
  CHECK(count_params(net11) == 11407232u);

  auto single = detail::make_layer<float>("x", 2, 3, 1, 1, false, false);
  CHECK(layer_param_count(single) == 9u);
}

TEST_CASE("count is within 15% of the 13M reference") {
  NetworkSpec spec;
  auto net = build_network<float>(spec);
  const double rel = std::abs(static_cast<double>(count_params(net)) - 13.0e6) / 13.0e6;
  CHECK(rel < 0.15);
}

TEST_CASE("init_weights is deterministic per seed and seed-sensitive") {
  const auto spec = micro_spec();
  auto a = build_network<float>(spec);
  auto b = build_network<float>(spec);
  auto c = build_network<float>(spec);
  init_weights(a, 42);
  init_weights(b, 42);
  init_weights(c, 43);
  auto flatten = [](Network<float>& n) {
    std::vector<float> v;
    visit_params(n, true, [&](const ParamRef<float>& p) {
      v.insert(v.end(), p.data, p.data + p.size);
    });
    return v;
  };
  const auto va = flatten(a), vb = flatten(b), vc = flatten(c);
  CHECK(va == vb);
  CHECK(va != vc);

  // bounds: conv1 of micro spec has fan_in 27
  const double bound = std::sqrt(2.0 / 27.0);
  for (std::size_t i = 0; i < a.conv1.conv.weights.numel(); ++i)
    CHECK(std::abs(a.conv1.conv.weights[i]) <= bound);
}

TEST_CASE("post-init forward on random input stays finite") {
  const auto spec = micro_spec();
  auto net = build_network<float>(spec);
  init_weights(net, 7);
  std::mt19937 rng(7);
  Tensor<float> x({1, 3, 24, 24});
  oracle::fill_random(x, rng, 0.0, 1.0);
  Tensor<float> y = forward(net, x);
  CHECK(y.all_finite());
  CHECK(y.shape() == std::vector<std::size_t>{1, static_cast<std::size_t>(spec.head_channels()),
                                              3, 3});
}

TEST_CASE("batched forward equals independent single-image passes, bitwise") {
  const auto spec = micro_spec();
  auto net = build_network<float>(spec);
  init_weights(net, 21);
  std::mt19937 rng(21);
  Tensor<float> batch({2, 3, 24, 24});
  oracle::fill_random(batch, rng, 0.0, 1.0);
  Tensor<float> both = forward(net, batch);
  Tensor<float> first = forward_image(net, batch.slice_batch(0));
  Tensor<float> second = forward_image(net, batch.slice_batch(1));
  REQUIRE(both.extent(0) == 2);
  for (std::size_t i = 0; i < first.numel(); ++i) {
    CHECK(both[i] == first[i]);
    CHECK(both[first.numel() + i] == second[i]);
  }
}

TEST_CASE("forward rejects the wrong input size") {
  auto net = build_network<float>(micro_spec());
  Tensor<float> x({1, 3, 16, 16});
  CHECK_THROWS_AS(forward(net, x), std::invalid_argument);
}

TEST_CASE("repeated inference is bit-identical") {
  auto net = build_network<float>(micro_spec());
  init_weights(net, 5);
  std::mt19937 rng(5);
  Tensor<float> x({1, 3, 24, 24});
  oracle::fill_random(x, rng, 0.0, 1.0);
  Tensor<float> a = forward(net, x);
  Tensor<float> b = forward(net, x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("zeroed 1x1 branch makes a ConvRes block return its first conv output") {
  auto blk = detail::make_block<float>("t", 4, 6, 1);
  std::mt19937 rng(55);
  oracle::fill_random(blk.a.conv.weights, rng);
  oracle::fill_random(blk.b.conv.weights, rng);
  blk.c.conv.weights.fill(0.0f);
  set_identity_infer_stats(blk.a);
  set_identity_infer_stats(blk.b);
  set_identity_infer_stats(blk.c);

  Tensor<float> x({4, 6, 6});
  oracle::fill_random(x, rng);
  Tensor<float> a = detail::layer_infer(blk.a, x);
  Tensor<float> out = detail::block_infer(blk, x);
  REQUIRE(out.same_shape(a));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("zeroing conv_b and conv_c turns every block into the identity on its first conv") {
  auto net = build_network<float>(micro_spec());
  init_weights(net, 9);
  for (auto& blk : net.blocks) {
    blk.b.conv.weights.fill(0.0f);
    blk.c.conv.weights.fill(0.0f);
    set_identity_infer_stats(blk.a);
    set_identity_infer_stats(blk.b);
    set_identity_infer_stats(blk.c);
  }
  std::mt19937 rng(9);
  Tensor<float> x({3, 24, 24});
  oracle::fill_random(x, rng, 0.0, 1.0);
  // signal must reach the head through the whole depth: chain of first convs
  Tensor<float> expect = detail::layer_infer(net.conv1, x);
  expect = detail::layer_infer(net.conv2, expect);
  for (auto& blk : net.blocks) expect = detail::layer_infer(blk.a, expect);
  expect = conv2d_forward(expect, net.head.conv);
  Tensor<float> got = forward_image(net, x);
  REQUIRE(got.same_shape(expect));
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == expect[i]);
}

TEST_CASE("stride-2 block halves an 8x8 input") {
  auto blk = detail::make_block<double>("t", 3, 5, 2);
  std::mt19937 rng(77);
  oracle::fill_random(blk.a.conv.weights, rng);
  oracle::fill_random(blk.b.conv.weights, rng);
  oracle::fill_random(blk.c.conv.weights, rng);
  Tensor<double> x({3, 8, 8});
  oracle::fill_random(x, rng);
  Tensor<double> y = detail::block_infer(blk, x);
  CHECK(y.shape() == std::vector<std::size_t>{5, 4, 4});
}

TEST_CASE("ConvRes block gradients match finite differences (all nine tensors)") {
  auto blk = detail::make_block<double>("t", 2, 3, 2);
  std::mt19937 rng(91);
  oracle::fill_random(blk.a.conv.weights, rng, -0.5, 0.5);
  oracle::fill_random(blk.b.conv.weights, rng, -0.5, 0.5);
  oracle::fill_random(blk.c.conv.weights, rng, -0.5, 0.5);
  for (auto* layer : {&blk.a, &blk.b, &blk.c}) {
    for (auto& v : layer->bn.scale) v = 0.8 + 0.4 * std::uniform_real_distribution<>(0, 1)(rng);
    for (auto& v : layer->bn.shift) v = std::uniform_real_distribution<>(-0.2, 0.2)(rng);
  }

  Tensor<double> x({1, 2, 8, 8});
  oracle::fill_random(x, rng);
  Tensor<double> g;  // objective weights, fixed after first forward

  auto run = [&](ConvResBlock<double>& b) {
    std::array<LayerCache<double>, 3> cache;
    Tensor<double> a = detail::layer_train(b.a, x, cache[0], false);
    Tensor<double> bb = detail::layer_train(b.b, a, cache[1], false);
    Tensor<double> c = detail::layer_train(b.c, bb, cache[2], false);
    return std::make_pair(add_elementwise(c, a), cache);
  };
  auto [out, cache] = run(blk);
  g = Tensor<double>(out.shape());
  oracle::fill_random(g, rng);
  auto objective = [&](ConvResBlock<double>& b) {
    auto [o, _] = run(b);
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += g[i] * o[i];
    return s;
  };

  // analytic gradients
  std::array<LayerGrads<double>, 3> grads;
  auto init_lg = [](LayerGrads<double>& lg, const ConvLayer<double>& layer) {
    lg.w = Tensor<double>::zeros_like(layer.conv.weights);
    lg.b.assign(layer.conv.bias.size(), 0.0);
    lg.bn_scale.assign(layer.out_channels(), 0.0);
    lg.bn_shift.assign(layer.out_channels(), 0.0);
  };
  init_lg(grads[0], blk.a);
  init_lg(grads[1], blk.b);
  init_lg(grads[2], blk.c);
  Tensor<double> gb = detail::layer_backward(blk.c, cache[2], g, grads[2]);
  Tensor<double> ga = detail::layer_backward(blk.b, cache[1], gb, grads[1]);
  ga = add_elementwise(ga, g);
  detail::layer_backward(blk.a, cache[0], ga, grads[0]);

  const double eps = 1e-5;
  auto check_tensor = [&](double* param, const double* analytic, std::size_t n,
                          std::size_t probes) {
    for (std::size_t t = 0; t < probes; ++t) {
      const std::size_t i = rng() % n;
      const double saved = param[i];
      param[i] = saved + eps;
      const double lp = objective(blk);
      param[i] = saved - eps;
      const double lm = objective(blk);
      param[i] = saved;
      CHECK(oracle::rel_err(analytic[i], (lp - lm) / (2 * eps)) < 1e-4);
    }
  };
  ConvLayer<double>* layers[3] = {&blk.a, &blk.b, &blk.c};
  for (int li = 0; li < 3; ++li) {
    check_tensor(layers[li]->conv.weights.data(), grads[li].w.data(),
                 layers[li]->conv.weights.numel(), 8);
    check_tensor(layers[li]->bn.scale.data(), grads[li].bn_scale.data(),
                 layers[li]->bn.scale.size(), 3);
    check_tensor(layers[li]->bn.shift.data(), grads[li].bn_shift.data(),
                 layers[li]->bn.shift.size(), 3);
  }
}

TEST_CASE("weights roundtrip bit-exactly; format errors are distinct") {
  const auto spec = micro_spec();
  auto net = build_network<float>(spec);
  init_weights(net, 111);
  // make running stats non-trivial so they are exercised too
  std::mt19937 rng(112);
  for (auto& v : net.conv1.bn.running_mean) v = std::uniform_real_distribution<float>(-1, 1)(rng);

  const std::string path = temp_path("avdnet_test_weights.bin");
  AnchorSet anchors;
  anchors.anchors = {{0.1, 0.1}, {0.2, 0.3}, {0.3, 0.2}, {0.4, 0.4}};
  save_weights(net, path, &anchors);

  Network<float> back = load_weights(spec, path);
  std::vector<float> va, vb;
  visit_params(net, true, [&](const ParamRef<float>& p) {
    va.insert(va.end(), p.data, p.data + p.size);
  });
  visit_params(back, true, [&](const ParamRef<float>& p) {
    vb.insert(vb.end(), p.data, p.data + p.size);
  });
  CHECK(va == vb);

  LoadedModel model = load_model(path);
  CHECK(model.net.spec == spec);
  REQUIRE(model.anchors.has_value());
  CHECK(model.anchors->k() == 4);
  CHECK(model.anchors->anchors[1].h == doctest::Approx(0.3));

  SUBCASE("wrong magic") {
    const std::string bad = temp_path("avdnet_bad_magic.bin");
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE then some bytes";
    out.close();
    CHECK_THROWS_WITH_AS(load_weights(spec, bad), doctest::Contains("magic"),
                         std::runtime_error);
  }
  SUBCASE("truncated file") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    const std::string trunc = temp_path("avdnet_truncated.bin");
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_WITH_AS(load_weights(spec, trunc), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("dimension mismatch") {
    NetworkSpec other = spec;
    other.widths[0] = 4;
    CHECK_THROWS_WITH_AS(load_weights(other, path), doctest::Contains("dimension"),
                         std::runtime_error);
  }
  SUBCASE("file size formula: 16-byte header + records + 4 bytes per scalar") {
    std::size_t scalars = 0, names = 0, records = 0;
    visit_params(net, true, [&](const ParamRef<float>& p) {
      scalars += p.size;
      names += p.name.size();
      records += 1 + p.dims.size();  // rank word + dim words
      ++records;                     // name length word
    });
    // meta records: input_size, classes, num_anchors, widths, anchors
    const char* meta_names[] = {"meta.input_size", "meta.classes", "meta.num_anchors",
                                "meta.widths", "meta.anchors"};
    const std::size_t meta_dims[] = {1, 1, 1, 1, 2};
    const std::size_t meta_scalars[] = {1, 1, 1, 7, 8};
    for (int i = 0; i < 5; ++i) {
      names += std::string(meta_names[i]).size();
      records += 2 + meta_dims[i];
      scalars += meta_scalars[i];
    }
    const std::size_t expect = 16 + names + 4 * records + 4 * scalars;
    CHECK(std::filesystem::file_size(path) == expect);
  }
}

}  // TEST_SUITE
