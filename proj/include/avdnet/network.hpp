#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "avdnet/ops.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

inline constexpr double kLeakySlope = 0.1;   // darknet default
inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.99;

/// Declarative layer plan: two standalone convs, five ConvRes blocks, and a
/// linear 1x1 head on an S x S grid with S = input_size / 8.
struct NetworkSpec {
  int input_size = 608;
  int num_classes = 4;
  int num_anchors = 4;
  std::array<int, 7> widths = {64, 128, 128, 256, 256, 512, 512};

  int grid() const { return input_size / 8; }
  int head_channels() const { return num_anchors * (5 + num_classes); }

  void validate() const {
    if (input_size < 8 || input_size % 8 != 0)
      throw std::invalid_argument("input_size must be a positive multiple of 8, got " +
                                  std::to_string(input_size));
    if (num_classes < 1)
      throw std::invalid_argument("num_classes must be >= 1, got " + std::to_string(num_classes));
    if (num_anchors < 1)
      throw std::invalid_argument("num_anchors must be >= 1");
    for (int w : widths)
      if (w < 1) throw std::invalid_argument("width ladder entries must be positive");
  }

  bool operator==(const NetworkSpec&) const = default;
};

/// One conv unit: conv (+ optional batch norm) (+ optional leaky ReLU).
template <typename T>
struct ConvLayer {
  std::string name;
  ConvParams<T> conv;
  bool has_bn = true;
  BatchNormParams<T> bn;
  bool activated = true;

  std::size_t out_channels() const { return conv.out_channels(); }
};

/// Three-conv residual unit (3x3, 3x3, 1x1); output = 1x1 response + first
/// 3x3 response. The first conv may downsample with stride 2.
template <typename T>
struct ConvResBlock {
  ConvLayer<T> a;  // 3x3, stride 1 or 2
  ConvLayer<T> b;  // 3x3, stride 1
  ConvLayer<T> c;  // 1x1, stride 1
};

template <typename T>
struct Network {
  NetworkSpec spec;
  ConvLayer<T> conv1;
  ConvLayer<T> conv2;
  std::array<ConvResBlock<T>, 5> blocks;
  ConvLayer<T> head;
};

namespace detail {

template <typename T>
ConvLayer<T> make_layer(std::string name, std::size_t in_c, std::size_t out_c, std::size_t k,
                        int stride, bool with_bn, bool activated) {
  ConvLayer<T> layer;
  layer.name = std::move(name);
  layer.conv.weights = Tensor<T>({out_c, in_c, k, k});
  layer.conv.bias.assign(out_c, T(0));
  layer.conv.stride = stride;
  layer.conv.padding = k == 3 ? 1 : 0;  // preserves the /8 size ladder
  layer.has_bn = with_bn;
  if (with_bn) {
    layer.bn = BatchNormParams<T>::identity(out_c);
    layer.bn.epsilon = T(kBnEpsilon);
    layer.bn.momentum = T(kBnMomentum);
  }
  layer.activated = activated;
  return layer;
}

template <typename T>
ConvResBlock<T> make_block(const std::string& name, std::size_t in_c, std::size_t out_c,
                           int first_stride) {
  ConvResBlock<T> blk;
  blk.a = make_layer<T>(name + ".a", in_c, out_c, 3, first_stride, true, true);
  blk.b = make_layer<T>(name + ".b", out_c, out_c, 3, 1, true, true);
  blk.c = make_layer<T>(name + ".c", out_c, out_c, 1, 1, true, true);
  return blk;
}

}  // namespace detail

/// Materializes the layer plan; all parameters start at zero (convs) and
/// identity (batch norms). Use init_weights for a trainable starting point.
template <typename T>
Network<T> build_network(const NetworkSpec& spec) {
  spec.validate();
  const auto& w = spec.widths;
  Network<T> net;
  net.spec = spec;
  net.conv1 = detail::make_layer<T>("conv1", 3, w[0], 3, 1, true, true);
  net.conv2 = detail::make_layer<T>("conv2", w[0], w[1], 3, 2, true, true);
  net.blocks[0] = detail::make_block<T>("convres1", w[1], w[2], 1);
  net.blocks[1] = detail::make_block<T>("convres2", w[2], w[3], 2);
  net.blocks[2] = detail::make_block<T>("convres3", w[3], w[4], 1);
  net.blocks[3] = detail::make_block<T>("convres4", w[4], w[5], 2);
  net.blocks[4] = detail::make_block<T>("convres5", w[5], w[6], 1);
  net.head = detail::make_layer<T>("head", w[6], spec.head_channels(), 1, 1, false, false);
  return net;
}

// ---------------------------------------------------------------------------
// Parameter traversal

enum class ParamKind { kConvWeight, kBias, kBnScale, kBnShift, kBnMean, kBnVar };

inline bool param_learnable(ParamKind k) {
  return k != ParamKind::kBnMean && k != ParamKind::kBnVar;
}
inline bool param_decayable(ParamKind k) { return k == ParamKind::kConvWeight; }

template <typename T>
struct ParamRef {
  std::string name;
  std::vector<std::size_t> dims;
  T* data;
  std::size_t size;
  ParamKind kind;
};

/// Visits parameters in the canonical (serialization) order: conv1, conv2,
/// convres1..5 (a, b, c each), head. Per conv layer: weights, then either
/// bn scale/shift/mean/var or the bias. Running stats are included only when
/// requested.
template <typename T, typename F>
void visit_params(Network<T>& net, bool include_running_stats, F&& f) {
  auto visit_layer = [&](ConvLayer<T>& layer) {
    const std::size_t d = layer.out_channels();
    f(ParamRef<T>{layer.name + ".w", layer.conv.weights.shape(), layer.conv.weights.data(),
                  layer.conv.weights.numel(), ParamKind::kConvWeight});
    if (layer.has_bn) {
      f(ParamRef<T>{layer.name + ".bn.scale", {d}, layer.bn.scale.data(), d, ParamKind::kBnScale});
      f(ParamRef<T>{layer.name + ".bn.shift", {d}, layer.bn.shift.data(), d, ParamKind::kBnShift});
      if (include_running_stats) {
        f(ParamRef<T>{layer.name + ".bn.mean", {d}, layer.bn.running_mean.data(), d,
                      ParamKind::kBnMean});
        f(ParamRef<T>{layer.name + ".bn.var", {d}, layer.bn.running_var.data(), d,
                      ParamKind::kBnVar});
      }
    } else {
      f(ParamRef<T>{layer.name + ".b", {d}, layer.conv.bias.data(), d, ParamKind::kBias});
    }
  };
  visit_layer(net.conv1);
  visit_layer(net.conv2);
  for (auto& blk : net.blocks) {
    visit_layer(blk.a);
    visit_layer(blk.b);
    visit_layer(blk.c);
  }
  visit_layer(net.head);
}

/// Learnable scalars per conv unit: weights plus bn scale/shift, or bias.
template <typename T>
std::size_t layer_param_count(const ConvLayer<T>& layer) {
  std::size_t n = layer.conv.weights.numel();
  n += layer.has_bn ? 2 * layer.out_channels() : layer.conv.bias.size();
  return n;
}

/// Total learnable scalars (running statistics excluded).
template <typename T>
std::size_t count_params(const Network<T>& net) {
  std::size_t n = 0;
  visit_params(const_cast<Network<T>&>(net), false,
               [&](const ParamRef<T>& p) { n += p.size; });
  return n;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

class UniformRng {
 public:
  explicit UniformRng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ull) {}

  // xorshift64* based canonical double in [0,1); stable across platforms
  double next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    const std::uint64_t x = state_ * 0x2545F4914F6CDD1Dull;
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  }

  double symmetric(double bound) { return (2.0 * next() - 1.0) * bound; }

 private:
  std::uint64_t state_;
};

}  // namespace detail

/// Conv weights uniform in +-sqrt(2 / fan_in); batch norms at identity.
/// Deterministic for a given seed.
template <typename T>
void init_weights(Network<T>& net, std::uint64_t seed) {
  detail::UniformRng rng(seed);
  visit_params(net, true, [&](const ParamRef<T>& p) {
    switch (p.kind) {
      case ParamKind::kConvWeight: {
        // dims = (d, c, h, h); fan_in = c*h*h
        const double fan_in = static_cast<double>(p.dims[1] * p.dims[2] * p.dims[3]);
        const double bound = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < p.size; ++i) p.data[i] = static_cast<T>(rng.symmetric(bound));
        break;
      }
      case ParamKind::kBias:
      case ParamKind::kBnShift:
      case ParamKind::kBnMean:
        for (std::size_t i = 0; i < p.size; ++i) p.data[i] = T(0);
        break;
      case ParamKind::kBnScale:
      case ParamKind::kBnVar:
        for (std::size_t i = 0; i < p.size; ++i) p.data[i] = T(1);
        break;
    }
  });
}

// ---------------------------------------------------------------------------
// Inference

namespace detail {

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNormParams<T>& bn) {
  return batchnorm_forward(x, const_cast<BatchNormParams<T>&>(bn), BnMode::kInfer);
}

template <typename T>
Tensor<T> layer_infer(const ConvLayer<T>& layer, const Tensor<T>& x) {
  Tensor<T> y = conv2d_forward(x, layer.conv);
  if (layer.has_bn) y = batchnorm_infer(y, layer.bn);
  if (layer.activated) y = leaky_relu(y, T(kLeakySlope));
  return y;
}

template <typename T>
Tensor<T> block_infer(const ConvResBlock<T>& blk, const Tensor<T>& x) {
  Tensor<T> a = layer_infer(blk.a, x);
  Tensor<T> b = layer_infer(blk.b, a);
  Tensor<T> c = layer_infer(blk.c, b);
  return add_elementwise(c, a);
}

}  // namespace detail

/// Single-image inference pass (rank-3 input, 3 x input_size x input_size).
template <typename T>
Tensor<T> forward_image(const Network<T>& net, const Tensor<T>& image) {
  if (image.rank() != 3 || image.extent(0) != 3 ||
      image.extent(1) != static_cast<std::size_t>(net.spec.input_size) ||
      image.extent(2) != static_cast<std::size_t>(net.spec.input_size))
    throw std::invalid_argument("forward: expected input 3x" +
                                std::to_string(net.spec.input_size) + "x" +
                                std::to_string(net.spec.input_size) + ", got " +
                                image.shape_str());
  Tensor<T> x = detail::layer_infer(net.conv1, image);
  x = detail::layer_infer(net.conv2, x);
  for (const auto& blk : net.blocks) x = detail::block_infer(blk, x);
  return conv2d_forward(x, net.head.conv);
}

/// Batched inference; per-image results equal independent single-image calls.
template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
  if (batch.rank() != 4)
    throw std::invalid_argument("forward: expected rank-4 batch, got " + batch.shape_str());
  const std::size_t b = batch.extent(0);
  Tensor<T> out;
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> y = forward_image(net, batch.slice_batch(i));
    if (i == 0) out = Tensor<T>({b, y.extent(0), y.extent(1), y.extent(2)});
    std::copy(y.data(), y.data() + y.numel(), out.data() + i * y.numel());
  }
  return out;
}

/// Runs inference only as deep as the named tap ("conv1", "conv2",
/// "convres1".."convres5") and returns that activation map.
template <typename T>
Tensor<T> forward_tap(const Network<T>& net, const Tensor<T>& image, const std::string& layer) {
  Tensor<T> x = detail::layer_infer(net.conv1, image);
  if (layer == "conv1") return x;
  x = detail::layer_infer(net.conv2, x);
  if (layer == "conv2") return x;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    x = detail::block_infer(net.blocks[i], x);
    if (layer == "convres" + std::to_string(i + 1)) return x;
  }
  throw std::invalid_argument("unknown tap layer '" + layer +
                              "' (expected conv1, conv2, or convres1..convres5)");
}

/// Output geometry (channels, S, S) implied by the spec.
inline std::array<std::size_t, 3> output_shape(const NetworkSpec& spec) {
  return {static_cast<std::size_t>(spec.head_channels()), static_cast<std::size_t>(spec.grid()),
          static_cast<std::size_t>(spec.grid())};
}

/// Number of stride-2 stages in the plan (the downsampling factor is 2^n).
template <typename T>
int stride2_count(const Network<T>& net) {
  int n = net.conv1.conv.stride == 2 ? 1 : 0;
  n += net.conv2.conv.stride == 2 ? 1 : 0;
  for (const auto& blk : net.blocks) {
    n += blk.a.conv.stride == 2 ? 1 : 0;
    n += blk.b.conv.stride == 2 ? 1 : 0;
    n += blk.c.conv.stride == 2 ? 1 : 0;
  }
  n += net.head.conv.stride == 2 ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Training-mode forward and backward

template <typename T>
struct LayerCache {
  Tensor<T> input;     // conv input (rank-4)
  Tensor<T> conv_out;  // pre-batch-norm
  Tensor<T> bn_out;    // pre-activation
  BatchStats<T> stats;
};

template <typename T>
struct ForwardCache {
  LayerCache<T> conv1, conv2;
  std::array<std::array<LayerCache<T>, 3>, 5> blocks;
  LayerCache<T> head;
};

/// Per-layer gradient buffers, aligned with the layer's learnable params.
template <typename T>
struct LayerGrads {
  Tensor<T> w;
  std::vector<T> b;
  std::vector<T> bn_scale;
  std::vector<T> bn_shift;
};

template <typename T>
struct NetworkGrads {
  LayerGrads<T> conv1, conv2;
  std::array<std::array<LayerGrads<T>, 3>, 5> blocks;
  LayerGrads<T> head;
};

namespace detail {

template <typename T>
Tensor<T> conv_forward_batch(const Tensor<T>& x, const ConvParams<T>& p) {
  const std::size_t b = x.extent(0);
  Tensor<T> out;
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> y = conv2d_forward(x.slice_batch(i), p);
    if (i == 0) out = Tensor<T>({b, y.extent(0), y.extent(1), y.extent(2)});
    std::copy(y.data(), y.data() + y.numel(), out.data() + i * y.numel());
  }
  return out;
}

/// Accumulates weight/bias grads over the batch; stacks input grads.
template <typename T>
Tensor<T> conv_backward_batch(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                              const ConvParams<T>& p, Tensor<T>& grad_w, std::vector<T>& grad_b) {
  const std::size_t b = saved_input.extent(0);
  Tensor<T> grad_in({b, saved_input.extent(1), saved_input.extent(2), saved_input.extent(3)});
  for (std::size_t i = 0; i < b; ++i) {
    auto [gi, gw, gb] = conv2d_backward(grad_out.slice_batch(i), saved_input.slice_batch(i), p);
    std::copy(gi.data(), gi.data() + gi.numel(), grad_in.data() + i * gi.numel());
    for (std::size_t j = 0; j < gw.numel(); ++j) grad_w[j] += gw[j];
    for (std::size_t j = 0; j < gb.size(); ++j) grad_b[j] += gb[j];
  }
  return grad_in;
}

template <typename T>
Tensor<T> layer_train(ConvLayer<T>& layer, const Tensor<T>& x, LayerCache<T>& cache,
                      bool update_running) {
  cache.input = x;
  cache.conv_out = conv_forward_batch(x, layer.conv);
  Tensor<T> y = cache.conv_out;
  if (layer.has_bn) {
    y = batchnorm_forward(cache.conv_out, layer.bn, BnMode::kTrain, &cache.stats, update_running);
    cache.bn_out = y;
  }
  if (layer.activated) y = leaky_relu(y, T(kLeakySlope));
  return y;
}

template <typename T>
Tensor<T> layer_backward(const ConvLayer<T>& layer, const LayerCache<T>& cache,
                         const Tensor<T>& grad_out, LayerGrads<T>& grads) {
  Tensor<T> g = grad_out;
  if (layer.activated) {
    const Tensor<T>& pre_act = layer.has_bn ? cache.bn_out : cache.conv_out;
    g = leaky_relu_backward(g, pre_act, T(kLeakySlope));
  }
  if (layer.has_bn) {
    auto [gx, gscale, gshift] = batchnorm_backward(g, cache.conv_out, layer.bn, cache.stats);
    g = std::move(gx);
    for (std::size_t i = 0; i < gscale.size(); ++i) {
      grads.bn_scale[i] += gscale[i];
      grads.bn_shift[i] += gshift[i];
    }
  }
  return conv_backward_batch(g, cache.input, layer.conv, grads.w, grads.b);
}

}  // namespace detail

/// Train-mode forward over a batch; fills caches for backward. Set
/// update_running=false for probe evaluations (e.g. finite differences).
template <typename T>
Tensor<T> forward_train(Network<T>& net, const Tensor<T>& batch, ForwardCache<T>& cache,
                        bool update_running = true) {
  if (batch.rank() != 4)
    throw std::invalid_argument("forward_train: expected rank-4 batch");
  Tensor<T> x = detail::layer_train(net.conv1, batch, cache.conv1, update_running);
  x = detail::layer_train(net.conv2, x, cache.conv2, update_running);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    auto& blk = net.blocks[i];
    auto& bc = cache.blocks[i];
    Tensor<T> a = detail::layer_train(blk.a, x, bc[0], update_running);
    Tensor<T> b = detail::layer_train(blk.b, a, bc[1], update_running);
    Tensor<T> c = detail::layer_train(blk.c, b, bc[2], update_running);
    x = add_elementwise(c, a);
  }
  cache.head.input = x;
  return detail::conv_forward_batch(x, net.head.conv);
}

/// Backprop through the whole network; returns parameter gradients.
template <typename T>
NetworkGrads<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_pred) {
  NetworkGrads<T> grads;
  auto init = [](LayerGrads<T>& lg, const ConvLayer<T>& layer) {
    lg.w = Tensor<T>::zeros_like(layer.conv.weights);
    lg.b.assign(layer.conv.bias.size(), T(0));
    if (layer.has_bn) {
      lg.bn_scale.assign(layer.out_channels(), T(0));
      lg.bn_shift.assign(layer.out_channels(), T(0));
    }
  };
  init(grads.conv1, net.conv1);
  init(grads.conv2, net.conv2);
  for (std::size_t i = 0; i < 5; ++i) {
    init(grads.blocks[i][0], net.blocks[i].a);
    init(grads.blocks[i][1], net.blocks[i].b);
    init(grads.blocks[i][2], net.blocks[i].c);
  }
  init(grads.head, net.head);

  Tensor<T> g = detail::conv_backward_batch(grad_pred, cache.head.input, net.head.conv,
                                            grads.head.w, grads.head.b);
  for (std::size_t i = net.blocks.size(); i-- > 0;) {
    const auto& blk = net.blocks[i];
    const auto& bc = cache.blocks[i];
    // out = c + a: gradient flows into layer c and directly into a
    Tensor<T> gb = detail::layer_backward(blk.c, bc[2], g, grads.blocks[i][2]);
    Tensor<T> ga = detail::layer_backward(blk.b, bc[1], gb, grads.blocks[i][1]);
    ga = add_elementwise(ga, g);
    g = detail::layer_backward(blk.a, bc[0], ga, grads.blocks[i][0]);
  }
  g = detail::layer_backward(net.conv2, cache.conv2, g, grads.conv2);
  detail::layer_backward(net.conv1, cache.conv1, g, grads.conv1);
  return grads;
}

/// Visits gradient buffers in the same canonical order as visit_params
/// (learnable params only), so the two streams can be zipped.
template <typename T, typename F>
void visit_grads(NetworkGrads<T>& grads, const Network<T>& net, F&& f) {
  auto visit_layer = [&](LayerGrads<T>& lg, const ConvLayer<T>& layer) {
    f(lg.w.data(), lg.w.numel());
    if (layer.has_bn) {
      f(lg.bn_scale.data(), lg.bn_scale.size());
      f(lg.bn_shift.data(), lg.bn_shift.size());
    } else {
      f(lg.b.data(), lg.b.size());
    }
  };
  visit_layer(grads.conv1, net.conv1);
  visit_layer(grads.conv2, net.conv2);
  for (std::size_t i = 0; i < 5; ++i) {
    visit_layer(grads.blocks[i][0], net.blocks[i].a);
    visit_layer(grads.blocks[i][1], net.blocks[i].b);
    visit_layer(grads.blocks[i][2], net.blocks[i].c);
  }
  visit_layer(grads.head, net.head);
}

}  // namespace avdnet
