#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "avdnet/parallel.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

/// Convolution parameters. Weights are (out_channels, in_channels, h, h).
/// When the conv is followed by batch norm the bias stays identically zero
/// (the shift is folded into the batch-norm parameters).
template <typename T>
struct ConvParams {
  Tensor<T> weights;
  std::vector<T> bias;
  int stride = 1;
  int padding = 0;

  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t in_channels() const { return weights.extent(1); }
  std::size_t kernel() const { return weights.extent(2); }
};

template <typename T>
struct BatchNormParams {
  std::vector<T> scale;
  std::vector<T> shift;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.99);

  std::size_t channels() const { return scale.size(); }

  static BatchNormParams identity(std::size_t d) {
    BatchNormParams bn;
    bn.scale.assign(d, T(1));
    bn.shift.assign(d, T(0));
    bn.running_mean.assign(d, T(0));
    bn.running_var.assign(d, T(1));
    return bn;
  }
};

enum class BnMode { kTrain, kInfer };

/// Per-channel batch statistics saved by a train-mode forward pass.
template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased (divide by N)
};

namespace detail {

template <typename T>
inline void check_conv_args(const Tensor<T>& input, const ConvParams<T>& p) {
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d: expected rank-3 input (c,h,w), got " + input.shape_str());
  const std::size_t h = p.kernel();
  if (p.weights.rank() != 4 || p.weights.extent(2) != p.weights.extent(3))
    throw std::invalid_argument("conv2d: weights must be (d,c,h,h)");
  if (h % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (p.stride != 1 && p.stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2");
  if (p.padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  if (p.bias.size() != p.out_channels())
    throw std::invalid_argument("conv2d: bias length does not match out-channel count");
  if (input.extent(0) != p.in_channels())
    throw std::invalid_argument(
        "conv2d: input has " + std::to_string(input.extent(0)) +
        " channels, kernel expects " + std::to_string(p.in_channels()));
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int pad, int stride) {
  const long long num = static_cast<long long>(in) + 2LL * pad - static_cast<long long>(k);
  if (num < 0) throw std::invalid_argument("conv2d: non-positive output extent");
  return static_cast<std::size_t>(num / stride) + 1;
}

}  // namespace detail

/// Spatial cross-correlation summed over input channels, plus bias.
/// Per output element the taps accumulate in fixed (ic, ky, kx) order, so a
/// stride-2 pass is bit-identical to subsampling the stride-1 pass.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& p) {
  detail::check_conv_args(input, p);
  const std::size_t c = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t d = p.out_channels(), k = p.kernel();
  const int s = p.stride, pad = p.padding;
  const std::size_t Ho = detail::conv_out_extent(H, k, pad, s);
  const std::size_t Wo = detail::conv_out_extent(W, k, pad, s);

  Tensor<T> out({d, Ho, Wo});
  const T* in = input.data();
  const T* wts = p.weights.data();
  T* o = out.data();

  parallel_for(d, [&](std::size_t oc_lo, std::size_t oc_hi) {
    for (std::size_t oc = oc_lo; oc < oc_hi; ++oc) {
      T* oplane = o + oc * Ho * Wo;
      std::fill(oplane, oplane + Ho * Wo, p.bias[oc]);
      for (std::size_t ic = 0; ic < c; ++ic) {
        const T* iplane = in + ic * H * W;
        const T* wbase = wts + (oc * c + ic) * k * k;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          T* orow = oplane + oy * Wo;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long long iy = static_cast<long long>(oy) * s + ky - pad;
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            const T* irow = iplane + iy * W;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long long off = static_cast<long long>(kx) - pad;
              // ox range with 0 <= ox*s + off < W
              long long lo = off < 0 ? (-off + s - 1) / s : 0;
              long long hi = (static_cast<long long>(W) - 1 - off) / s + 1;
              hi = std::min<long long>(hi, Wo);
              const T w = wbase[ky * k + kx];
              if (s == 1) {
                const T* ir = irow + off;
                for (long long ox = lo; ox < hi; ++ox) orow[ox] += w * ir[ox];
              } else {
                for (long long ox = lo; ox < hi; ++ox) orow[ox] += w * irow[ox * s + off];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

/// Exact analytic gradients of conv2d_forward.
template <typename T>
std::tuple<Tensor<T>, Tensor<T>, std::vector<T>> conv2d_backward(
    const Tensor<T>& grad_out, const Tensor<T>& saved_input, const ConvParams<T>& p) {
  detail::check_conv_args(saved_input, p);
  const std::size_t c = saved_input.extent(0), H = saved_input.extent(1), W = saved_input.extent(2);
  const std::size_t d = p.out_channels(), k = p.kernel();
  const int s = p.stride, pad = p.padding;
  const std::size_t Ho = detail::conv_out_extent(H, k, pad, s);
  const std::size_t Wo = detail::conv_out_extent(W, k, pad, s);
  if (grad_out.rank() != 3 || grad_out.extent(0) != d || grad_out.extent(1) != Ho ||
      grad_out.extent(2) != Wo)
    throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                                " does not match forward output");

  Tensor<T> grad_in({c, H, W});
  Tensor<T> grad_w({d, c, k, k});
  std::vector<T> grad_b(d, T(0));

  const T* g = grad_out.data();
  const T* in = saved_input.data();
  const T* wts = p.weights.data();

  // weight and bias gradients, one thread per out-channel range
  parallel_for(d, [&](std::size_t oc_lo, std::size_t oc_hi) {
    for (std::size_t oc = oc_lo; oc < oc_hi; ++oc) {
      const T* gplane = g + oc * Ho * Wo;
      T bsum = T(0);
      for (std::size_t i = 0; i < Ho * Wo; ++i) bsum += gplane[i];
      grad_b[oc] = bsum;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const T* iplane = in + ic * H * W;
        T* gw = grad_w.data() + (oc * c + ic) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long long offx = static_cast<long long>(kx) - pad;
            T acc = T(0);
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const long long iy = static_cast<long long>(oy) * s + ky - pad;
              if (iy < 0 || iy >= static_cast<long long>(H)) continue;
              const T* grow = gplane + oy * Wo;
              const T* irow = iplane + iy * W;
              long long lo = offx < 0 ? (-offx + s - 1) / s : 0;
              long long hi = (static_cast<long long>(W) - 1 - offx) / s + 1;
              hi = std::min<long long>(hi, Wo);
              for (long long ox = lo; ox < hi; ++ox) acc += grow[ox] * irow[ox * s + offx];
            }
            gw[ky * k + kx] = acc;
          }
        }
      }
    }
  });

  // input gradient, one thread per in-channel range
  parallel_for(c, [&](std::size_t ic_lo, std::size_t ic_hi) {
    for (std::size_t ic = ic_lo; ic < ic_hi; ++ic) {
      T* giplane = grad_in.data() + ic * H * W;
      for (std::size_t oc = 0; oc < d; ++oc) {
        const T* gplane = g + oc * Ho * Wo;
        const T* wbase = wts + (oc * c + ic) * k * k;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long long iy = static_cast<long long>(oy) * s + ky - pad;
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            T* girow = giplane + iy * W;
            const T* grow = gplane + oy * Wo;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long long offx = static_cast<long long>(kx) - pad;
              long long lo = offx < 0 ? (-offx + s - 1) / s : 0;
              long long hi = (static_cast<long long>(W) - 1 - offx) / s + 1;
              hi = std::min<long long>(hi, Wo);
              const T w = wbase[ky * k + kx];
              for (long long ox = lo; ox < hi; ++ox) girow[ox * s + offx] += w * grow[ox];
            }
          }
        }
      }
    }
  });

  return {std::move(grad_in), std::move(grad_w), std::move(grad_b)};
}

namespace detail {

template <typename T>
inline std::tuple<std::size_t, std::size_t, std::size_t> bn_dims(const Tensor<T>& x) {
  if (x.rank() == 3) return {std::size_t(1), x.extent(0), x.extent(1) * x.extent(2)};
  if (x.rank() == 4) return {x.extent(0), x.extent(1), x.extent(2) * x.extent(3)};
  throw std::invalid_argument("batchnorm: expected rank-3 or rank-4 input");
}

}  // namespace detail

/// Infer mode normalizes with the running statistics; train mode uses batch
/// statistics over (batch, height, width) and advances the running stats by
/// exponential moving average (running = m*running + (1-m)*batch).
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormParams<T>& bn, BnMode mode,
                            BatchStats<T>* saved = nullptr, bool update_running = true) {
  auto [b, c, hw] = detail::bn_dims(input);
  if (c != bn.channels())
    throw std::invalid_argument("batchnorm: input has " + std::to_string(c) +
                                " channels, params expect " + std::to_string(bn.channels()));
  Tensor<T> out(input.shape());
  const T* in = input.data();
  T* o = out.data();
  const std::size_t plane = c * hw;

  std::vector<T> mean(c), var(c);
  if (mode == BnMode::kInfer) {
    mean = bn.running_mean;
    var = bn.running_var;
  } else {
    const T n = static_cast<T>(b * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum = T(0);
      for (std::size_t ib = 0; ib < b; ++ib) {
        const T* row = in + ib * plane + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += row[i];
      }
      const T m = sum / n;
      T vsum = T(0);
      for (std::size_t ib = 0; ib < b; ++ib) {
        const T* row = in + ib * plane + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T dlt = row[i] - m;
          vsum += dlt * dlt;
        }
      }
      mean[ch] = m;
      var[ch] = vsum / n;
    }
    if (update_running) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        bn.running_mean[ch] = bn.momentum * bn.running_mean[ch] + (T(1) - bn.momentum) * mean[ch];
        bn.running_var[ch] = bn.momentum * bn.running_var[ch] + (T(1) - bn.momentum) * var[ch];
      }
    }
    if (saved) {
      saved->mean = mean;
      saved->var = var;
    }
  }

  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(var[ch] + bn.epsilon);
    const T sc = bn.scale[ch], sh = bn.shift[ch], m = mean[ch];
    for (std::size_t ib = 0; ib < b; ++ib) {
      const T* row = in + ib * plane + ch * hw;
      T* orow = o + ib * plane + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) orow[i] = sc * ((row[i] - m) * inv) + sh;
    }
  }
  return out;
}

/// Gradients of the train-mode batchnorm (batch statistics participate).
template <typename T>
std::tuple<Tensor<T>, std::vector<T>, std::vector<T>> batchnorm_backward(
    const Tensor<T>& grad_out, const Tensor<T>& saved_input, const BatchNormParams<T>& bn,
    const BatchStats<T>& stats) {
  auto [b, c, hw] = detail::bn_dims(saved_input);
  if (!grad_out.same_shape(saved_input))
    throw std::invalid_argument("batchnorm_backward: shape mismatch");
  Tensor<T> grad_in(saved_input.shape());
  std::vector<T> grad_scale(c, T(0)), grad_shift(c, T(0));
  const T* g = grad_out.data();
  const T* in = saved_input.data();
  T* gi = grad_in.data();
  const std::size_t plane = c * hw;
  const T n = static_cast<T>(b * hw);

  for (std::size_t ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(stats.var[ch] + bn.epsilon);
    const T m = stats.mean[ch];
    T gsum = T(0), gxsum = T(0);
    for (std::size_t ib = 0; ib < b; ++ib) {
      const T* grow = g + ib * plane + ch * hw;
      const T* irow = in + ib * plane + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        gsum += grow[i];
        gxsum += grow[i] * (irow[i] - m) * inv;
      }
    }
    grad_shift[ch] = gsum;
    grad_scale[ch] = gxsum;
    const T a = bn.scale[ch] * inv;
    const T gmean = gsum / n;
    const T gxmean = gxsum / n;
    for (std::size_t ib = 0; ib < b; ++ib) {
      const T* grow = g + ib * plane + ch * hw;
      const T* irow = in + ib * plane + ch * hw;
      T* girow = gi + ib * plane + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = (irow[i] - m) * inv;
        girow[i] = a * (grow[i] - gmean - xhat * gxmean);
      }
    }
  }
  return {std::move(grad_in), std::move(grad_scale), std::move(grad_shift)};
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  const T* in = input.data();
  T* o = out.data();
  for (std::size_t i = 0; i < input.numel(); ++i) o[i] = in[i] >= T(0) ? in[i] : slope * in[i];
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input, T slope) {
  if (!grad_out.same_shape(saved_input))
    throw std::invalid_argument("leaky_relu_backward: shape mismatch");
  Tensor<T> out(grad_out.shape());
  const T* g = grad_out.data();
  const T* in = saved_input.data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) o[i] = in[i] >= T(0) ? g[i] : slope * g[i];
  return out;
}

template <typename T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add_elementwise: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace avdnet
