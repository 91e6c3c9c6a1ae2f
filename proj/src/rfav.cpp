#include "avdnet/rfav.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avdnet {

QuantizedStack quantize_maps(const Tensor<float>& features, std::string source_layer) {
  if (features.rank() != 3)
    throw std::invalid_argument("quantize_maps: expected rank-3 stack (d,h,w), got " +
                                features.shape_str());
  QuantizedStack stack;
  stack.depth = features.extent(0);
  stack.height = features.extent(1);
  stack.width = features.extent(2);
  stack.source_layer = std::move(source_layer);
  stack.values.resize(features.numel());

  float lo = features[0], hi = features[0];
  for (std::size_t i = 0; i < features.numel(); ++i) {
    const float v = features[i];
    if (std::isnan(v)) throw std::invalid_argument("quantize_maps: NaN in feature stack");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    std::fill(stack.values.begin(), stack.values.end(), std::uint8_t(0));
    return stack;
  }
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  for (std::size_t i = 0; i < features.numel(); ++i) {
    const double q = 255.0 * (static_cast<double>(features[i]) - lo) / span;
    const long b = std::lround(q);
    stack.values[i] = static_cast<std::uint8_t>(std::clamp(b, 0L, 255L));
  }
  return stack;
}

RFAVImage rfav(const QuantizedStack& stack) {
  if (stack.depth < 1) throw std::invalid_argument("rfav: stack depth must be >= 1");
  RFAVImage image;
  image.height = stack.height;
  image.width = stack.width;
  image.pixels.resize(stack.height * stack.width);

  std::vector<std::uint32_t> counts(256);
  const std::size_t plane = stack.height * stack.width;
  for (std::size_t p = 0; p < plane; ++p) {
    std::fill(counts.begin(), counts.end(), std::uint32_t(0));
    std::uint32_t best_count = 0;
    std::uint8_t best_bin = 0;
    for (std::size_t k = 0; k < stack.depth; ++k) {
      const std::uint8_t z = stack.values[k * plane + p];
      const std::uint32_t c = ++counts[z];
      if (c > best_count || (c == best_count && z < best_bin)) {
        best_count = c;
        best_bin = z;
      }
    }
    image.pixels[p] = best_bin;
  }
  return image;
}

}  // namespace avdnet
