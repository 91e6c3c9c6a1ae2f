#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avdnet/tensor.hpp"

namespace avdnet {

/// A layer's d feature maps quantized to [0,255] with one global min/max.
struct QuantizedStack {
  std::size_t depth = 0, height = 0, width = 0;
  std::vector<std::uint8_t> values;  // d x H x W, row-major
  std::string source_layer;

  std::uint8_t at(std::size_t k, std::size_t y, std::size_t x) const {
    return values[(k * height + y) * width + x];
  }
};

/// Per-pixel modal quantized intensity across the stack's depth.
struct RFAVImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// q = round(255 * (x - min) / (max - min)) with the min/max taken over the
/// whole stack; a constant stack maps to all zeros. NaN input is an error.
QuantizedStack quantize_maps(const Tensor<float>& features, std::string source_layer = "");

/// Per pixel (a,b): histogram the d quantized intensities and return the
/// bin index with the maximum count, ties broken toward the smallest bin.
RFAVImage rfav(const QuantizedStack& stack);

}  // namespace avdnet
