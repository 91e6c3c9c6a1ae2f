#pragma once

#include <optional>
#include <string>

#include "avdnet/anchors.hpp"
#include "avdnet/network.hpp"

namespace avdnet {

/// Binary little-endian weights file.
///
/// Layout: 16-byte header ("AVDN", u32 version=1, u32 tensor count, u32
/// reserved), then per tensor: u32 name length, name bytes, u32 rank,
/// u32 dims[rank], rank-product float32 values. Layer tensors come first in
/// layer order (conv1, conv2, convres1..5 with .a/.b/.c, head; per layer:
/// .w, .bn.scale, .bn.shift, .bn.mean, .bn.var, or .w/.b for the head),
/// followed by "meta.*" records (input_size, classes, num_anchors, widths,
/// anchors) that make the file self-describing.
void save_weights(const Network<float>& net, const std::string& path,
                  const AnchorSet* anchors = nullptr);

/// Loads into a network built from `spec`; every stored layer tensor must
/// match the expected name and dimensions.
Network<float> load_weights(const NetworkSpec& spec, const std::string& path);

struct LoadedModel {
  Network<float> net;
  std::optional<AnchorSet> anchors;
};

/// Self-describing load: reconstructs the NetworkSpec (and anchors, when
/// present) from the file's meta records.
LoadedModel load_model(const std::string& path);

}  // namespace avdnet
