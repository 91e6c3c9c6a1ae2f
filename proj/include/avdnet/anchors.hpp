#pragma once

#include <string>
#include <vector>

#include "avdnet/boxes.hpp"

namespace avdnet {

struct BoxShape {
  double w = 0.0, h = 0.0;
};

/// k prior box shapes as image fractions, sorted by area ascending.
struct AnchorSet {
  std::vector<BoxShape> anchors;

  std::size_t k() const { return anchors.size(); }
  const BoxShape& operator[](std::size_t i) const { return anchors[i]; }
};

/// k-means over box shapes with distance 1 - shape_iou and coordinate-mean
/// centroid updates. Initial centroids are k distinct shapes sampled without
/// replacement; iteration stops at an assignment fixed point, after 300
/// rounds, or when a round fails to lower the summed distance (the previous
/// centroids are then kept, so the objective never increases).
/// objective_history, when given, receives the objective after every
/// retained round.
AnchorSet kmeans_anchors(const std::vector<BoxShape>& boxes, std::size_t k, std::uint64_t seed,
                         std::vector<double>* objective_history = nullptr);

/// Text format: one "w h" pair per line, six decimals.
void save_anchors(const AnchorSet& anchors, const std::string& path);
AnchorSet load_anchors(const std::string& path);

}  // namespace avdnet
