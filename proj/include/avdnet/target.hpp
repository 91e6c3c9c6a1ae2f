#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <vector>

#include "avdnet/anchors.hpp"
#include "avdnet/boxes.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

/// Regression targets in the head tensor layout plus per-slot responsibility
/// flags. Per anchor the channels are (tx, ty, tw, th, to, C one-hot).
template <typename T>
struct TargetTensor {
  Tensor<T> values;                // (A*(5+C)) x S x S
  std::vector<std::uint8_t> resp;  // A x S x S, index (a*S + i)*S + j
  std::size_t num_anchors = 0;
  std::size_t num_classes = 0;
  std::size_t grid = 0;

  bool responsible(std::size_t a, std::size_t i, std::size_t j) const {
    return resp[(a * grid + i) * grid + j] != 0;
  }
};

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// cell-relative offsets clamped away from the sigmoid asymptotes; the
// induced center error is < 1e-7 / S, far inside the 1e-6 round-trip budget
inline constexpr double kOffsetClamp = 1e-7;

}  // namespace detail

/// Inverse of the decoder transform for a box assigned to (cell i,j, anchor a).
struct EncodedBox {
  double tx, ty, tw, th;
};

inline EncodedBox encode_box(const GroundTruthBox& gt, const BoxShape& anchor, std::size_t S,
                             std::size_t i, std::size_t j) {
  double dx = gt.cx * static_cast<double>(S) - static_cast<double>(j);
  double dy = gt.cy * static_cast<double>(S) - static_cast<double>(i);
  dx = std::min(1.0 - detail::kOffsetClamp, std::max(detail::kOffsetClamp, dx));
  dy = std::min(1.0 - detail::kOffsetClamp, std::max(detail::kOffsetClamp, dy));
  return {detail::logit(dx), detail::logit(dy), std::log(gt.w / anchor.w),
          std::log(gt.h / anchor.h)};
}

/// Assigns each ground truth to the cell containing its center and the
/// anchor with the best shape IoU. When two boxes claim the same (cell,
/// anchor) slot the larger area wins and the loser falls back to its
/// next-best anchor; with no anchor left it is dropped with a warning.
template <typename T>
TargetTensor<T> assign_targets(const std::vector<GroundTruthBox>& gts, const AnchorSet& anchors,
                               std::size_t S, std::size_t C) {
  const std::size_t A = anchors.k();
  TargetTensor<T> target;
  target.values = Tensor<T>({A * (5 + C), S, S});
  target.resp.assign(A * S * S, 0);
  target.num_anchors = A;
  target.num_classes = C;
  target.grid = S;

  for (const auto& gt : gts) {
    auto bad = [&](const char* field) {
      throw std::invalid_argument(std::string("assign_targets: ground truth ") + field +
                                  " out of range");
    };
    if (gt.cx < 0.0 || gt.cx > 1.0) bad("cx");
    if (gt.cy < 0.0 || gt.cy > 1.0) bad("cy");
    if (gt.w <= 0.0 || gt.w > 1.0) bad("w");
    if (gt.h <= 0.0 || gt.h > 1.0) bad("h");
    if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= C)
      throw std::invalid_argument("assign_targets: class id " + std::to_string(gt.class_id) +
                                  " outside [0," + std::to_string(C) + ")");
  }

  // larger boxes claim slots first; ties keep input order
  std::vector<std::size_t> order(gts.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return gts[a].w * gts[a].h > gts[b].w * gts[b].h;
  });

  for (std::size_t idx : order) {
    const GroundTruthBox& gt = gts[idx];
    const std::size_t j = std::min(S - 1, static_cast<std::size_t>(gt.cx * static_cast<double>(S)));
    const std::size_t i = std::min(S - 1, static_cast<std::size_t>(gt.cy * static_cast<double>(S)));

    // anchors by descending shape IoU, ties toward the smaller index
    std::vector<std::size_t> pref(A);
    std::iota(pref.begin(), pref.end(), std::size_t(0));
    std::stable_sort(pref.begin(), pref.end(), [&](std::size_t a, std::size_t b) {
      return shape_iou(gt.w, gt.h, anchors[a].w, anchors[a].h) >
             shape_iou(gt.w, gt.h, anchors[b].w, anchors[b].h);
    });

    bool placed = false;
    for (std::size_t a : pref) {
      std::uint8_t& flag = target.resp[(a * S + i) * S + j];
      if (flag) continue;
      flag = 1;
      const std::size_t base = a * (5 + C);
      const EncodedBox e = encode_box(gt, anchors[a], S, i, j);
      target.values.at(base + 0, i, j) = static_cast<T>(e.tx);
      target.values.at(base + 1, i, j) = static_cast<T>(e.ty);
      target.values.at(base + 2, i, j) = static_cast<T>(e.tw);
      target.values.at(base + 3, i, j) = static_cast<T>(e.th);
      target.values.at(base + 4, i, j) = T(1);
      target.values.at(base + 5 + static_cast<std::size_t>(gt.class_id), i, j) = T(1);
      placed = true;
      break;
    }
    if (!placed)
      std::cerr << "assign_targets: dropping ground truth at (" << gt.cx << "," << gt.cy
                << "): all anchor slots of its cell are taken\n";
  }
  return target;
}

}  // namespace avdnet
