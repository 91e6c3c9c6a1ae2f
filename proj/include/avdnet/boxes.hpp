#pragma once

#include <algorithm>
#include <stdexcept>

namespace avdnet {

/// Decoded detection. Box is (center x, center y, width, height) in image
/// fractions; it may legally overhang the image edges before clipping.
struct Detection {
  int class_id = 0;
  double score = 0.0;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

/// Annotated object, normalized center/size coordinates.
struct GroundTruthBox {
  int class_id = 0;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

/// Intersection over union of two corner-form boxes (x1,y1)-(x2,y2).
inline double iou_corners(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                          double bx2, double by2) {
  if (ax2 <= ax1 || ay2 <= ay1 || bx2 <= bx1 || by2 <= by1)
    throw std::invalid_argument("iou: boxes must have positive width and height");
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return inter / uni;
}

template <typename BoxA, typename BoxB>
double iou_center(const BoxA& a, const BoxB& b) {
  return iou_corners(a.cx - a.w / 2, a.cy - a.h / 2, a.cx + a.w / 2, a.cy + a.h / 2,
                     b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2);
}

/// IoU of two co-centered boxes; depends only on the shapes.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  if (w1 <= 0 || h1 <= 0 || w2 <= 0 || h2 <= 0)
    throw std::invalid_argument("shape_iou: extents must be positive");
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

}  // namespace avdnet
