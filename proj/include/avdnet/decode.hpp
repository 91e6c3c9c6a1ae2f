#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avdnet/anchors.hpp"
#include "avdnet/boxes.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Decodes a raw head tensor (anchors*(5+C)) x S x S into detections.
/// Per cell (i,j) and anchor a: cx=(sig(tx)+j)/S, cy=(sig(ty)+i)/S,
/// w=aw*exp(tw), h=ah*exp(th); score = sig(to) * max softmax(class logits).
/// Detections with score >= conf_thresh are kept.
template <typename T>
std::vector<Detection> decode(const Tensor<T>& raw, const AnchorSet& anchors,
                              double conf_thresh) {
  if (raw.rank() != 3)
    throw std::invalid_argument("decode: expected rank-3 head tensor, got " + raw.shape_str());
  const std::size_t channels = raw.extent(0);
  const std::size_t A = anchors.k();
  if (A == 0 || channels % A != 0 || channels / A < 6)
    throw std::invalid_argument("decode: channel count " + std::to_string(channels) +
                                " does not match " + std::to_string(A) +
                                " anchors x (5 + classes)");
  const std::size_t C = channels / A - 5;
  const std::size_t S = raw.extent(1);
  if (raw.extent(2) != S) throw std::invalid_argument("decode: head grid must be square");

  std::vector<Detection> dets;
  std::vector<double> probs(C);
  for (std::size_t a = 0; a < A; ++a) {
    const std::size_t base = a * (5 + C);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        const double tx = raw.at(base + 0, i, j);
        const double ty = raw.at(base + 1, i, j);
        const double tw = raw.at(base + 2, i, j);
        const double th = raw.at(base + 3, i, j);
        const double to = raw.at(base + 4, i, j);

        double max_logit = raw.at(base + 5, i, j);
        for (std::size_t c = 1; c < C; ++c)
          max_logit = std::max(max_logit, static_cast<double>(raw.at(base + 5 + c, i, j)));
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          probs[c] = std::exp(static_cast<double>(raw.at(base + 5 + c, i, j)) - max_logit);
          denom += probs[c];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (probs[c] > probs[best]) best = c;

        const double obj = sigmoid(to);
        const double score = obj * (probs[best] / denom);
        if (score < conf_thresh) continue;

        Detection d;
        d.class_id = static_cast<int>(best);
        d.score = score;
        d.cx = (sigmoid(tx) + static_cast<double>(j)) / static_cast<double>(S);
        d.cy = (sigmoid(ty) + static_cast<double>(i)) / static_cast<double>(S);
        d.w = anchors[a].w * std::exp(tw);
        d.h = anchors[a].h * std::exp(th);
        dets.push_back(d);
      }
    }
  }
  return dets;
}

/// Greedy per-class non-maximum suppression. Within a class, boxes are
/// visited by descending score (ties: smaller cx, then cy) and kept iff
/// their IoU with every already-kept box of that class is < iou_thresh.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

/// Text format: one detection per line, "class_id score cx cy w h",
/// six decimal places.
void save_detections(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> load_detections(const std::string& path);

}  // namespace avdnet
