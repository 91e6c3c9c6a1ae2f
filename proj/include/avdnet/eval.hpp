#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avdnet/boxes.hpp"

namespace avdnet {

/// One detection's outcome, in descending-score processing order.
struct DetLabel {
  double score = 0.0;
  bool tp = false;
};

/// Greedy one-to-one matching for a single image and class: detections are
/// processed by descending score (ties: smaller cx) and a detection is a
/// true positive iff its best-IoU unmatched ground truth reaches iou_thresh.
std::vector<DetLabel> match_detections(const std::vector<Detection>& dets,
                                       const std::vector<GroundTruthBox>& gts,
                                       double iou_thresh = 0.5);

/// All-point interpolated average precision over a score-ordered TP/FP
/// sequence. num_gt = 0 with no detections is undefined (nullopt, reported
/// as skipped); num_gt = 0 with detections yields 0 with a warning.
std::optional<double> average_precision(const std::vector<DetLabel>& labels, std::size_t num_gt);

/// Arithmetic mean over classes with a defined AP; throws when none is.
double mean_ap(const std::vector<std::optional<double>>& per_class_ap);

struct PRPoint {
  double threshold;
  double recall;
  double precision;
};

/// Cumulative precision/recall staircase (before interpolation).
struct PRCurve {
  std::vector<PRPoint> points;
};

PRCurve pr_curve(const std::vector<DetLabel>& labels, std::size_t num_gt);

/// CSV "threshold,recall,precision".
void save_pr_csv(const PRCurve& curve, const std::string& path);

/// Per-image inputs for a dataset-level evaluation.
struct ImageEval {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};

struct EvalReport {
  std::vector<std::optional<double>> per_class_ap;
  std::vector<PRCurve> per_class_pr;
  double map = 0.0;
};

/// Matches detections to truths per class across the whole set (global
/// descending-score order; ties broken by smaller image index, then smaller
/// cx) and aggregates AP per class and their mean.
EvalReport evaluate_dataset(const std::vector<ImageEval>& images, int num_classes,
                            double iou_thresh = 0.5);

/// Text report: per-class lines "class=<id> ap=<float>", then "map=<float>".
void save_eval_report(const EvalReport& report, const std::string& path);

}  // namespace avdnet
