#include "avdnet/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace avdnet {

namespace {

struct Candidate {
  Detection det;
  std::size_t image = 0;
};

/// Walks candidates (already in processing order) and labels them against
/// per-image matched flags.
std::vector<DetLabel> label_candidates(const std::vector<Candidate>& cands,
                                       const std::vector<std::vector<GroundTruthBox>>& gts,
                                       std::vector<std::vector<bool>>& matched,
                                       double iou_thresh) {
  std::vector<DetLabel> labels;
  labels.reserve(cands.size());
  for (const auto& c : cands) {
    const auto& truth = gts[c.image];
    auto& used = matched[c.image];
    double best_iou = -1.0;
    std::size_t best = 0;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (used[g]) continue;
      const double v = iou_center(c.det, truth[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    const bool tp = best_iou >= iou_thresh;
    if (tp) used[best] = true;
    labels.push_back({c.det.score, tp});
  }
  return labels;
}

}  // namespace

std::vector<DetLabel> match_detections(const std::vector<Detection>& dets,
                                       const std::vector<GroundTruthBox>& gts,
                                       double iou_thresh) {
  std::vector<Candidate> cands;
  cands.reserve(dets.size());
  for (const auto& d : dets) cands.push_back({d, 0});
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    return a.det.cx < b.det.cx;
  });
  std::vector<std::vector<GroundTruthBox>> gt_sets{gts};
  std::vector<std::vector<bool>> matched{std::vector<bool>(gts.size(), false)};
  return label_candidates(cands, gt_sets, matched, iou_thresh);
}

std::optional<double> average_precision(const std::vector<DetLabel>& labels, std::size_t num_gt) {
  if (num_gt == 0) {
    if (labels.empty()) return std::nullopt;
    std::cerr << "average_precision: detections present but no ground truth; AP = 0\n";
    return 0.0;
  }
  if (labels.empty()) return 0.0;

  const std::size_t n = labels.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i].tp ? ++tp : ++fp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  // interpolated precision: running max from the right
  std::vector<double> interp(n);
  double run = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    run = std::max(run, precision[i]);
    interp[i] = run;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * interp[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_ap(const std::vector<std::optional<double>>& per_class_ap) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& ap : per_class_ap) {
    if (ap) {
      sum += *ap;
      ++defined;
    }
  }
  if (defined == 0) throw std::invalid_argument("mean_ap: no class has a defined AP");
  return sum / static_cast<double>(defined);
}

PRCurve pr_curve(const std::vector<DetLabel>& labels, std::size_t num_gt) {
  if (num_gt == 0 && !labels.empty())
    std::cerr << "pr_curve: detections present but no ground truth\n";
  PRCurve curve;
  std::size_t tp = 0, fp = 0;
  for (const auto& l : labels) {
    l.tp ? ++tp : ++fp;
    const double recall =
        num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    curve.points.push_back({l.score, recall, precision});
  }
  return curve;
}

void save_pr_csv(const PRCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open PR csv for writing: " + path);
  out << "threshold,recall,precision\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.recall, p.precision);
    out << buf;
  }
}

EvalReport evaluate_dataset(const std::vector<ImageEval>& images, int num_classes,
                            double iou_thresh) {
  EvalReport report;
  report.per_class_ap.resize(num_classes);
  report.per_class_pr.resize(num_classes);

  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<Candidate> cands;
    std::vector<std::vector<GroundTruthBox>> gts(images.size());
    std::vector<std::vector<bool>> matched(images.size());
    std::size_t num_gt = 0;
    for (std::size_t img = 0; img < images.size(); ++img) {
      for (const auto& d : images[img].dets)
        if (d.class_id == cls) cands.push_back({d, img});
      for (const auto& g : images[img].gts)
        if (g.class_id == cls) gts[img].push_back(g);
      matched[img].assign(gts[img].size(), false);
      num_gt += gts[img].size();
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.det.score != b.det.score) return a.det.score > b.det.score;
      if (a.image != b.image) return a.image < b.image;
      return a.det.cx < b.det.cx;
    });
    const auto labels = label_candidates(cands, gts, matched, iou_thresh);
    report.per_class_ap[cls] = average_precision(labels, num_gt);
    report.per_class_pr[cls] = pr_curve(labels, num_gt);
  }
  report.map = mean_ap(report.per_class_ap);
  return report;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open eval report for writing: " + path);
  char buf[96];
  for (std::size_t cls = 0; cls < report.per_class_ap.size(); ++cls) {
    if (report.per_class_ap[cls]) {
      std::snprintf(buf, sizeof buf, "class=%zu ap=%.6f\n", cls, *report.per_class_ap[cls]);
      out << buf;
    } else {
      std::snprintf(buf, sizeof buf, "class=%zu ap=skipped\n", cls);
      out << buf;
    }
  }
  std::snprintf(buf, sizeof buf, "map=%.6f\n", report.map);
  out << buf;
}

}  // namespace avdnet
