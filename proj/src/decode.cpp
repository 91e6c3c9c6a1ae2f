#include "avdnet/decode.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace avdnet {

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0))
    throw std::invalid_argument("nms: iou_thresh must be in (0, 1]");

  std::map<int, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.class_id].push_back(d);

  std::vector<Detection> kept;
  for (auto& [cls, group] : by_class) {
    std::stable_sort(group.begin(), group.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.cx != b.cx) return a.cx < b.cx;
      return a.cy < b.cy;
    });
    std::vector<Detection> survivors;
    for (const auto& d : group) {
      bool suppressed = false;
      for (const auto& s : survivors) {
        if (iou_center(d, s) >= iou_thresh) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) survivors.push_back(d);
    }
    kept.insert(kept.end(), survivors.begin(), survivors.end());
  }
  return kept;
}

void save_detections(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open detections file for writing: " + path);
  char buf[160];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f %.6f\n", d.class_id, d.score, d.cx,
                  d.cy, d.w, d.h);
    out << buf;
  }
}

std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file: " + path);
  std::vector<Detection> dets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Detection d;
    if (!(ss >> d.class_id >> d.score >> d.cx >> d.cy >> d.w >> d.h))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed detection line");
    dets.push_back(d);
  }
  return dets;
}

}  // namespace avdnet
