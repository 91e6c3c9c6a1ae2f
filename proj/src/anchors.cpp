#include "avdnet/anchors.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace avdnet {

namespace {

// same canonical generator as weight init; keeps anchor generation
// platform-stable
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed ? seed : 0x9E3779B97F4A7C15ull) {}
  std::uint64_t next_u64() {
    state ^= state >> 12;
    state ^= state << 25;
    state ^= state >> 27;
    return state * 0x2545F4914F6CDD1Dull;
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }
};

double objective(const std::vector<BoxShape>& boxes, const std::vector<BoxShape>& centroids,
                 std::vector<std::size_t>& assign) {
  double total = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < centroids.size(); ++j) {
      const double d = 1.0 - shape_iou(boxes[i].w, boxes[i].h, centroids[j].w, centroids[j].h);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    assign[i] = best_j;
    total += best;
  }
  return total;
}

}  // namespace

AnchorSet kmeans_anchors(const std::vector<BoxShape>& boxes, std::size_t k, std::uint64_t seed,
                         std::vector<double>* objective_history) {
  if (boxes.size() < k)
    throw std::invalid_argument("kmeans_anchors: need at least " + std::to_string(k) +
                                " boxes, got " + std::to_string(boxes.size()));
  for (const auto& b : boxes)
    if (b.w <= 0 || b.h <= 0) throw std::invalid_argument("kmeans_anchors: non-positive box shape");

  std::set<std::pair<double, double>> distinct;
  for (const auto& b : boxes) distinct.insert({b.w, b.h});
  if (distinct.size() < k)
    throw std::invalid_argument(
        "kmeans_anchors: only " + std::to_string(distinct.size()) +
        " distinct box shapes available for k=" + std::to_string(k) +
        "; lower k or provide more varied boxes");

  // sample k distinct shapes without replacement
  Rng rng(seed);
  std::vector<BoxShape> centroids;
  std::set<std::pair<double, double>> taken;
  std::size_t attempts = 0;
  while (centroids.size() < k && attempts < 10000) {
    ++attempts;
    const BoxShape& cand = boxes[rng.below(boxes.size())];
    if (taken.insert({cand.w, cand.h}).second) centroids.push_back(cand);
  }
  for (std::size_t i = 0; centroids.size() < k && i < boxes.size(); ++i) {
    if (taken.insert({boxes[i].w, boxes[i].h}).second) centroids.push_back(boxes[i]);
  }

  std::vector<std::size_t> assign(boxes.size()), prev_assign;
  double best_obj = objective(boxes, centroids, assign);
  if (objective_history) objective_history->push_back(best_obj);

  for (int round = 0; round < 300; ++round) {
    prev_assign = assign;
    std::vector<BoxShape> next(k, BoxShape{0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      next[assign[i]].w += boxes[i].w;
      next[assign[i]].h += boxes[i].h;
      ++counts[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        next[j] = centroids[j];  // empty cluster keeps its centroid
      } else {
        next[j].w /= static_cast<double>(counts[j]);
        next[j].h /= static_cast<double>(counts[j]);
      }
    }
    std::vector<std::size_t> next_assign(boxes.size());
    const double next_obj = objective(boxes, next, next_assign);
    if (next_obj > best_obj) break;  // keep previous centroids
    centroids = std::move(next);
    assign = std::move(next_assign);
    best_obj = next_obj;
    if (objective_history) objective_history->push_back(best_obj);
    if (assign == prev_assign) break;
  }

  std::sort(centroids.begin(), centroids.end(), [](const BoxShape& a, const BoxShape& b) {
    const double aa = a.w * a.h, ba = b.w * b.h;
    if (aa != ba) return aa < ba;
    return a.w < b.w;
  });
  return AnchorSet{std::move(centroids)};
}

void save_anchors(const AnchorSet& anchors, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open anchor file for writing: " + path);
  char buf[64];
  for (const auto& a : anchors.anchors) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f\n", a.w, a.h);
    out << buf;
  }
}

AnchorSet load_anchors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open anchor file: " + path);
  AnchorSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    BoxShape a;
    if (!(ss >> a.w >> a.h) || a.w <= 0 || a.h <= 0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed anchor line");
    set.anchors.push_back(a);
  }
  if (set.anchors.empty()) throw std::runtime_error("anchor file is empty: " + path);
  return set;
}

}  // namespace avdnet
