#include "avdnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace avdnet {

// --- annotations -----------------------------------------------------------

std::vector<GroundTruthBox> parse_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file: " + path);
  std::vector<GroundTruthBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    GroundTruthBox b;
    std::string extra;
    if (!(ss >> b.class_id >> b.cx >> b.cy >> b.w >> b.h) || (ss >> extra && !extra.empty()))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed annotation line (need 'class_id cx cy w h')");
    auto range_error = [&](const char* field) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": field " + field +
                               " out of range");
    };
    if (b.class_id < 0) range_error("class_id");
    if (b.cx < 0.0 || b.cx > 1.0) range_error("cx");
    if (b.cy < 0.0 || b.cy > 1.0) range_error("cy");
    if (b.w <= 0.0 || b.w > 1.0) range_error("w");
    if (b.h <= 0.0 || b.h > 1.0) range_error("h");
    boxes.push_back(b);
  }
  return boxes;
}

void save_annotations(const std::vector<GroundTruthBox>& boxes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open annotation file for writing: " + path);
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy, b.w, b.h);
    out << buf;
  }
}

// --- PPM / PGM -------------------------------------------------------------

namespace {

// next PNM header token, skipping whitespace and '#' comments
std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw std::runtime_error("truncated PNM header: " + path);
  return tok;
}

}  // namespace

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path);
  const std::string magic = pnm_token(in, path);
  if (magic != "P6") {
    if (magic == "P3" || magic == "P2" || magic == "P5" || magic == "P1" || magic == "P4")
      throw std::runtime_error("unsupported PNM format " + magic + " (need binary P6): " + path);
    throw std::runtime_error("not a PPM file (bad magic): " + path);
  }
  const std::size_t w = std::stoul(pnm_token(in, path));
  const std::size_t h = std::stoul(pnm_token(in, path));
  const std::size_t maxval = std::stoul(pnm_token(in, path));
  if (w == 0 || h == 0) throw std::runtime_error("PPM with zero extent: " + path);
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval (need 255): " + path);

  std::vector<std::uint8_t> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw std::runtime_error("truncated PPM payload: " + path);

  Tensor<float> image({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        image.at(ch, y, x) = static_cast<float>(raw[(y * w + x) * 3 + ch]) / 255.0f;
  return image;
}

void save_ppm(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw std::invalid_argument("save_ppm: expected 3xHxW tensor, got " + image.shape_str());
  const std::size_t h = image.extent(1), w = image.extent(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open image file for writing: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> raw(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(ch, y, x), 0.0f, 1.0f);
        raw[(y * w + x) * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("failed writing PPM: " + path);
}

void save_pgm(const GrayImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open image file for writing: " + path);
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing PGM: " + path);
}

GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path);
  const std::string magic = pnm_token(in, path);
  if (magic != "P5") throw std::runtime_error("not a binary PGM file: " + path);
  GrayImage img;
  img.width = std::stoul(pnm_token(in, path));
  img.height = std::stoul(pnm_token(in, path));
  const std::size_t maxval = std::stoul(pnm_token(in, path));
  if (maxval != 255) throw std::runtime_error("unsupported PGM maxval (need 255): " + path);
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
    throw std::runtime_error("truncated PGM payload: " + path);
  return img;
}

// --- letterboxing ----------------------------------------------------------

GroundTruthBox LetterboxTransform::to_network(const GroundTruthBox& b) const {
  GroundTruthBox out = b;
  out.cx = (b.cx * static_cast<double>(src_w) * scale + pad_x) / target;
  out.cy = (b.cy * static_cast<double>(src_h) * scale + pad_y) / target;
  out.w = b.w * static_cast<double>(src_w) * scale / target;
  out.h = b.h * static_cast<double>(src_h) * scale / target;
  return out;
}

Detection LetterboxTransform::to_source(const Detection& d) const {
  Detection out = d;
  out.cx = (d.cx * target - pad_x) / scale / static_cast<double>(src_w);
  out.cy = (d.cy * target - pad_y) / scale / static_cast<double>(src_h);
  out.w = d.w * target / scale / static_cast<double>(src_w);
  out.h = d.h * target / scale / static_cast<double>(src_h);
  return out;
}

std::pair<Tensor<float>, LetterboxTransform> letterbox(const Tensor<float>& image, int target) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw std::invalid_argument("letterbox: expected 3xHxW tensor");
  if (target < 8) throw std::invalid_argument("letterbox: target must be >= 8");
  const std::size_t src_h = image.extent(1), src_w = image.extent(2);

  LetterboxTransform t;
  t.src_w = src_w;
  t.src_h = src_h;
  t.target = target;
  t.scale = static_cast<double>(target) / static_cast<double>(std::max(src_w, src_h));
  const std::size_t new_w =
      std::min<std::size_t>(target, static_cast<std::size_t>(std::lround(src_w * t.scale)));
  const std::size_t new_h =
      std::min<std::size_t>(target, static_cast<std::size_t>(std::lround(src_h * t.scale)));
  t.pad_x = (target - static_cast<int>(new_w)) / 2;
  t.pad_y = (target - static_cast<int>(new_h)) / 2;

  Tensor<float> out({3, static_cast<std::size_t>(target), static_cast<std::size_t>(target)});
  out.fill(0.5f);
  const double inv = 1.0 / t.scale;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < new_h; ++y) {
      const double sy = std::clamp((y + 0.5) * inv - 0.5, 0.0, static_cast<double>(src_h - 1));
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, src_h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < new_w; ++x) {
        const double sx = std::clamp((x + 0.5) * inv - 0.5, 0.0, static_cast<double>(src_w - 1));
        const std::size_t x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, src_w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = image.at(ch, y0, x0) * (1.0 - fx) + image.at(ch, y0, x1) * fx;
        const double bot = image.at(ch, y1, x0) * (1.0 - fx) + image.at(ch, y1, x1) * fx;
        out.at(ch, y + t.pad_y, x + t.pad_x) = static_cast<float>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return {std::move(out), t};
}

// --- synthetic scenes ------------------------------------------------------

void SynthConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("synth: image_size must be >= 16");
  if (min_objects < 0 || max_objects < min_objects)
    throw std::invalid_argument("synth: object count range invalid");
  if (min_size_px < 4 || max_size_px < min_size_px)
    throw std::invalid_argument("synth: size range invalid (need 4 <= min <= max)");
  if (max_size_px >= image_size)
    throw std::invalid_argument("synth: objects must be smaller than the image");
  if (num_classes < 1) throw std::invalid_argument("synth: num_classes must be >= 1");
  if (clutter < 0.0 || clutter > 1.0) throw std::invalid_argument("synth: clutter not in [0,1]");
}

namespace {

struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed ? seed : 0x9E3779B97F4A7C15ull) {}
  std::uint64_t next_u64() {
    state ^= state >> 12;
    state ^= state << 25;
    state ^= state >> 27;
    return state * 0x2545F4914F6CDD1Dull;
  }
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int irange(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

struct Rgb {
  double r, g, b;
};

// per-class body palette; classes beyond the table cycle
constexpr Rgb kPalette[] = {
    {0.78, 0.20, 0.16},  // red
    {0.18, 0.28, 0.72},  // blue
    {0.88, 0.88, 0.86},  // white
    {0.82, 0.74, 0.18},  // yellow
    {0.16, 0.58, 0.52},  // teal
    {0.38, 0.38, 0.40},  // gray
};

void fill_px(Tensor<float>& img, int x, int y, const Rgb& c) {
  img.at(0, y, x) = static_cast<float>(c.r);
  img.at(1, y, x) = static_cast<float>(c.g);
  img.at(2, y, x) = static_cast<float>(c.b);
}

void scale_px(Tensor<float>& img, int x, int y, double f) {
  for (std::size_t ch = 0; ch < 3; ++ch)
    img.at(ch, y, x) = static_cast<float>(img.at(ch, y, x) * f);
}

}  // namespace

std::pair<Tensor<float>, std::vector<GroundTruthBox>> synth_scene(const SynthConfig& cfg,
                                                                  std::uint64_t index) {
  cfg.validate();
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull ^ (index + 1) * 0xBF58476D1CE4E5B9ull);
  for (int i = 0; i < 4; ++i) rng.next_u64();

  const int N = cfg.image_size;
  Tensor<float> img({3, static_cast<std::size_t>(N), static_cast<std::size_t>(N)});

  // earthy base tone with coarse value noise
  const Rgb base{rng.range(0.30, 0.42), rng.range(0.34, 0.46), rng.range(0.26, 0.38)};
  const int cell = rng.irange(8, 16);
  const int gw = N / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gw);
  for (auto& g : grid) g = rng.range(-1.0, 1.0);
  const double coarse_amp = 0.05 + 0.05 * cfg.clutter;
  for (int y = 0; y < N; ++y) {
    const double gy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < N; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double n00 = grid[y0 * gw + x0], n01 = grid[y0 * gw + x0 + 1];
      const double n10 = grid[(y0 + 1) * gw + x0], n11 = grid[(y0 + 1) * gw + x0 + 1];
      const double n = (n00 * (1 - fx) + n01 * fx) * (1 - fy) + (n10 * (1 - fx) + n11 * fx) * fy;
      const double v = n * coarse_amp;
      img.at(0, y, x) = static_cast<float>(base.r + v);
      img.at(1, y, x) = static_cast<float>(base.g + v);
      img.at(2, y, x) = static_cast<float>(base.b + v);
    }
  }

  // road strips with a faint dashed center line
  const int roads = rng.irange(0, 2);
  for (int r = 0; r < roads; ++r) {
    const bool horizontal = rng.unit() < 0.5;
    const int width = std::min(rng.irange(12, 22), std::max(4, N / 4));
    const int pos = rng.irange(0, N - width - 1);
    const double shade = rng.range(0.22, 0.30);
    for (int a = 0; a < N; ++a) {
      for (int b = 0; b < width; ++b) {
        const int x = horizontal ? a : pos + b;
        const int y = horizontal ? pos + b : a;
        fill_px(img, x, y, {shade, shade, shade + 0.01});
      }
      if (a % 9 < 4) {  // dashes
        const int mid = pos + width / 2;
        const int x = horizontal ? a : mid;
        const int y = horizontal ? mid : a;
        fill_px(img, x, y, {0.75, 0.75, 0.70});
      }
    }
  }

  // vehicles
  std::vector<GroundTruthBox> boxes;
  const int want = cfg.min_objects == cfg.max_objects
                       ? cfg.min_objects
                       : rng.irange(cfg.min_objects, cfg.max_objects);
  for (int obj = 0; obj < want; ++obj) {
    const int cls = rng.irange(0, cfg.num_classes - 1);
    const double aspect = 1.6 + 0.45 * static_cast<double>(cls % 4);
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      const int long_side = rng.irange(cfg.min_size_px, cfg.max_size_px);
      int short_side = std::max(3, static_cast<int>(std::lround(long_side / aspect)));
      int bw = long_side, bh = short_side;
      if (rng.unit() < 0.5) std::swap(bw, bh);
      if (bw >= N - 2 || bh >= N - 2) continue;
      const int x0 = rng.irange(1, N - bw - 1);
      const int y0 = rng.irange(1, N - bh - 1);

      GroundTruthBox cand;
      cand.class_id = cls;
      cand.cx = (x0 + bw / 2.0) / N;
      cand.cy = (y0 + bh / 2.0) / N;
      cand.w = static_cast<double>(bw) / N;
      cand.h = static_cast<double>(bh) / N;
      bool overlaps = false;
      for (const auto& other : boxes)
        if (iou_center(cand, other) > 0.25) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;

      // shadow cast next to the vehicle
      if (rng.unit() < 0.5 * cfg.clutter) {
        const int sx = x0 + rng.irange(-3, 3), sy = y0 + rng.irange(2, 5);
        for (int y = std::max(0, sy); y < std::min(N, sy + bh); ++y)
          for (int x = std::max(0, sx); x < std::min(N, sx + bw); ++x) scale_px(img, x, y, 0.72);
      }

      const Rgb body0 = kPalette[cls % 6];
      const double jitter = rng.range(0.88, 1.08);
      const Rgb body{std::min(1.0, body0.r * jitter), std::min(1.0, body0.g * jitter),
                     std::min(1.0, body0.b * jitter)};
      const Rgb dark{body.r * 0.45, body.g * 0.45, body.b * 0.45};
      const bool ellipse = cls % 2 == 1;
      const double ecx = x0 + (bw - 1) / 2.0, ecy = y0 + (bh - 1) / 2.0;
      const double erx = bw / 2.0, ery = bh / 2.0;
      for (int y = y0; y < y0 + bh; ++y) {
        for (int x = x0; x < x0 + bw; ++x) {
          if (ellipse) {
            const double dx = (x - ecx) / erx, dy = (y - ecy) / ery;
            if (dx * dx + dy * dy > 1.0) continue;
          }
          const bool border = x == x0 || x == x0 + bw - 1 || y == y0 || y == y0 + bh - 1;
          fill_px(img, x, y, border ? dark : body);
        }
      }
      // windshield patch toward one end of the long axis
      {
        const bool along_x = bw >= bh;
        const int len = std::max(2, (along_x ? bw : bh) / 5);
        const int gx0 = along_x ? x0 + bw - len - 1 : x0 + 1;
        const int gy0 = along_x ? y0 + 1 : y0 + bh - len - 1;
        const int gx1 = along_x ? gx0 + len : x0 + bw - 1;
        const int gy1 = along_x ? y0 + bh - 1 : gy0 + len;
        for (int y = std::max(y0, gy0); y < std::min(y0 + bh, gy1); ++y)
          for (int x = std::max(x0, gx0); x < std::min(x0 + bw, gx1); ++x)
            fill_px(img, x, y, {0.12, 0.14, 0.18});
      }
      // partial occluder (tree/roof edge) over at most ~30% of the box
      if (rng.unit() < 0.3 * cfg.clutter) {
        const int ow = std::max(2, bw / 3), oh = std::max(2, bh / 3);
        const int ox = rng.unit() < 0.5 ? x0 - ow / 2 : x0 + bw - ow / 2;
        const int oy = rng.irange(y0, y0 + bh - oh);
        const Rgb fol{0.16, rng.range(0.30, 0.42), 0.14};
        for (int y = std::max(0, oy); y < std::min(N, oy + oh); ++y)
          for (int x = std::max(0, ox); x < std::min(N, ox + ow); ++x) fill_px(img, x, y, fol);
      }
      boxes.push_back(cand);
      placed = true;
    }
  }

  // fine per-pixel noise and clamp
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double n = rng.range(-0.015, 0.015);
    img[i] = static_cast<float>(std::clamp(static_cast<double>(img[i]) + n, 0.0, 1.0));
  }
  return {std::move(img), std::move(boxes)};
}

// --- manifests -------------------------------------------------------------

std::vector<std::string> load_class_names(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open class table: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    names.push_back(line);
  }
  while (!names.empty() && names.back().empty()) names.pop_back();
  return names;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  const fs::path dir = fs::path(path).parent_path();

  DatasetManifest m;
  std::string line;
  std::vector<std::string> missing;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);

    fs::path img = line;
    if (img.is_relative()) img = dir / img;
    fs::path ann = img;
    ann.replace_extension(".txt");
    if (!fs::exists(img)) missing.push_back(img.string());
    if (!fs::exists(ann)) missing.push_back(ann.string());
    m.image_paths.push_back(img.string());
    m.annotation_paths.push_back(ann.string());
  }
  if (!missing.empty()) {
    std::string msg = "manifest " + path + " references missing files:";
    for (const auto& f : missing) msg += "\n  " + f;
    throw std::runtime_error(msg);
  }
  if (m.image_paths.empty())
    throw std::runtime_error("manifest " + path + " lists no images (need at least 1)");

  const fs::path classes = dir / "classes.txt";
  if (fs::exists(classes)) m.class_names = load_class_names(classes.string());
  return m;
}

std::vector<LoadedSample> load_dataset(const DatasetManifest& manifest) {
  std::vector<LoadedSample> samples;
  samples.reserve(manifest.image_paths.size());
  for (std::size_t i = 0; i < manifest.image_paths.size(); ++i) {
    LoadedSample s;
    s.image_path = manifest.image_paths[i];
    s.image = load_ppm(manifest.image_paths[i]);
    s.boxes = parse_annotations(manifest.annotation_paths[i]);
    if (!manifest.class_names.empty()) {
      for (const auto& b : s.boxes)
        if (static_cast<std::size_t>(b.class_id) >= manifest.class_names.size())
          throw std::runtime_error(manifest.annotation_paths[i] + ": class id " +
                                   std::to_string(b.class_id) + " outside the class table (" +
                                   std::to_string(manifest.class_names.size()) + " entries)");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// --- rendering -------------------------------------------------------------

void draw_boxes(Tensor<float>& image, const std::vector<Detection>& dets) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw std::invalid_argument("draw_boxes: expected 3xHxW image");
  const int H = static_cast<int>(image.extent(1));
  const int W = static_cast<int>(image.extent(2));
  for (const auto& d : dets) {
    const Rgb c = kPalette[(d.class_id + 3) % 6];  // offset so class 0 is not background-ish
    int x0 = static_cast<int>(std::lround((d.cx - d.w / 2) * W));
    int x1 = static_cast<int>(std::lround((d.cx + d.w / 2) * W)) - 1;
    int y0 = static_cast<int>(std::lround((d.cy - d.h / 2) * H));
    int y1 = static_cast<int>(std::lround((d.cy + d.h / 2) * H)) - 1;
    x0 = std::clamp(x0, 0, W - 1);
    x1 = std::clamp(x1, 0, W - 1);
    y0 = std::clamp(y0, 0, H - 1);
    y1 = std::clamp(y1, 0, H - 1);
    for (int t = 0; t < 2; ++t) {  // 2-px outline
      const int xa = std::min(x0 + t, W - 1), xb = std::max(x1 - t, 0);
      const int ya = std::min(y0 + t, H - 1), yb = std::max(y1 - t, 0);
      for (int x = xa; x <= xb; ++x) {
        fill_px(image, x, ya, c);
        fill_px(image, x, yb, c);
      }
      for (int y = ya; y <= yb; ++y) {
        fill_px(image, xa, y, c);
        fill_px(image, xb, y, c);
      }
    }
  }
}

}  // namespace avdnet
