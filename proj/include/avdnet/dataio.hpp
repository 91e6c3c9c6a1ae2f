#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avdnet/boxes.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

// --- annotations -----------------------------------------------------------

/// Darknet-style annotation file: one "class_id cx cy w h" per non-empty
/// line, all coordinates normalized. Malformed or out-of-range lines raise
/// errors naming the line and field.
std::vector<GroundTruthBox> parse_annotations(const std::string& path);
void save_annotations(const std::vector<GroundTruthBox>& boxes, const std::string& path);

// --- PPM / PGM -------------------------------------------------------------

/// Binary PPM (P6, maxval 255) to a channel-planar 3xHxW tensor in [0,1].
Tensor<float> load_ppm(const std::string& path);
void save_ppm(const Tensor<float>& image, const std::string& path);

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5, maxval 255).
void save_pgm(const GrayImage& image, const std::string& path);
GrayImage load_pgm(const std::string& path);

// --- letterboxing ----------------------------------------------------------

/// Affine record mapping between source pixels and the padded network
/// square: net_px = src_px * scale + pad.
struct LetterboxTransform {
  double scale = 1.0;
  int pad_x = 0, pad_y = 0;
  std::size_t src_w = 0, src_h = 0;
  int target = 0;

  /// Source-normalized box -> network-normalized box.
  GroundTruthBox to_network(const GroundTruthBox& b) const;
  /// Network-normalized detection -> source-normalized detection.
  Detection to_source(const Detection& d) const;
};

/// Aspect-preserving bilinear resize onto a target x target canvas, centered
/// and padded with 0.5 gray.
std::pair<Tensor<float>, LetterboxTransform> letterbox(const Tensor<float>& image, int target);

// --- synthetic scenes ------------------------------------------------------

struct SynthConfig {
  int image_size = 152;
  int min_objects = 2, max_objects = 5;
  int min_size_px = 10, max_size_px = 40;  // long-side range of a vehicle
  int num_classes = 2;
  double clutter = 0.5;  // texture/occluder/shadow intensity in [0,1]
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic textured aerial scene: noise background, road strips,
/// rectangular/elliptical vehicles with per-class size/aspect/color
/// signatures, optional partial occluders and shadows. Returns the image
/// and exact normalized bounding boxes. Pure function of (config, index).
std::pair<Tensor<float>, std::vector<GroundTruthBox>> synth_scene(const SynthConfig& cfg,
                                                                  std::uint64_t index);

// --- manifests -------------------------------------------------------------

struct DatasetManifest {
  std::vector<std::string> image_paths;       // resolved absolute-ish paths
  std::vector<std::string> annotation_paths;  // sibling .txt per image
  std::vector<std::string> class_names;       // from classes.txt next to the manifest, if any
};

/// One image path per line, '#' comments; relative paths resolve against the
/// manifest's directory. Every image and its annotation sibling must exist;
/// all missing entries are listed in a single error.
DatasetManifest load_manifest(const std::string& path);

/// One class name per line; line number = class id.
std::vector<std::string> load_class_names(const std::string& path);

struct LoadedSample {
  std::string image_path;
  Tensor<float> image;
  std::vector<GroundTruthBox> boxes;
};

/// Loads every manifest entry; when the manifest carries a class table,
/// annotation class ids must be within it.
std::vector<LoadedSample> load_dataset(const DatasetManifest& manifest);

// --- rendering -------------------------------------------------------------

/// Draws 2-px box outlines (color cycles by class) onto an image in place.
void draw_boxes(Tensor<float>& image, const std::vector<Detection>& dets);

}  // namespace avdnet
