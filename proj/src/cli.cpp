#include "avdnet/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "avdnet/dataio.hpp"
#include "avdnet/decode.hpp"
#include "avdnet/eval.hpp"
#include "avdnet/rfav.hpp"
#include "avdnet/train.hpp"
#include "avdnet/weights_io.hpp"

namespace fs = std::filesystem;

namespace avdnet {

namespace {

const char* kSynthClassNames[] = {"car", "truck", "van", "pickup", "bus", "boat"};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string widths_str(const NetworkSpec& spec) {
  std::string s;
  for (int i = 0; i < 7; ++i) s += (i ? "," : "") + std::to_string(spec.widths[i]);
  return s;
}

void echo_spec(std::ostream& out, const NetworkSpec& spec) {
  out << "config: input_size=" << spec.input_size << " classes=" << spec.num_classes
      << " anchors=" << spec.num_anchors << " widths=" << widths_str(spec) << "\n";
}

/// Decodes one source image through the letterbox + network + NMS pipeline,
/// returning detections in source-normalized coordinates.
std::vector<Detection> detect_image(const Network<float>& net, const AnchorSet& anchors,
                                    const Tensor<float>& source, double thresh, double nms_iou) {
  auto [boxed, tf] = letterbox(source, net.spec.input_size);
  Tensor<float> raw = forward_image(net, boxed);
  std::vector<Detection> dets = nms(decode(raw, anchors, thresh), nms_iou);
  for (auto& d : dets) d = tf.to_source(d);
  return dets;
}

struct SynthArgs {
  std::string out_dir;
  int images = 16;
  std::uint64_t seed = 0;
  SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg = a.cfg;
  cfg.seed = a.seed;
  cfg.validate();
  fs::create_directories(a.out_dir);

  std::ofstream manifest(fs::path(a.out_dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + a.out_dir);
  for (int i = 0; i < a.images; ++i) {
    auto [image, boxes] = synth_scene(cfg, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "img_%04d", i);
    const fs::path img_path = fs::path(a.out_dir) / (std::string(name) + ".ppm");
    const fs::path ann_path = fs::path(a.out_dir) / (std::string(name) + ".txt");
    save_ppm(image, img_path.string());
    save_annotations(boxes, ann_path.string());
    manifest << name << ".ppm\n";
  }
  std::ofstream classes(fs::path(a.out_dir) / "classes.txt");
  for (int c = 0; c < cfg.num_classes; ++c) {
    if (c < 6)
      classes << kSynthClassNames[c] << "\n";
    else
      classes << "class" << c << "\n";
  }
  out << "config: images=" << a.images << " size=" << cfg.image_size
      << " classes=" << cfg.num_classes << " objects=" << cfg.min_objects << ".."
      << cfg.max_objects << " object_px=" << cfg.min_size_px << ".." << cfg.max_size_px
      << " clutter=" << cfg.clutter << " seed=" << a.seed << "\n";
  out << "wrote " << a.images << " scenes to " << a.out_dir << "\n";
  return 0;
}

int cmd_anchors(const std::string& data, std::size_t k, std::uint64_t seed,
                const std::string& out_path, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(data);
  std::vector<BoxShape> shapes;
  for (const auto& ann : manifest.annotation_paths)
    for (const auto& b : parse_annotations(ann)) shapes.push_back({b.w, b.h});
  const AnchorSet set = kmeans_anchors(shapes, k, seed);
  save_anchors(set, out_path);
  out << "config: data=" << data << " k=" << k << " seed=" << seed << "\n";
  for (const auto& s : set.anchors) out << "anchor " << s.w << " " << s.h << "\n";
  out << "wrote " << out_path << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, anchors, cfg, out, log;
  TrainConfig tc;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  NetworkSpec spec = parse_network_config(a.cfg);
  const AnchorSet anchors = load_anchors(a.anchors);
  spec.num_anchors = static_cast<int>(anchors.k());
  echo_spec(out, spec);
  out << "config: batch=" << a.tc.batch_size << " lr=" << a.tc.initial_lr
      << " momentum=" << a.tc.momentum << " decay=" << a.tc.weight_decay
      << " iters=" << a.tc.total_iterations << " lr_drop=" << a.tc.lr_drop_iteration
      << " seed=" << a.tc.seed << "\n";

  const DatasetManifest manifest = load_manifest(a.data);
  std::vector<TrainSample> dataset;
  for (auto& s : load_dataset(manifest)) {
    auto [boxed, tf] = letterbox(s.image, spec.input_size);
    TrainSample sample;
    sample.image = std::move(boxed);
    for (const auto& b : s.boxes) sample.boxes.push_back(tf.to_network(b));
    dataset.push_back(std::move(sample));
  }

  Network<float> net = build_network<float>(spec);
  init_weights(net, a.tc.seed);
  const auto log = train_loop(net, dataset, anchors, a.tc, a.out);
  const std::string log_path = a.log.empty() ? a.out + ".loss.csv" : a.log;
  save_loss_log(log, log_path);
  if (!log.empty())
    out << "trained " << log.size() << " iterations; first loss " << log.front().loss
        << ", last loss " << log.back().loss << "\n";
  out << "wrote " << a.out << " and " << log_path << "\n";
  return 0;
}

struct DetectArgs {
  std::string weights, image, out_boxes, out_image;
  double thresh = 0.25, nms_iou = 0.45;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  LoadedModel model = load_model(a.weights);
  if (!model.anchors)
    throw std::runtime_error("weights file carries no anchors: " + a.weights);
  echo_spec(out, model.net.spec);
  out << "config: thresh=" << a.thresh << " nms=" << a.nms_iou << "\n";

  Tensor<float> source = load_ppm(a.image);
  const auto dets = detect_image(model.net, *model.anchors, source, a.thresh, a.nms_iou);
  save_detections(dets, a.out_boxes);
  out << dets.size() << " detections -> " << a.out_boxes << "\n";
  if (!a.out_image.empty()) {
    draw_boxes(source, dets);
    save_ppm(source, a.out_image);
    out << "rendered " << a.out_image << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string weights, data, out_report, pr_prefix;
  double iou = 0.5, thresh = 0.005, nms_iou = 0.45;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  LoadedModel model = load_model(a.weights);
  if (!model.anchors)
    throw std::runtime_error("weights file carries no anchors: " + a.weights);
  echo_spec(out, model.net.spec);
  out << "config: iou=" << a.iou << " thresh=" << a.thresh << " nms=" << a.nms_iou << "\n";

  const DatasetManifest manifest = load_manifest(a.data);
  std::vector<ImageEval> images;
  for (std::size_t i = 0; i < manifest.image_paths.size(); ++i) {
    ImageEval ie;
    const Tensor<float> source = load_ppm(manifest.image_paths[i]);
    ie.dets = detect_image(model.net, *model.anchors, source, a.thresh, a.nms_iou);
    ie.gts = parse_annotations(manifest.annotation_paths[i]);
    images.push_back(std::move(ie));
  }
  const EvalReport report = evaluate_dataset(images, model.net.spec.num_classes, a.iou);
  save_eval_report(report, a.out_report);
  for (std::size_t c = 0; c < report.per_class_ap.size(); ++c) {
    out << "class=" << c << " ap=";
    if (report.per_class_ap[c])
      out << *report.per_class_ap[c] << "\n";
    else
      out << "skipped\n";
  }
  out << "map=" << report.map << "\n";
  const std::string prefix = a.pr_prefix.empty() ? a.out_report + ".pr_class" : a.pr_prefix;
  for (std::size_t c = 0; c < report.per_class_pr.size(); ++c)
    save_pr_csv(report.per_class_pr[c], prefix + std::to_string(c) + ".csv");
  out << "wrote " << a.out_report << "\n";
  return 0;
}

struct RfavArgs {
  std::string weights, image, layer, out_path;
};

int cmd_rfav(const RfavArgs& a, std::ostream& out) {
  LoadedModel model = load_model(a.weights);
  echo_spec(out, model.net.spec);
  Tensor<float> source = load_ppm(a.image);
  auto [boxed, tf] = letterbox(source, model.net.spec.input_size);
  const Tensor<float> tap = forward_tap(model.net, boxed, a.layer);
  const QuantizedStack stack = quantize_maps(tap, a.layer);
  const RFAVImage image = rfav(stack);
  GrayImage gray{image.height, image.width, image.pixels};
  save_pgm(gray, a.out_path);
  out << "layer " << a.layer << " (" << stack.depth << "x" << stack.height << "x" << stack.width
      << ") -> " << a.out_path << "\n";
  return 0;
}

int cmd_params(const std::string& cfg_path, std::ostream& out) {
  const NetworkSpec spec = parse_network_config(cfg_path);
  const Network<float> net = build_network<float>(spec);
  echo_spec(out, spec);

  int size = spec.input_size;
  char buf[128];
  out << "layer           out_ch  stride  out_size  params\n";
  auto row = [&](const ConvLayer<float>& layer) {
    if (layer.conv.stride == 2) size /= 2;
    std::snprintf(buf, sizeof buf, "%-15s %6zu  %6d  %8d  %10zu\n", layer.name.c_str(),
                  layer.out_channels(), layer.conv.stride, size, layer_param_count(layer));
    out << buf;
  };
  row(net.conv1);
  row(net.conv2);
  for (const auto& blk : net.blocks) {
    row(blk.a);
    row(blk.b);
    row(blk.c);
  }
  row(net.head);
  out << "total " << count_params(net) << "\n";
  return 0;
}

}  // namespace

NetworkSpec parse_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open network config: " + path);
  NetworkSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key == "input_size") {
      spec.input_size = std::stoi(value);
    } else if (key == "classes") {
      spec.num_classes = std::stoi(value);
    } else if (key == "widths") {
      std::istringstream ss(value);
      std::string item;
      std::vector<int> widths;
      while (std::getline(ss, item, ',')) widths.push_back(std::stoi(trim(item)));
      if (widths.size() != 7)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": widths needs exactly 7 comma-separated values");
      std::copy(widths.begin(), widths.end(), spec.widths.begin());
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                               "'");
    }
  }
  spec.validate();
  return spec;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"AVDNet small-vehicle detector for aerial imagery"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic aerial dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--images", synth.images, "number of scenes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "rng seed");
  synth_cmd->add_option("--size", synth.cfg.image_size, "image size in pixels");
  synth_cmd->add_option("--classes", synth.cfg.num_classes, "number of vehicle classes");
  synth_cmd->add_option("--min-objects", synth.cfg.min_objects, "objects per scene, lower bound");
  synth_cmd->add_option("--max-objects", synth.cfg.max_objects, "objects per scene, upper bound");
  synth_cmd->add_option("--min-size", synth.cfg.min_size_px, "vehicle long side, min px");
  synth_cmd->add_option("--max-size", synth.cfg.max_size_px, "vehicle long side, max px");
  synth_cmd->add_option("--clutter", synth.cfg.clutter, "texture/occlusion intensity [0,1]");

  std::string an_data, an_out;
  std::size_t an_k = 4;
  std::uint64_t an_seed = 0;
  auto* anchors_cmd = app.add_subcommand("anchors", "k-means anchor shapes from a dataset");
  anchors_cmd->add_option("--data", an_data, "dataset manifest")->required();
  anchors_cmd->add_option("--k", an_k, "number of anchors");
  anchors_cmd->add_option("--seed", an_seed, "rng seed");
  anchors_cmd->add_option("--out", an_out, "output anchor file")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train on a dataset");
  train_cmd->add_option("--data", train.data, "dataset manifest")->required();
  train_cmd->add_option("--anchors", train.anchors, "anchor file")->required();
  train_cmd->add_option("--cfg", train.cfg, "network config file")->required();
  train_cmd->add_option("--out", train.out, "output weights file")->required();
  train_cmd->add_option("--iters", train.tc.total_iterations, "training iterations");
  train_cmd->add_option("--lr", train.tc.initial_lr, "initial learning rate");
  train_cmd->add_option("--batch", train.tc.batch_size, "minibatch size");
  train_cmd->add_option("--seed", train.tc.seed, "rng seed");
  train_cmd->add_option("--momentum", train.tc.momentum, "sgd momentum");
  train_cmd->add_option("--decay", train.tc.weight_decay, "weight decay");
  train_cmd->add_option("--lr-drop", train.tc.lr_drop_iteration, "iteration of the 10x lr drop");
  train_cmd->add_option("--log", train.log, "loss log csv (default <out>.loss.csv)");
  train_cmd->add_option("--checkpoint-interval", train.tc.checkpoint_interval,
                        "iterations between checkpoints");

  DetectArgs detect;
  auto* detect_cmd = app.add_subcommand("detect", "detect vehicles in one image");
  detect_cmd->add_option("--weights", detect.weights, "weights file")->required();
  detect_cmd->add_option("--image", detect.image, "input PPM image")->required();
  detect_cmd->add_option("--thresh", detect.thresh, "confidence threshold");
  detect_cmd->add_option("--nms", detect.nms_iou, "NMS IoU threshold");
  detect_cmd->add_option("--out-boxes", detect.out_boxes, "output detections file")->required();
  detect_cmd->add_option("--out-image", detect.out_image, "rendered PPM with boxes");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "mAP evaluation over a dataset");
  eval_cmd->add_option("--weights", eval.weights, "weights file")->required();
  eval_cmd->add_option("--data", eval.data, "dataset manifest")->required();
  eval_cmd->add_option("--iou", eval.iou, "matching IoU threshold");
  eval_cmd->add_option("--thresh", eval.thresh, "confidence threshold for candidate boxes");
  eval_cmd->add_option("--nms", eval.nms_iou, "NMS IoU threshold");
  eval_cmd->add_option("--out-report", eval.out_report, "output report file")->required();
  eval_cmd->add_option("--pr-prefix", eval.pr_prefix,
                       "per-class PR csv path prefix (default <report>.pr_class)");

  RfavArgs rfav;
  auto* rfav_cmd = app.add_subcommand("rfav", "feature-map visualization of one layer");
  rfav_cmd->add_option("--weights", rfav.weights, "weights file")->required();
  rfav_cmd->add_option("--image", rfav.image, "input PPM image")->required();
  rfav_cmd->add_option("--layer", rfav.layer, "tap name (conv1, conv2, convres1..convres5)")
      ->required();
  rfav_cmd->add_option("--out", rfav.out_path, "output PGM file")->required();

  std::string params_cfg;
  auto* params_cmd = app.add_subcommand("params", "per-layer parameter table");
  params_cmd->add_option("--cfg", params_cfg, "network config file")->required();

  std::vector<std::string> argv(args);
  try {
    app.parse(argv);  // CLI11 consumes in reverse; vector overload handles it
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (anchors_cmd->parsed()) return cmd_anchors(an_data, an_k, an_seed, an_out, out);
    if (train_cmd->parsed()) return cmd_train(train, out);
    if (detect_cmd->parsed()) return cmd_detect(detect, out);
    if (eval_cmd->parsed()) return cmd_eval(eval, out);
    if (rfav_cmd->parsed()) return cmd_rfav(rfav, out);
    if (params_cmd->parsed()) return cmd_params(params_cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace avdnet
