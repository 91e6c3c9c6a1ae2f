#pragma once

#include <span>
#include <vector>

#include "avdnet/decode.hpp"
#include "avdnet/target.hpp"
#include "avdnet/tensor.hpp"

namespace avdnet {

struct TrainConfig {
  int batch_size = 4;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double initial_lr = 0.001;
  long lr_drop_iteration = 20000;
  double lr_drop_factor = 10.0;
  long total_iterations = 1000;
  std::uint64_t seed = 0;
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  double lambda_obj = 1.0;
  double lambda_class = 1.0;
  long checkpoint_interval = 500;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (initial_lr <= 0 || lr_drop_factor <= 0 || momentum < 0 || weight_decay < 0)
      throw std::invalid_argument("training rates must be positive");
    if (total_iterations < 0) throw std::invalid_argument("total_iterations must be >= 0");
  }
};

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// YOLO-style sum-of-squares detection loss over a batch, divided by the
/// batch extent. Coordinate residuals are post-sigmoid for x/y and raw
/// (log-space) for w/h; class residuals compare softmax outputs against the
/// one-hot target; objectness is sigmoid-squashed with target 1 on
/// responsible slots and 0 elsewhere.
template <typename T>
LossResult<T> detection_loss(const Tensor<T>& pred,
                             std::span<const TargetTensor<T>> targets, const TrainConfig& cfg) {
  if (pred.rank() != 4)
    throw std::invalid_argument("detection_loss: expected rank-4 prediction");
  const std::size_t b = pred.extent(0);
  if (targets.size() != b)
    throw std::invalid_argument("detection_loss: " + std::to_string(targets.size()) +
                                " targets for batch of " + std::to_string(b));

  LossResult<T> result;
  result.grad = Tensor<T>(pred.shape());
  double total = 0.0;

  for (std::size_t img = 0; img < b; ++img) {
    const TargetTensor<T>& tgt = targets[img];
    const std::size_t A = tgt.num_anchors, C = tgt.num_classes, S = tgt.grid;
    if (pred.extent(1) != A * (5 + C) || pred.extent(2) != S || pred.extent(3) != S)
      throw std::invalid_argument("detection_loss: prediction shape " + pred.shape_str() +
                                  " does not match target layout");

    std::vector<double> p(C), dz(C);
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t base = a * (5 + C);
      for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = 0; j < S; ++j) {
          const double to_hat = pred.at(img, base + 4, i, j);
          const double so = sigmoid(to_hat);
          if (!tgt.responsible(a, i, j)) {
            total += cfg.lambda_noobj * so * so;
            result.grad.at(img, base + 4, i, j) =
                static_cast<T>(cfg.lambda_noobj * 2.0 * so * so * (1.0 - so));
            continue;
          }

          // center offsets, compared after the sigmoid squash
          for (std::size_t ch = 0; ch < 2; ++ch) {
            const double ph = sigmoid(pred.at(img, base + ch, i, j));
            const double th = sigmoid(tgt.values.at(base + ch, i, j));
            const double r = ph - th;
            total += cfg.lambda_coord * r * r;
            result.grad.at(img, base + ch, i, j) =
                static_cast<T>(cfg.lambda_coord * 2.0 * r * ph * (1.0 - ph));
          }
          // log-space width/height, compared raw
          for (std::size_t ch = 2; ch < 4; ++ch) {
            const double r = static_cast<double>(pred.at(img, base + ch, i, j)) -
                             static_cast<double>(tgt.values.at(base + ch, i, j));
            total += cfg.lambda_coord * r * r;
            result.grad.at(img, base + ch, i, j) = static_cast<T>(cfg.lambda_coord * 2.0 * r);
          }
          // objectness toward 1
          {
            const double r = so - 1.0;
            total += cfg.lambda_obj * r * r;
            result.grad.at(img, base + 4, i, j) =
                static_cast<T>(cfg.lambda_obj * 2.0 * r * so * (1.0 - so));
          }
          // softmax class probabilities vs one-hot
          {
            double max_logit = pred.at(img, base + 5, i, j);
            for (std::size_t c = 1; c < C; ++c)
              max_logit =
                  std::max(max_logit, static_cast<double>(pred.at(img, base + 5 + c, i, j)));
            double denom = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              p[c] = std::exp(static_cast<double>(pred.at(img, base + 5 + c, i, j)) - max_logit);
              denom += p[c];
            }
            double s = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              p[c] /= denom;
              const double y = tgt.values.at(base + 5 + c, i, j);
              const double r = p[c] - y;
              total += cfg.lambda_class * r * r;
              s += r * p[c];
            }
            for (std::size_t c = 0; c < C; ++c) {
              const double y = tgt.values.at(base + 5 + c, i, j);
              result.grad.at(img, base + 5 + c, i, j) =
                  static_cast<T>(cfg.lambda_class * 2.0 * p[c] * ((p[c] - y) - s));
            }
          }
        }
      }
    }
  }

  const double inv_b = 1.0 / static_cast<double>(b);
  result.loss = total * inv_b;
  for (std::size_t i = 0; i < result.grad.numel(); ++i)
    result.grad[i] = static_cast<T>(result.grad[i] * inv_b);
  return result;
}

/// Single-image convenience overload (rank-3 prediction, batch of one).
template <typename T>
LossResult<T> detection_loss(const Tensor<T>& pred, const TargetTensor<T>& target,
                             const TrainConfig& cfg) {
  if (pred.rank() != 3)
    throw std::invalid_argument("detection_loss: expected rank-3 prediction");
  Tensor<T> batched({1, pred.extent(0), pred.extent(1), pred.extent(2)});
  std::copy(pred.data(), pred.data() + pred.numel(), batched.data());
  auto res = detection_loss<T>(batched, std::span<const TargetTensor<T>>(&target, 1), cfg);
  Tensor<T> grad(pred.shape());
  std::copy(res.grad.data(), res.grad.data() + grad.numel(), grad.data());
  return {res.loss, std::move(grad)};
}

}  // namespace avdnet
