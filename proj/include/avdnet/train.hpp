#pragma once

#include <string>
#include <vector>

#include "avdnet/loss.hpp"
#include "avdnet/network.hpp"
#include "avdnet/target.hpp"

namespace avdnet {

/// Piecewise-constant schedule: initial_lr before the drop iteration,
/// initial_lr / lr_drop_factor at and after it.
inline double lr_schedule(long iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw std::invalid_argument("lr_schedule: iteration must be >= 0");
  return iteration < cfg.lr_drop_iteration ? cfg.initial_lr
                                           : cfg.initial_lr / cfg.lr_drop_factor;
}

/// SGD with momentum and weight decay:
///   v <- momentum*v - lr*(grad + weight_decay*w);  w <- w + v
/// Weight decay applies to conv weights only (batch-norm scale/shift and
/// biases are exempt). `velocity` must have one entry per learnable scalar;
/// an empty vector is resized and zeroed.
template <typename T>
void sgd_step(Network<T>& net, NetworkGrads<T>& grads, std::vector<T>& velocity, double lr,
              const TrainConfig& cfg) {
  struct Slot {
    T* w;
    std::size_t n;
    bool decay;
  };
  std::vector<Slot> params;
  visit_params(net, false, [&](const ParamRef<T>& p) {
    params.push_back({p.data, p.size, param_decayable(p.kind)});
  });
  std::vector<std::pair<T*, std::size_t>> gbufs;
  visit_grads(grads, net, [&](T* g, std::size_t n) { gbufs.push_back({g, n}); });

  std::size_t total = 0;
  for (const auto& s : params) total += s.n;
  if (velocity.empty()) velocity.assign(total, T(0));
  if (velocity.size() != total)
    throw std::invalid_argument("sgd_step: velocity size does not match parameter count");

  const T m = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T step = static_cast<T>(lr);
  std::size_t off = 0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    T* w = params[s].w;
    const T* g = gbufs[s].first;
    T* v = velocity.data() + off;
    if (params[s].decay) {
      for (std::size_t i = 0; i < params[s].n; ++i) {
        v[i] = m * v[i] - step * (g[i] + wd * w[i]);
        w[i] += v[i];
      }
    } else {
      for (std::size_t i = 0; i < params[s].n; ++i) {
        v[i] = m * v[i] - step * g[i];
        w[i] += v[i];
      }
    }
    off += params[s].n;
  }
}

struct TrainSample {
  Tensor<float> image;  // 3 x input_size x input_size, values in [0,1]
  std::vector<GroundTruthBox> boxes;
};

struct TrainLogEntry {
  long iteration;
  double lr;
  double loss;
};

/// Deterministic minibatch SGD over the dataset. Samples are drawn by
/// seeded epoch shuffles; targets are assigned once up front. When
/// checkpoint_path is non-empty the weights (with anchors embedded) are
/// written every cfg.checkpoint_interval iterations and at the end.
std::vector<TrainLogEntry> train_loop(Network<float>& net, const std::vector<TrainSample>& dataset,
                                      const AnchorSet& anchors, const TrainConfig& cfg,
                                      const std::string& checkpoint_path = "");

/// CSV "iteration,lr,loss".
void save_loss_log(const std::vector<TrainLogEntry>& log, const std::string& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// End-to-end check of the analytic loss gradient against central finite
/// differences at 64-bit precision, over >= sample_count randomly chosen
/// parameters of a small network.
GradCheckResult gradient_check(const NetworkSpec& spec, std::uint64_t seed, double eps,
                               std::size_t sample_count = 200);

}  // namespace avdnet
