#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "gaitspeed/error.hpp"

namespace gaitspeed {

struct RmsPropConfig {
  double learning_rate = 0.001;
  double decay = 0.9;  // rho
  double epsilon = 1e-8;
};

/// Per-parameter squared-gradient accumulator, flat over the whole model.
struct RmsPropState {
  std::vector<double> v;

  explicit RmsPropState(std::size_t n = 0) : v(n, 0.0) {}
};

/// v <- rho*v + (1-rho)*g^2;  p <- p - lr * g / (sqrt(v) + eps), elementwise.
inline void rmsprop_step(std::span<double> param, std::span<const double> grad,
                         std::span<double> accum, const RmsPropConfig& cfg) {
  if (param.size() != grad.size() || param.size() != accum.size())
    fail(Errc::shape_mismatch, "rmsprop_step shape mismatch");
  for (std::size_t i = 0; i < param.size(); ++i) {
    accum[i] = cfg.decay * accum[i] + (1.0 - cfg.decay) * grad[i] * grad[i];
    param[i] -= cfg.learning_rate * grad[i] / (std::sqrt(accum[i]) + cfg.epsilon);
  }
}

/// Stops when the monitored loss has not strictly improved for `patience`
/// consecutive epochs, or at `max_epochs`.
struct EarlyStopMonitor {
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  int patience = 10;
  int max_epochs = 1000;

  enum class Decision { keep_going, stop };

  /// `epoch` is 1-based.
  Decision update(int epoch, double loss) {
    if (loss < best_loss) {
      best_loss = loss;
      epochs_since_improvement = 0;
      improved_last = true;
    } else {
      ++epochs_since_improvement;
      improved_last = false;
    }
    if (epochs_since_improvement >= patience || epoch >= max_epochs) return Decision::stop;
    return Decision::keep_going;
  }

  bool improved_last = false;
};

}  // namespace gaitspeed
