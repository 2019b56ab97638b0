#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gaitspeed/error.hpp"
#include "gaitspeed/layers.hpp"
#include "gaitspeed/optimizer.hpp"
#include "gaitspeed/parallel.hpp"
#include "gaitspeed/rng.hpp"
#include "gaitspeed/windowing.hpp"

namespace gaitspeed {

// ---------------------------------------------------------------------------
// Architecture description. Both branches share the shape but never the
// parameters. Bounds are the hyperparameter search ranges.
// ---------------------------------------------------------------------------

struct ArchSpec {
  std::vector<std::size_t> conv_filters{27, 45};
  std::vector<std::size_t> dense_neurons{180, 30};
  double dropout_rate = 0.2;

  void validate() const {
    if (conv_filters.size() < 2 || conv_filters.size() > 10)
      fail(Errc::out_of_range, "conv layer count must be in [2, 10]");
    for (std::size_t f : conv_filters)
      if (f < 10 || f > 100) fail(Errc::out_of_range, "conv filter count must be in [10, 100]");
    if (dense_neurons.size() < 2 || dense_neurons.size() > 5)
      fail(Errc::out_of_range, "dense layer count must be in [2, 5]");
    for (std::size_t n : dense_neurons)
      if (n < 15 || n > 500) fail(Errc::out_of_range, "dense neuron count must be in [15, 500]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      fail(Errc::out_of_range, "dropout rate must be in [0, 1)");
  }
};

/// All trainable parameters of the dual-branch network.
struct SpeedNetParams {
  ArchSpec arch;
  std::vector<Conv2d> accel_conv;
  std::vector<Conv2d> gyro_conv;
  std::vector<Dense> dense;  // hidden layers
  Dense output;              // single linear neuron

  std::size_t concat_length() const { return 2 * arch.conv_filters.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : accel_conv) n += l.parameter_count();
    for (const auto& l : gyro_conv) n += l.parameter_count();
    for (const auto& l : dense) n += l.parameter_count();
    n += output.parameter_count();
    return n;
  }

  /// Every parameter tensor in the fixed serialization order: accel branch
  /// convs (weights then bias each), gyro branch convs, hidden dense layers,
  /// output layer.
  template <typename Self>
  static std::vector<std::span<double>> views(Self& p) {
    std::vector<std::span<double>> out;
    auto add = [&out](auto& tensor) { out.push_back({tensor.v.data(), tensor.v.size()}); };
    for (auto& l : p.accel_conv) {
      add(l.w);
      add(l.b);
    }
    for (auto& l : p.gyro_conv) {
      add(l.w);
      add(l.b);
    }
    for (auto& l : p.dense) {
      add(l.w);
      add(l.b);
    }
    add(p.output.w);
    add(p.output.b);
    return out;
  }

  std::vector<std::span<double>> param_views() { return views(*this); }
};

inline SpeedNetParams zeros_like(const SpeedNetParams& p) {
  SpeedNetParams z;
  z.arch = p.arch;
  for (const auto& l : p.accel_conv) z.accel_conv.push_back(Conv2d::zeros(l.in_channels, l.out_channels));
  for (const auto& l : p.gyro_conv) z.gyro_conv.push_back(Conv2d::zeros(l.in_channels, l.out_channels));
  for (const auto& l : p.dense) z.dense.push_back(Dense::zeros(l.in, l.out));
  z.output = Dense::zeros(p.output.in, p.output.out);
  return z;
}

inline void zero_params(SpeedNetParams& p) {
  for (auto v : p.param_views()) std::fill(v.begin(), v.end(), 0.0);
}

/// Deterministic initialization; branches draw from independent seed streams.
inline SpeedNetParams build_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  SpeedNetParams p;
  p.arch = arch;
  Rng root(seed);
  Rng accel_rng = root.child(0);
  Rng gyro_rng = root.child(1);
  Rng head_rng = root.child(2);

  std::size_t in_ch = 1;
  for (std::size_t f : arch.conv_filters) {
    p.accel_conv.push_back(Conv2d::init(in_ch, f, accel_rng));
    in_ch = f;
  }
  in_ch = 1;
  for (std::size_t f : arch.conv_filters) {
    p.gyro_conv.push_back(Conv2d::init(in_ch, f, gyro_rng));
    in_ch = f;
  }
  std::size_t in = p.concat_length();
  for (std::size_t n : arch.dense_neurons) {
    p.dense.push_back(Dense::init(in, n, head_rng));
    in = n;
  }
  p.output = Dense::init(in, 1, head_rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward. A window is [F, 6] row-major; columns 0-2 feed the
// accelerometer branch, 3-5 the gyroscope branch, each as a [1, F, 3] map.
// ---------------------------------------------------------------------------

struct BranchTrace {
  std::vector<Tensor> inputs;  // inputs[i] feeds conv layer i; inputs[0] is the branch input
  std::vector<Tensor> pre;     // conv outputs before ReLU
  std::vector<std::size_t> argmax;
  std::size_t map_h = 0, map_w = 0;
};

struct ForwardTrace {
  BranchTrace accel, gyro;
  Tensor concat;
  std::vector<Tensor> head_inputs;  // input to each hidden dense layer
  std::vector<Tensor> head_pre;     // dense outputs before ReLU
  std::vector<DropoutMask> head_mask;
  Tensor output_input;  // after last dropout; feeds the output neuron
};

namespace detail {

inline Tensor branch_input(std::span<const double> window, std::size_t frame, std::size_t col0) {
  Tensor x = Tensor::zeros({1, frame, 3});
  for (std::size_t h = 0; h < frame; ++h)
    for (std::size_t w = 0; w < 3; ++w) x.v[h * 3 + w] = window[h * 6 + col0 + w];
  return x;
}

inline Tensor run_branch(const std::vector<Conv2d>& convs, Tensor x, BranchTrace* trace) {
  if (trace) {
    trace->inputs.clear();
    trace->pre.clear();
  }
  for (const Conv2d& l : convs) {
    if (trace) trace->inputs.push_back(x);
    Tensor pre = conv2d_forward(l, x);
    if (trace) trace->pre.push_back(pre);
    x = relu(pre);
  }
  if (trace) {
    trace->map_h = x.shape[1];
    trace->map_w = x.shape[2];
  }
  PoolResult pool = global_max_pool(x);
  if (trace) trace->argmax = std::move(pool.argmax);
  return std::move(pool.out);
}

}  // namespace detail

/// Predicts speed in mph for one window. `rng` is only consulted when
/// training with a nonzero dropout rate; inference is deterministic.
inline double forward(const SpeedNetParams& p, std::span<const double> window, bool training = false,
                      Rng* rng = nullptr, ForwardTrace* trace = nullptr,
                      double dropout_override = -1.0) {
  const std::size_t frame = window.size() / 6;
  if (window.size() != frame * 6 || frame == 0)
    fail(Errc::shape_mismatch, "window must be [F, 6] row-major");
  const double rate = dropout_override >= 0.0 ? dropout_override : p.arch.dropout_rate;
  if (training && rate > 0.0 && rng == nullptr)
    fail(Errc::out_of_range, "training forward with dropout needs an rng");

  Tensor accel_out = detail::run_branch(p.accel_conv, detail::branch_input(window, frame, 0),
                                        trace ? &trace->accel : nullptr);
  Tensor gyro_out = detail::run_branch(p.gyro_conv, detail::branch_input(window, frame, 3),
                                       trace ? &trace->gyro : nullptr);

  Tensor h = Tensor::zeros({accel_out.size() + gyro_out.size()});
  std::copy(accel_out.v.begin(), accel_out.v.end(), h.v.begin());
  std::copy(gyro_out.v.begin(), gyro_out.v.end(), h.v.begin() + accel_out.size());
  if (trace) {
    trace->concat = h;
    trace->head_inputs.clear();
    trace->head_pre.clear();
    trace->head_mask.clear();
  }

  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  for (const Dense& d : p.dense) {
    if (trace) trace->head_inputs.push_back(h);
    Tensor pre = dense_forward(d, h);
    if (trace) trace->head_pre.push_back(pre);
    DropoutMask mask;
    h = dropout(relu(pre), rate, r, training, trace ? &mask : nullptr);
    if (trace) trace->head_mask.push_back(std::move(mask));
  }
  if (trace) trace->output_input = h;
  return dense_forward(p.output, h).v[0];
}

/// Backpropagates d(loss)/d(prediction) through a recorded forward pass,
/// accumulating into `grads` (shaped like the parameters).
inline void backward(const SpeedNetParams& p, const ForwardTrace& trace, double grad_prediction,
                     SpeedNetParams& grads) {
  Tensor g = Tensor::zeros({1});
  g[0] = grad_prediction;
  g = dense_backward(p.output, trace.output_input, g, grads.output);

  for (std::size_t li = p.dense.size(); li-- > 0;) {
    g = dropout_backward(trace.head_mask[li], g);
    g = relu_backward(trace.head_pre[li], g);
    g = dense_backward(p.dense[li], trace.head_inputs[li], g, grads.dense[li]);
  }

  const std::size_t half = p.arch.conv_filters.back();
  auto branch_back = [&](const std::vector<Conv2d>& convs, const BranchTrace& bt,
                         std::vector<Conv2d>& branch_grads, std::size_t offset) {
    Tensor gp = Tensor::zeros({half});
    std::copy(g.v.begin() + offset, g.v.begin() + offset + half, gp.v.begin());
    Tensor gx = global_max_pool_backward(bt.argmax, gp, bt.map_h, bt.map_w);
    for (std::size_t li = convs.size(); li-- > 0;) {
      gx = relu_backward(bt.pre[li], gx);
      gx = conv2d_backward(convs[li], bt.inputs[li], gx, branch_grads[li]);
    }
  };
  branch_back(p.accel_conv, trace.accel, grads.accel_conv, 0);
  branch_back(p.gyro_conv, trace.gyro, grads.gyro_conv, half);
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int max_epochs = 1000;
  int patience = 10;
  std::size_t batch_size = 32;
  RmsPropConfig optimizer{};
  double dropout_rate = -1.0;  // < 0: use the architecture's rate
  std::uint64_t seed = 0;
  enum class Monitor { validation, training };
  Monitor monitor = Monitor::validation;  // which loss early stopping watches
  int threads = 1;
  std::ostream* epoch_log = nullptr;  // one JSON line per epoch when set

  void validate() const {
    if (patience < 1) fail(Errc::out_of_range, "patience must be >= 1");
    if (max_epochs < patience) fail(Errc::out_of_range, "max_epochs must be >= patience");
    if (batch_size == 0) fail(Errc::out_of_range, "batch_size must be positive");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_mae = 0;
  double val_mae = 0;
};

struct TrainResult {
  SpeedNetParams params;  // parameters from the best monitored epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_monitored = 0;
};

/// Inference predictions for every window; deterministic for any thread
/// count (each slot is written independently).
inline std::vector<double> predict_all(const SpeedNetParams& p, const WindowedDataset& ds,
                                       int threads = 1) {
  std::vector<double> out(ds.size());
  parallel_for(ds.size(), threads,
               [&](std::size_t i) { out[i] = forward(p, ds.window(i)); });
  return out;
}

/// Mini-batch RMSprop on MAE with per-epoch shuffling and early stopping.
/// Per-sample gradients are reduced in sample order, so results are
/// bit-identical for any thread count.
inline TrainResult train(const SpeedNetParams& initial, const WindowedDataset& train_set,
                         const WindowedDataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0)
    fail(Errc::empty_dataset, "training and validation sets must be non-empty");
  if (val_set.window_values() != train_set.window_values())
    fail(Errc::shape_mismatch, "train/validation frame mismatch");

  SpeedNetParams params = initial;
  const double dropout_rate =
      cfg.dropout_rate >= 0.0 ? cfg.dropout_rate : params.arch.dropout_rate;

  auto views = params.param_views();
  std::size_t total = 0;
  for (const auto& v : views) total += v.size();
  RmsPropState state(total);

  const std::size_t n = train_set.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  std::vector<SpeedNetParams> sample_grads;
  for (std::size_t i = 0; i < bs; ++i) sample_grads.push_back(zeros_like(params));
  SpeedNetParams batch_grad = zeros_like(params);
  std::vector<double> abs_err(bs);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng = Rng(cfg.seed).child(0x5A);

  EarlyStopMonitor monitor;
  monitor.patience = cfg.patience;
  monitor.max_epochs = cfg.max_epochs;

  TrainResult result;
  result.params = params;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // Fisher-Yates from the run seed; identical for identical configs.
    for (std::size_t i = n; i-- > 1;) {
      const std::size_t j = shuffle_rng.bounded(i + 1);
      std::swap(order[i], order[j]);
    }

    double epoch_abs_err = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t cur = std::min(bs, n - b0);
      parallel_for(cur, cfg.threads, [&](std::size_t s) {
        const std::size_t idx = order[b0 + s];
        zero_params(sample_grads[s]);
        // Dropout stream depends only on (seed, epoch, position), never on
        // scheduling.
        Rng drng(Rng::mix(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)),
                          static_cast<std::uint64_t>(b0 + s)));
        ForwardTrace trace;
        const double pred =
            forward(params, train_set.window(idx), true, &drng, &trace, dropout_rate);
        const double err = pred - train_set.labels[idx];
        abs_err[s] = std::abs(err);
        const double g = (err > 0 ? 1.0 : (err < 0 ? -1.0 : 0.0)) / static_cast<double>(cur);
        backward(params, trace, g, sample_grads[s]);
      });
      for (std::size_t s = 0; s < cur; ++s) epoch_abs_err += abs_err[s];

      zero_params(batch_grad);
      auto bg_views = batch_grad.param_views();
      for (std::size_t s = 0; s < cur; ++s) {
        auto sv = sample_grads[s].param_views();
        for (std::size_t vi = 0; vi < bg_views.size(); ++vi)
          for (std::size_t j = 0; j < bg_views[vi].size(); ++j) bg_views[vi][j] += sv[vi][j];
      }

      std::size_t off = 0;
      for (std::size_t vi = 0; vi < views.size(); ++vi) {
        rmsprop_step(views[vi], bg_views[vi],
                     std::span<double>(state.v.data() + off, views[vi].size()), cfg.optimizer);
        off += views[vi].size();
      }
    }

    const double train_mae = epoch_abs_err / static_cast<double>(n);
    const auto val_pred = predict_all(params, val_set, cfg.threads);
    const double val_mae = mae_loss(val_pred, val_set.labels).loss;
    if (!std::isfinite(train_mae) || !std::isfinite(val_mae))
      fail(Errc::non_finite_loss, "non-finite loss at epoch " + std::to_string(epoch));

    result.history.push_back({epoch, train_mae, val_mae});
    if (cfg.epoch_log)
      *cfg.epoch_log << "{\"epoch\":" << epoch << ",\"train_mae\":" << train_mae
                     << ",\"val_mae\":" << val_mae << "}\n";

    const double monitored = cfg.monitor == TrainConfig::Monitor::validation ? val_mae : train_mae;
    const auto decision = monitor.update(epoch, monitored);
    if (monitor.improved_last) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_monitored = monitored;
    }
    if (decision == EarlyStopMonitor::Decision::stop) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Randomized hyperparameter search.
// ---------------------------------------------------------------------------

struct SearchSpace {
  std::size_t conv_layers_min = 2, conv_layers_max = 10;
  std::size_t filters_min = 10, filters_max = 100;
  std::size_t dense_layers_min = 2, dense_layers_max = 5;
  std::size_t neurons_min = 15, neurons_max = 500;

  void validate() const {
    auto check = [](std::size_t lo, std::size_t hi, std::size_t plo, std::size_t phi,
                    const char* what) {
      if (lo > hi || lo < plo || hi > phi)
        fail(Errc::out_of_range, std::string("search range for ") + what + " outside [" +
                                     std::to_string(plo) + ", " + std::to_string(phi) + "]");
    };
    check(conv_layers_min, conv_layers_max, 2, 10, "conv layers");
    check(filters_min, filters_max, 10, 100, "filters");
    check(dense_layers_min, dense_layers_max, 2, 5, "dense layers");
    check(neurons_min, neurons_max, 15, 500, "neurons");
  }
};

inline ArchSpec sample_arch(const SearchSpace& space, Rng& rng) {
  ArchSpec a;
  a.conv_filters.resize(rng.uniform_int(space.conv_layers_min, space.conv_layers_max));
  for (auto& f : a.conv_filters) f = rng.uniform_int(space.filters_min, space.filters_max);
  a.dense_neurons.resize(rng.uniform_int(space.dense_layers_min, space.dense_layers_max));
  for (auto& d : a.dense_neurons) d = rng.uniform_int(space.neurons_min, space.neurons_max);
  return a;
}

struct SearchCandidate {
  ArchSpec arch;
  double val_mae = 0;
  std::uint64_t model_seed = 0;
};

struct SearchResult {
  ArchSpec best;
  double best_val_mae = 0;
  std::vector<SearchCandidate> leaderboard;  // sorted by validation MAE
};

/// Samples k architectures uniformly from the space and trains each under
/// `budget`; lowest validation MAE wins. Candidate seeds derive from the
/// master seed, so the leaderboard is reproducible.
inline SearchResult random_search(const SearchSpace& space, int k, std::uint64_t seed,
                                  const TrainConfig& budget, const WindowedDataset& train_set,
                                  const WindowedDataset& val_set) {
  space.validate();
  if (k < 1) fail(Errc::out_of_range, "random_search needs k >= 1");
  Rng arch_rng = Rng(seed).child(0xA5);

  SearchResult res;
  for (int i = 0; i < k; ++i) {
    SearchCandidate c;
    c.arch = sample_arch(space, arch_rng);
    c.model_seed = Rng::mix(seed, 0x1000 + static_cast<std::uint64_t>(i));
    TrainConfig cfg = budget;
    cfg.seed = Rng::mix(seed, 0x2000 + static_cast<std::uint64_t>(i));
    const SpeedNetParams model = build_model(c.arch, c.model_seed);
    const TrainResult tr = train(model, train_set, val_set, cfg);
    const auto preds = predict_all(tr.params, val_set, cfg.threads);
    c.val_mae = mae_loss(preds, val_set.labels).loss;
    res.leaderboard.push_back(std::move(c));
  }
  std::stable_sort(res.leaderboard.begin(), res.leaderboard.end(),
                   [](const SearchCandidate& a, const SearchCandidate& b) {
                     return a.val_mae < b.val_mae;
                   });
  res.best = res.leaderboard.front().arch;
  res.best_val_mae = res.leaderboard.front().val_mae;
  return res;
}

// ---------------------------------------------------------------------------
// Model file: magic GSN1, u32 version, the architecture, then every
// parameter as little-endian f32 in param_views order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelFileVersion = 1;

inline void save_model(const SpeedNetParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write model file: " + path.string());
  out.write("GSN1", 4);
  detail::put_u32(out, kModelFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(p.arch.conv_filters.size()));
  for (std::size_t f : p.arch.conv_filters) detail::put_u32(out, static_cast<std::uint32_t>(f));
  detail::put_u32(out, static_cast<std::uint32_t>(p.arch.dense_neurons.size()));
  for (std::size_t d : p.arch.dense_neurons) detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_f32(out, static_cast<float>(p.arch.dropout_rate));
  SpeedNetParams& mut = const_cast<SpeedNetParams&>(p);
  for (auto v : mut.param_views())
    for (double x : v) detail::put_f32(out, static_cast<float>(x));
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

inline SpeedNetParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open model file: " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "GSN1", 4) != 0)
    fail(Errc::bad_model_file, "bad magic, not a GSN1 model file: " + path.string());
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kModelFileVersion)
    fail(Errc::bad_model_file, "unsupported model file version " + std::to_string(version));

  ArchSpec arch;
  arch.conv_filters.resize(detail::get_u32(in, "conv layer count"));
  for (auto& f : arch.conv_filters) f = detail::get_u32(in, "filter count");
  arch.dense_neurons.resize(detail::get_u32(in, "dense layer count"));
  for (auto& d : arch.dense_neurons) d = detail::get_u32(in, "neuron count");
  arch.dropout_rate = detail::get_f32(in, "dropout rate");
  arch.validate();

  SpeedNetParams p = build_model(arch, 0);
  zero_params(p);
  for (auto v : p.param_views())
    for (double& x : v) x = detail::get_f32(in, "parameters");
  char extra;
  if (in.read(&extra, 1)) fail(Errc::bad_model_file, "trailing bytes after parameters");
  return p;
}

}  // namespace gaitspeed
