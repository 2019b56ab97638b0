#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gaitspeed/error.hpp"
#include "gaitspeed/imu_data.hpp"
#include "gaitspeed/rng.hpp"
#include "gaitspeed/windowing.hpp"

namespace gaitspeed {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Mean absolute error, in the units of the inputs (mph here).
inline double mae(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) fail(Errc::shape_mismatch, "mae length mismatch");
  if (truth.empty()) fail(Errc::empty_dataset, "mae on empty vectors");
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(truth[i] - pred[i]);
  return acc / static_cast<double>(truth.size());
}

/// Mean absolute percentage error: per-sample |error| / true value, averaged,
/// times 100.
inline double mape(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) fail(Errc::shape_mismatch, "mape length mismatch");
  if (truth.empty()) fail(Errc::empty_dataset, "mape on empty vectors");
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] <= 0) fail(Errc::out_of_range, "mape needs strictly positive true values");
    acc += std::abs(truth[i] - pred[i]) / truth[i];
  }
  return 100.0 * acc / static_cast<double>(truth.size());
}

/// Coefficient of determination: 1 - SS_res / SS_tot with the total sum of
/// squares about the mean of the TRUE values, so the constant mean predictor
/// scores exactly 0.
inline double r2(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) fail(Errc::shape_mismatch, "r2 length mismatch");
  if (truth.size() < 2) fail(Errc::empty_dataset, "r2 needs at least 2 pairs");
  double mean = 0;
  for (double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0) fail(Errc::out_of_range, "r2 undefined for constant true values");
  return 1.0 - ss_res / ss_tot;
}

/// Variant with the total sum of squares about the mean of the PREDICTED
/// values; kept for comparison behind the --paper-r2 flag.
inline double r2_pred_mean(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) fail(Errc::shape_mismatch, "r2 length mismatch");
  if (truth.size() < 2) fail(Errc::empty_dataset, "r2 needs at least 2 pairs");
  double mean = 0;
  for (double p : pred) mean += p;
  mean /= static_cast<double>(pred.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (pred[i] - mean) * (pred[i] - mean);
  }
  if (ss_tot == 0) fail(Errc::out_of_range, "r2 undefined for constant predictions");
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

struct SpeedBucket {
  double speed_mph = 0;
  std::size_t count = 0;
  double mae = 0;
  double mape = 0;
};

struct EvalReport {
  double mae = 0;
  double mape = 0;   // percent
  double r2 = 0;
  std::vector<std::pair<double, double>> pairs;  // (true, predicted)
  std::vector<SpeedBucket> per_speed;
};

inline EvalReport make_eval_report(std::span<const double> truth, std::span<const double> pred) {
  EvalReport rep;
  rep.mae = mae(truth, pred);
  rep.mape = mape(truth, pred);
  rep.r2 = r2(truth, pred);
  rep.pairs.reserve(truth.size());
  std::map<double, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    rep.pairs.emplace_back(truth[i], pred[i]);
    buckets[truth[i]].push_back(i);
  }
  for (const auto& [speed, idx] : buckets) {
    SpeedBucket b;
    b.speed_mph = speed;
    b.count = idx.size();
    for (std::size_t i : idx) {
      b.mae += std::abs(truth[i] - pred[i]);
      b.mape += std::abs(truth[i] - pred[i]) / truth[i];
    }
    b.mae /= static_cast<double>(idx.size());
    b.mape *= 100.0 / static_cast<double>(idx.size());
    rep.per_speed.push_back(b);
  }
  return rep;
}

/// Writes `true,predicted` CSV rows for plotting.
inline void scatter_export(const EvalReport& report, const std::filesystem::path& path) {
  if (report.pairs.empty()) fail(Errc::empty_dataset, "report has no prediction pairs");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write scatter file: " + path.string());
  out << "true,predicted\n";
  for (const auto& [t, p] : report.pairs)
    out << detail::format_double(t) << ',' << detail::format_double(p) << '\n';
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// 70-15-15 split over windows.
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.70;
  double test_fraction = 0.15;
  double eval_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_fraction <= 0 || test_fraction <= 0 || eval_fraction <= 0)
      fail(Errc::out_of_range, "split fractions must be positive");
    if (std::abs(train_fraction + test_fraction + eval_fraction - 1.0) > 1e-9)
      fail(Errc::out_of_range, "split fractions must sum to 1");
  }
};

struct SplitIndices {
  std::vector<std::size_t> train, test, eval;
};

/// Seeded uniform shuffle, then a contiguous partition at floor boundaries;
/// remainders go to train. Partitions are disjoint and exhaustive.
inline SplitIndices split_dataset(std::size_t n_windows, const SplitSpec& spec) {
  spec.validate();
  if (n_windows == 0) fail(Errc::empty_dataset, "cannot split an empty dataset");
  if (n_windows < 3) fail(Errc::too_short, "need at least 3 windows to split three ways");

  std::vector<std::size_t> order(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
  Rng rng = Rng(spec.seed).child(0x51);
  for (std::size_t i = n_windows; i-- > 1;) {
    const std::size_t j = rng.bounded(i + 1);
    std::swap(order[i], order[j]);
  }

  const auto n_test =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_windows) * spec.test_fraction));
  const auto n_eval =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_windows) * spec.eval_fraction));
  const std::size_t n_train = n_windows - n_test - n_eval;

  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  s.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test), order.end());
  return s;
}

inline WindowedDataset subset(const WindowedDataset& ds, std::span<const std::size_t> indices) {
  WindowedDataset out;
  out.frame_size = ds.frame_size;
  out.overlap = ds.overlap;
  out.channels = ds.channels;
  out.participants = ds.participants;
  const std::size_t wv = ds.window_values();
  out.data.reserve(indices.size() * wv);
  for (std::size_t i : indices) {
    const auto w = ds.window(i);
    out.data.insert(out.data.end(), w.begin(), w.end());
    out.labels.push_back(ds.labels[i]);
    out.origin.push_back(ds.origin[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-participant-out cross-validation.
// ---------------------------------------------------------------------------

using PredictFn = std::function<double(std::span<const double>)>;
using TrainerFn = std::function<PredictFn(const WindowedDataset& train_set, std::uint64_t fold_seed)>;

struct LopoFold {
  std::string participant;
  EvalReport report;
};

struct LopoResult {
  std::vector<LopoFold> folds;
  double mean_mae = 0;
  double mean_mape = 0;
  double mean_r2 = 0;
  EvalReport pooled;  // all held-out predictions pooled before scoring
};

/// One fold per participant: the fold's training set holds zero windows from
/// the held-out participant. The aggregate is the mean of the per-fold
/// metrics; `pooled` scores all held-out predictions at once.
inline LopoResult leave_one_participant_out(const WindowedDataset& ds, const TrainerFn& trainer,
                                            std::uint64_t master_seed) {
  if (ds.participants.size() < 2)
    fail(Errc::empty_dataset, "leave-one-participant-out needs at least 2 participants");

  LopoResult res;
  std::vector<double> pooled_truth, pooled_pred;
  for (std::uint32_t held = 0; held < ds.participants.size(); ++held) {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      (ds.origin[i].participant == held ? test_idx : train_idx).push_back(i);
    if (test_idx.empty() || train_idx.empty())
      fail(Errc::empty_dataset, "participant with no windows: " + ds.participants[held]);

    const WindowedDataset fold_train = subset(ds, train_idx);
    const PredictFn predict = trainer(fold_train, Rng::mix(master_seed, held));

    std::vector<double> truth, pred;
    truth.reserve(test_idx.size());
    for (std::size_t i : test_idx) {
      truth.push_back(ds.labels[i]);
      pred.push_back(predict(ds.window(i)));
    }
    pooled_truth.insert(pooled_truth.end(), truth.begin(), truth.end());
    pooled_pred.insert(pooled_pred.end(), pred.begin(), pred.end());

    LopoFold fold;
    fold.participant = ds.participants[held];
    fold.report = make_eval_report(truth, pred);
    res.mean_mae += fold.report.mae;
    res.mean_mape += fold.report.mape;
    res.mean_r2 += fold.report.r2;
    res.folds.push_back(std::move(fold));
  }
  const auto nf = static_cast<double>(res.folds.size());
  res.mean_mae /= nf;
  res.mean_mape /= nf;
  res.mean_r2 /= nf;
  res.pooled = make_eval_report(pooled_truth, pooled_pred);
  return res;
}

}  // namespace gaitspeed
