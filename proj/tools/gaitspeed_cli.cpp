// gaitspeed: walking/running speed estimation from wrist-worn IMU data.
//
// Subcommands cover the whole pipeline: synth (labeled synthetic sessions),
// ingest (calibrate + trim), segment (sliding windows), stepfreq (FFT
// cadence), train / eval / lopo / search (the dual-branch CNN regressor),
// and predict.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. stdout carries a
// single JSON document per run (plus optional progress on stderr), so output
// is machine-parsable by default.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaitspeed/evaluation.hpp"
#include "gaitspeed/imu_data.hpp"
#include "gaitspeed/spectral.hpp"
#include "gaitspeed/speednet.hpp"
#include "gaitspeed/synth_gait.hpp"
#include "gaitspeed/windowing.hpp"

namespace gs = gaitspeed;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

[[noreturn]] void die(int code, const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  std::exit(code);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) die(kExitUsage, what + " not found");
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "note: no --seed given, using " << s << "\n";
  return s;
}

void emit(const json& doc, bool plain) {
  if (!plain) {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  for (const auto& [key, value] : doc.items())
    std::cout << key << ": " << value.dump() << "\n";
}

struct Range3 {
  double a = 0, b = 0, c = 0;
};

Range3 parse_triple(const std::string& s, char sep, const std::string& what) {
  Range3 r;
  const auto p1 = s.find(sep);
  const auto p2 = p1 == std::string::npos ? std::string::npos : s.find(sep, p1 + 1);
  if (p2 == std::string::npos) die(kExitUsage, "bad " + what + " '" + s + "'");
  try {
    r.a = std::stod(s.substr(0, p1));
    r.b = std::stod(s.substr(p1 + 1, p2 - p1 - 1));
    r.c = std::stod(s.substr(p2 + 1));
  } catch (const std::exception&) {
    die(kExitUsage, "bad " + what + " '" + s + "'");
  }
  return r;
}

std::pair<double, double> parse_pair(const std::string& s, const std::string& what) {
  const auto p = s.find(':');
  if (p == std::string::npos) die(kExitUsage, "bad " + what + " '" + s + "'");
  try {
    return {std::stod(s.substr(0, p)), std::stod(s.substr(p + 1))};
  } catch (const std::exception&) {
    die(kExitUsage, "bad " + what + " '" + s + "'");
  }
}

gs::CalibrationParams load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) die(kExitUsage, "calibration file not found");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) die(kExitRuntime, "calibration file is not valid JSON");
  gs::CalibrationParams calib;
  auto read_sensor = [&](const char* key, gs::CalibrationParams::Sensor& s) {
    if (!doc.contains(key)) return;
    const json& j = doc[key];
    if (j.contains("offset"))
      for (int i = 0; i < 3; ++i) s.offset[static_cast<std::size_t>(i)] = j["offset"][i];
    if (j.contains("scale"))
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
          s.scale[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = j["scale"][i][k];
  };
  read_sensor("accel", calib.accel);
  read_sensor("gyro", calib.gyro);
  return calib;
}

// Shared options for commands that turn a manifest into windows.
struct PipelineOpts {
  std::string manifest;
  double trim_s = 2.5;
  std::size_t frame = gs::kFrameSize;
  double overlap = gs::kFrameOverlap;
  std::string mode = "per-session";
  std::string calib_path;

  void attach(CLI::App* cmd, bool with_mode = true) {
    cmd->add_option("--manifest", manifest, "dataset manifest (or a .gsw windows file)")
        ->required();
    cmd->add_option("--trim", trim_s, "seconds trimmed from each session end")->capture_default_str();
    cmd->add_option("--frame", frame, "window length in samples")->capture_default_str();
    cmd->add_option("--overlap", overlap, "window overlap fraction in [0,1)")->capture_default_str();
    if (with_mode)
      cmd->add_option("--mode", mode, "per-session | concatenated")->capture_default_str()
          ->check(CLI::IsMember({"per-session", "concatenated"}));
    cmd->add_option("--calib", calib_path, "calibration JSON file");
  }

  json config() const {
    return {{"manifest", manifest}, {"trim_s", trim_s},   {"frame", frame},
            {"overlap", overlap},   {"mode", mode},       {"calib", calib_path}};
  }

  gs::WindowedDataset load() const {
    require_file(manifest, "manifest");
    if (fs::path(manifest).extension() == ".gsw") return gs::read_windowed(manifest);
    auto sessions = gs::load_sessions(manifest);
    const gs::CalibrationParams calib = calib_path.empty()
                                            ? gs::CalibrationParams::identity()
                                            : load_calibration(calib_path);
    for (auto& s : sessions) {
      s = gs::apply_calibration(s, calib);
      if (trim_s > 0) s = gs::trim_session(s, trim_s);
    }
    const auto m = mode == "concatenated" ? gs::SegmentMode::concatenated
                                          : gs::SegmentMode::per_session;
    return gs::segment_dataset(sessions, frame, overlap, m);
  }
};

struct TrainOpts {
  int epochs = 1000;
  int patience = 10;
  std::size_t batch = 32;
  double lr = 0.001;
  double rho = 0.9;
  double eps = 1e-8;
  double dropout = -1.0;
  int threads = 1;
  std::string monitor = "validation";

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "maximum training epochs")->capture_default_str();
    cmd->add_option("--patience", patience, "early-stopping patience")->capture_default_str();
    cmd->add_option("--batch", batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--lr", lr, "RMSprop learning rate")->capture_default_str();
    cmd->add_option("--rho", rho, "RMSprop decay")->capture_default_str();
    cmd->add_option("--eps", eps, "RMSprop epsilon")->capture_default_str();
    cmd->add_option("--dropout", dropout, "dropout rate (default: architecture's)")->capture_default_str();
    cmd->add_option("--threads", threads, "worker threads (results are thread-count invariant)")
        ->capture_default_str();
    cmd->add_option("--monitor", monitor, "early-stopping loss: validation | training")->capture_default_str()
        ->check(CLI::IsMember({"validation", "training"}));
  }

  gs::TrainConfig config(std::uint64_t seed, std::ostream* log) const {
    gs::TrainConfig cfg;
    cfg.max_epochs = epochs;
    cfg.patience = patience;
    cfg.batch_size = batch;
    cfg.optimizer.learning_rate = lr;
    cfg.optimizer.decay = rho;
    cfg.optimizer.epsilon = eps;
    cfg.dropout_rate = dropout;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.monitor = monitor == "training" ? gs::TrainConfig::Monitor::training
                                        : gs::TrainConfig::Monitor::validation;
    cfg.epoch_log = log;
    return cfg;
  }

  json config_json(std::uint64_t seed) const {
    return {{"epochs", epochs}, {"patience", patience}, {"batch", batch},
            {"lr", lr},         {"rho", rho},           {"eps", eps},
            {"dropout", dropout < 0 ? 0.2 : dropout},   {"threads", threads},
            {"monitor", monitor}, {"seed", seed}};
  }
};

json report_json(const gs::EvalReport& rep) {
  json buckets = json::array();
  for (const auto& b : rep.per_speed)
    buckets.push_back(
        {{"speed_mph", b.speed_mph}, {"count", b.count}, {"mae", b.mae}, {"mape", b.mape}});
  return {{"mae", rep.mae}, {"mape", rep.mape}, {"r2", rep.r2}, {"per_speed", buckets},
          {"pairs", rep.pairs.size()}};
}

// Fold-internal trainer used by lopo: carves a validation share off the fold
// training windows for early stopping, then wraps the trained model.
gs::TrainerFn make_trainer(const gs::ArchSpec& arch, const TrainOpts& topts,
                           double val_fraction) {
  return [arch, topts, val_fraction](const gs::WindowedDataset& fold_train,
                                     std::uint64_t fold_seed) -> gs::PredictFn {
    gs::SplitSpec sp;
    sp.train_fraction = 1.0 - val_fraction;
    sp.test_fraction = val_fraction / 2;
    sp.eval_fraction = val_fraction / 2;
    sp.seed = fold_seed;
    const auto idx = gs::split_dataset(fold_train.size(), sp);
    std::vector<std::size_t> val_idx = idx.test;
    val_idx.insert(val_idx.end(), idx.eval.begin(), idx.eval.end());
    const auto tr_set = gs::subset(fold_train, idx.train);
    const auto val_set = gs::subset(fold_train, val_idx);

    const auto model = gs::build_model(arch, gs::Rng::mix(fold_seed, 0xF01D));
    const auto cfg = topts.config(fold_seed, nullptr);
    auto result = gs::train(model, tr_set, val_set, cfg);
    auto params = std::make_shared<gs::SpeedNetParams>(std::move(result.params));
    return [params](std::span<const double> window) { return gs::forward(*params, window); };
  };
}

// ---------------------------------------------------------------------------

int cmd_synth(int participants, const std::string& speeds, std::optional<std::uint64_t> seed_opt,
              const std::string& out_dir, double duration, double rate, bool plain) {
  const std::uint64_t seed = resolve_seed(seed_opt);
  const Range3 r = parse_triple(speeds, ':', "--speeds range (lo:hi:step)");
  const auto ladder = gs::speed_ladder(r.a, r.b, r.c);
  const auto entries =
      gs::generate_dataset(out_dir, participants, ladder, seed, gs::GaitModelParams{}, duration, rate);
  emit({{"command", "synth"},
        {"seed", seed},
        {"participants", participants},
        {"speeds", ladder},
        {"sessions", entries.size()},
        {"manifest", (fs::path(out_dir) / "manifest.csv").string()}},
       plain);
  return kExitOk;
}

int cmd_ingest(const PipelineOpts& opts, const std::string& out_dir, bool plain) {
  require_file(opts.manifest, "manifest");
  const auto entries = gs::load_manifest(opts.manifest);
  const auto base = fs::path(opts.manifest).parent_path();
  const gs::CalibrationParams calib =
      opts.calib_path.empty() ? gs::CalibrationParams::identity() : load_calibration(opts.calib_path);
  fs::create_directories(out_dir);
  std::vector<gs::ManifestEntry> out_entries;
  for (const auto& e : entries) {
    fs::path p(e.path);
    if (p.is_relative()) p = base / p;
    gs::Session s = gs::parse_session(p, e.participant_id, e.speed_mph);
    s = gs::apply_calibration(s, calib);
    if (opts.trim_s > 0) s = gs::trim_session(s, opts.trim_s);
    gs::validate_session(s);
    const std::string name = fs::path(e.path).filename().string();
    gs::write_session(s, fs::path(out_dir) / name);
    out_entries.push_back({name, e.speed_mph, e.participant_id});
  }
  gs::save_manifest(out_entries, fs::path(out_dir) / "manifest.csv");
  emit({{"command", "ingest"},
        {"sessions", out_entries.size()},
        {"trim_s", opts.trim_s},
        {"manifest", (fs::path(out_dir) / "manifest.csv").string()}},
       plain);
  return kExitOk;
}

int cmd_segment(const PipelineOpts& opts, const std::string& out_file, bool plain) {
  const gs::WindowedDataset ds = opts.load();
  gs::write_windowed(ds, out_file);
  emit({{"command", "segment"},
        {"windows", ds.size()},
        {"frame", ds.frame_size},
        {"channels", ds.channels},
        {"participants", ds.participants.size()},
        {"out", out_file},
        {"config", opts.config()}},
       plain);
  return kExitOk;
}

int cmd_stepfreq(const std::string& input, const std::string& band, double harmonic,
                 double ratio) {
  require_file(input, "input");
  const auto [lo, hi] = parse_pair(band, "--band (lo:hi)");
  const gs::Session s = gs::parse_session(input, "input", 1.0);
  std::vector<std::array<double, 3>> accel;
  accel.reserve(s.samples.size());
  for (const auto& m : s.samples) accel.push_back({m.ax, m.ay, m.az});
  gs::StepFreqOptions opt;
  opt.band_low_hz = lo;
  opt.band_high_hz = hi;
  opt.harmonic_multiplier = harmonic;
  opt.min_peak_ratio = ratio;
  const gs::CadenceEstimate est = gs::step_frequency(accel, s.sample_rate_hz, opt);
  // Always JSON: this output is meant for tooling.
  std::cout << json{{"dominant_hz", est.dominant_hz},
                    {"step_frequency_hz", est.step_frequency_hz},
                    {"band", {est.band_low_hz, est.band_high_hz}}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_train(const PipelineOpts& popts, const TrainOpts& topts, const std::string& split,
              std::optional<std::uint64_t> seed_opt, const std::string& out_model,
              const std::string& log_path, bool plain) {
  const std::uint64_t seed = resolve_seed(seed_opt);
  const Range3 fr = parse_triple(split, ':', "--split (train:test:eval)");

  const gs::WindowedDataset ds = popts.load();
  gs::SplitSpec sp;
  sp.train_fraction = fr.a;
  sp.test_fraction = fr.b;
  sp.eval_fraction = fr.c;
  sp.seed = seed;
  const auto idx = gs::split_dataset(ds.size(), sp);
  const auto train_set = gs::subset(ds, idx.train);
  const auto test_set = gs::subset(ds, idx.test);
  const auto eval_set = gs::subset(ds, idx.eval);

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) die(kExitRuntime, "cannot open epoch log " + log_path);
    log = &log_file;
  }

  const auto model = gs::build_model(gs::ArchSpec{}, seed);
  const auto cfg = topts.config(seed, log);
  const auto result = gs::train(model, train_set, test_set, cfg);
  if (!out_model.empty()) gs::save_model(result.params, out_model);

  const auto preds = gs::predict_all(result.params, eval_set, topts.threads);
  const auto report = gs::make_eval_report(eval_set.labels, preds);
  emit({{"command", "train"},
        {"seed", seed},
        {"windows", ds.size()},
        {"split", {{"train", idx.train.size()}, {"test", idx.test.size()}, {"eval", idx.eval.size()}}},
        {"epochs_run", result.history.size()},
        {"best_epoch", result.best_epoch},
        {"model", out_model},
        {"evaluation", report_json(report)},
        {"config", {{"pipeline", popts.config()}, {"training", topts.config_json(seed)}}}},
       plain);
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const PipelineOpts& popts, bool paper_r2,
             const std::string& scatter, int threads, bool plain) {
  require_file(model_path, "model");
  const auto params = gs::load_model(model_path);
  const gs::WindowedDataset ds = popts.load();
  const auto preds = gs::predict_all(params, ds, threads);
  const auto report = gs::make_eval_report(ds.labels, preds);
  if (!scatter.empty()) gs::scatter_export(report, scatter);
  json doc{{"command", "eval"},
           {"model", model_path},
           {"windows", ds.size()},
           {"evaluation", report_json(report)},
           {"config", popts.config()}};
  if (paper_r2) doc["evaluation"]["r2_pred_mean"] = gs::r2_pred_mean(ds.labels, preds);
  if (!scatter.empty()) doc["scatter"] = scatter;
  emit(doc, plain);
  return kExitOk;
}

int cmd_lopo(const PipelineOpts& popts, const TrainOpts& topts,
             std::optional<std::uint64_t> seed_opt, double val_fraction, bool plain) {
  const std::uint64_t seed = resolve_seed(seed_opt);
  const gs::WindowedDataset ds = popts.load();
  const auto trainer = make_trainer(gs::ArchSpec{}, topts, val_fraction);
  const auto res = gs::leave_one_participant_out(ds, trainer, seed);

  json folds = json::array();
  for (const auto& f : res.folds)
    folds.push_back({{"participant", f.participant},
                     {"mae", f.report.mae},
                     {"mape", f.report.mape},
                     {"r2", f.report.r2}});
  emit({{"command", "lopo"},
        {"seed", seed},
        {"windows", ds.size()},
        {"folds", folds},
        {"aggregate", {{"mae", res.mean_mae}, {"mape", res.mean_mape}, {"r2", res.mean_r2}}},
        {"pooled", report_json(res.pooled)},
        {"config", {{"pipeline", popts.config()}, {"training", topts.config_json(seed)},
                    {"val_fraction", val_fraction}}}},
       plain);
  return kExitOk;
}

gs::SearchSpace parse_space(const std::string& conv_layers, const std::string& filters,
                            const std::string& dense_layers, const std::string& neurons) {
  gs::SearchSpace space;
  auto assign = [](const std::string& s, std::size_t& lo, std::size_t& hi, const char* what) {
    const auto [a, b] = parse_pair(s, what);
    lo = static_cast<std::size_t>(a);
    hi = static_cast<std::size_t>(b);
  };
  assign(conv_layers, space.conv_layers_min, space.conv_layers_max, "--conv-layers (lo:hi)");
  assign(filters, space.filters_min, space.filters_max, "--filters (lo:hi)");
  assign(dense_layers, space.dense_layers_min, space.dense_layers_max, "--dense-layers (lo:hi)");
  assign(neurons, space.neurons_min, space.neurons_max, "--neurons (lo:hi)");
  return space;
}

int cmd_search(const PipelineOpts& popts, const TrainOpts& topts, int k,
               std::optional<std::uint64_t> seed_opt, int budget_epochs, int budget_patience,
               const std::string& split, const gs::SearchSpace& space,
               const std::string& out_model, bool plain) {
  const std::uint64_t seed = resolve_seed(seed_opt);
  const Range3 fr = parse_triple(split, ':', "--split (train:test:eval)");
  const gs::WindowedDataset ds = popts.load();
  gs::SplitSpec sp;
  sp.train_fraction = fr.a;
  sp.test_fraction = fr.b;
  sp.eval_fraction = fr.c;
  sp.seed = seed;
  const auto idx = gs::split_dataset(ds.size(), sp);
  const auto train_set = gs::subset(ds, idx.train);
  const auto test_set = gs::subset(ds, idx.test);

  TrainOpts budget = topts;
  budget.epochs = budget_epochs;
  budget.patience = budget_patience;
  const auto budget_cfg = budget.config(seed, nullptr);
  const auto res = gs::random_search(space, k, seed, budget_cfg, train_set, test_set);

  json board = json::array();
  for (const auto& c : res.leaderboard)
    board.push_back({{"conv_filters", c.arch.conv_filters},
                     {"dense_neurons", c.arch.dense_neurons},
                     {"val_mae", c.val_mae}});
  json doc{{"command", "search"},
           {"seed", seed},
           {"k", k},
           {"best", {{"conv_filters", res.best.conv_filters},
                     {"dense_neurons", res.best.dense_neurons},
                     {"val_mae", res.best_val_mae}}},
           {"leaderboard", board},
           {"budget", {{"epochs", budget_epochs}, {"patience", budget_patience}}}};

  if (!out_model.empty()) {
    // Winner is retrained at the full budget before being saved.
    const auto model = gs::build_model(res.best, gs::Rng::mix(seed, 0xBE57));
    const auto full_cfg = topts.config(gs::Rng::mix(seed, 0x7EA1), nullptr);
    const auto full = gs::train(model, train_set, test_set, full_cfg);
    gs::save_model(full.params, out_model);
    doc["model"] = out_model;
  }
  emit(doc, plain);
  return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::string& input, double trim_s,
                std::size_t frame, double overlap, int threads, bool plain) {
  require_file(model_path, "model");
  require_file(input, "input");
  const auto params = gs::load_model(model_path);

  gs::WindowedDataset ds;
  if (fs::path(input).extension() == ".gsw") {
    ds = gs::read_windowed(input);
  } else {
    gs::Session s = gs::parse_session(input, "input", 1.0);
    if (trim_s > 0) s = gs::trim_session(s, trim_s);
    std::vector<gs::Session> one{std::move(s)};
    ds = gs::segment_dataset(one, frame, overlap, gs::SegmentMode::per_session);
  }
  const auto preds = gs::predict_all(params, ds, threads);
  double mean = 0;
  for (double p : preds) mean += p;
  mean /= static_cast<double>(preds.size());
  emit({{"command", "predict"},
        {"model", model_path},
        {"input", input},
        {"windows", preds.size()},
        {"predictions_mph", preds},
        {"mean_mph", mean}},
       plain);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"walking/running speed estimation from wrist IMU signals"};
  app.require_subcommand(1);
  bool plain = false;
  app.add_flag("--plain", plain, "key: value lines instead of JSON");
  app.add_flag("--json", [](std::int64_t) {}, "JSON output (the default)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
  int participants = 15;
  std::string speeds = "3.0:7.0:0.5";
  std::optional<std::uint64_t> seed;
  std::string out_dir, out_file, model_path, input_path;
  double duration = 45.0, rate = 51.0;
  synth->add_option("--participants", participants, "number of participants")->capture_default_str();
  synth->add_option("--speeds", speeds, "speed ladder lo:hi:step in mph")->capture_default_str();
  synth->add_option("--seed", seed, "master seed (printed if omitted)");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--duration", duration, "session length in seconds")->capture_default_str();
  synth->add_option("--rate", rate, "sample rate in Hz")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse, calibrate and trim sessions");
  PipelineOpts ingest_opts;
  std::string ingest_out;
  ingest_opts.attach(ingest, false);
  ingest->add_option("--out", ingest_out, "output directory")->required();

  // segment
  auto* segment = app.add_subcommand("segment", "slice sessions into windows (.gsw)");
  PipelineOpts segment_opts;
  segment_opts.attach(segment);
  segment->add_option("--out", out_file, "output .gsw file")->required();

  // stepfreq
  auto* stepfreq = app.add_subcommand("stepfreq", "FFT cadence estimate for one session");
  std::string band = "0.5:4.0";
  double harmonic = 2.0, peak_ratio = 3.0;
  stepfreq->add_option("--input", input_path, "session CSV")->required();
  stepfreq->add_option("--band", band, "search band lo:hi in Hz")->capture_default_str();
  stepfreq->add_option("--harmonic", harmonic, "step-frequency multiplier")->capture_default_str();
  stepfreq->add_option("--ratio", peak_ratio, "peak significance ratio")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train the dual-branch CNN regressor");
  PipelineOpts train_popts;
  TrainOpts train_topts;
  std::string split = "0.7:0.15:0.15", log_path;
  train_popts.attach(train, false);
  train_topts.attach(train);
  train->add_option("--split", split, "train:test:eval fractions")->capture_default_str();
  train->add_option("--seed", seed, "run seed (printed if omitted)");
  train->add_option("--out", model_path, "output model file (.gsn)");
  train->add_option("--log", log_path, "epoch log file (one JSON line per epoch)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a model over a dataset");
  PipelineOpts eval_popts;
  std::string scatter;
  bool paper_r2 = false;
  int eval_threads = 1;
  eval->add_option("--model", model_path, "model file (.gsn)")->required();
  eval_popts.attach(eval, false);
  eval->add_option("--scatter", scatter, "write true,predicted CSV");
  eval->add_flag("--paper-r2", paper_r2, "also report R2 about the predicted mean");
  eval->add_option("--threads", eval_threads, "worker threads")->capture_default_str();

  // lopo
  auto* lopo = app.add_subcommand("lopo", "leave-one-participant-out cross-validation");
  PipelineOpts lopo_popts;
  TrainOpts lopo_topts;
  double val_fraction = 0.15;
  lopo_popts.attach(lopo, false);
  lopo_topts.attach(lopo);
  lopo->add_option("--seed", seed, "run seed (printed if omitted)");
  lopo->add_option("--val-fraction", val_fraction, "fold validation share")->capture_default_str();

  // search
  auto* search = app.add_subcommand("search", "randomized hyperparameter search");
  PipelineOpts search_popts;
  TrainOpts search_topts;
  int k = 50, budget_epochs = 100, budget_patience = 5;
  std::string search_split = "0.7:0.15:0.15";
  std::string sp_conv_layers = "2:10", sp_filters = "10:100", sp_dense_layers = "2:5",
              sp_neurons = "15:500";
  search_popts.attach(search, false);
  search_topts.attach(search);
  search->add_option("--k", k, "number of sampled architectures")->capture_default_str();
  search->add_option("--seed", seed, "run seed (printed if omitted)");
  search->add_option("--budget-epochs", budget_epochs, "per-candidate epoch budget")->capture_default_str();
  search->add_option("--budget-patience", budget_patience, "per-candidate patience")->capture_default_str();
  search->add_option("--split", search_split, "train:test:eval fractions")->capture_default_str();
  search->add_option("--conv-layers", sp_conv_layers, "conv layer count range lo:hi")->capture_default_str();
  search->add_option("--filters", sp_filters, "filters per conv layer range lo:hi")->capture_default_str();
  search->add_option("--dense-layers", sp_dense_layers, "dense layer count range lo:hi")->capture_default_str();
  search->add_option("--neurons", sp_neurons, "neurons per dense layer range lo:hi")->capture_default_str();
  search->add_option("--out", out_file, "retrain the winner at full budget and save here");

  // predict
  auto* predict = app.add_subcommand("predict", "per-window speeds plus the session mean");
  double predict_trim = 2.5;
  std::size_t predict_frame = gs::kFrameSize;
  double predict_overlap = gs::kFrameOverlap;
  int predict_threads = 1;
  predict->add_option("--model", model_path, "model file (.gsn)")->required();
  predict->add_option("--input", input_path, "session CSV or .gsw windows file")->required();
  predict->add_option("--trim", predict_trim, "seconds trimmed from each end")->capture_default_str();
  predict->add_option("--frame", predict_frame, "window length in samples")->capture_default_str();
  predict->add_option("--overlap", predict_overlap, "window overlap fraction")->capture_default_str();
  predict->add_option("--threads", predict_threads, "worker threads")->capture_default_str();

  // global flags (--plain/--json) remain reachable after a subcommand name
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(participants, speeds, seed, out_dir, duration, rate, plain);
    if (ingest->parsed()) return cmd_ingest(ingest_opts, ingest_out, plain);
    if (segment->parsed()) return cmd_segment(segment_opts, out_file, plain);
    if (stepfreq->parsed()) return cmd_stepfreq(input_path, band, harmonic, peak_ratio);
    if (train->parsed())
      return cmd_train(train_popts, train_topts, split, seed, model_path, log_path, plain);
    if (eval->parsed())
      return cmd_eval(model_path, eval_popts, paper_r2, scatter, eval_threads, plain);
    if (lopo->parsed()) return cmd_lopo(lopo_popts, lopo_topts, seed, val_fraction, plain);
    if (search->parsed())
      return cmd_search(search_popts, search_topts, k, seed, budget_epochs, budget_patience,
                        search_split,
                        parse_space(sp_conv_layers, sp_filters, sp_dense_layers, sp_neurons),
                        out_file, plain);
    if (predict->parsed())
      return cmd_predict(model_path, input_path, predict_trim, predict_frame, predict_overlap,
                         predict_threads, plain);
  } catch (const gs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
