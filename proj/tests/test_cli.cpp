#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "gaitspeed/speednet.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli_path() { return GAITSPEED_CLI_PATH; }

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args) {
  const auto dir = testutil::scratch_dir("cli");
  const auto out_file = dir / "stdout.txt";
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = std::string(cli_path()) + " " + args + " >" + out_file.string() +
                          " 2>" + err_file.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream o(out_file), e(err_file);
  r.out.assign(std::istreambuf_iterator<char>(o), std::istreambuf_iterator<char>());
  r.err.assign(std::istreambuf_iterator<char>(e), std::istreambuf_iterator<char>());
  return r;
}

/// Small pipeline shared across cases: 3 participants x 3 speeds, 20 s
/// sessions so training cases stay quick.
const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    const auto d = testutil::scratch_dir("clidata");
    const RunResult r = run_cli("synth --participants 3 --speeds 3.0:7.0:2.0 --seed 11 --out " +
                                (d / "raw").string() + " --duration 20");
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

std::string raw_manifest() { return (dataset_dir() / "raw" / "manifest.csv").string(); }

}  // namespace

TEST_CASE("cli synth emits valid JSON and a loadable dataset") {
  const json doc = json::parse(run_cli("synth --participants 2 --speeds 3.0:4.0:0.5 --seed 5 --out " +
                                       (dataset_dir() / "mini").string() + " --duration 15")
                                   .out);
  CHECK(doc["command"] == "synth");
  CHECK(doc["seed"] == 5);
  CHECK(doc["sessions"] == 6);
  CHECK(fs::exists(dataset_dir() / "mini" / "manifest.csv"));
}

TEST_CASE("cli ingest then segment") {
  const auto clean_dir = dataset_dir() / "clean";
  const json ingest = json::parse(
      run_cli("ingest --manifest " + raw_manifest() + " --out " + clean_dir.string()).out);
  CHECK(ingest["sessions"] == 9);

  const auto gsw = (dataset_dir() / "windows.gsw").string();
  const json seg = json::parse(run_cli("segment --manifest " +
                                       (clean_dir / "manifest.csv").string() +
                                       " --trim 0 --out " + gsw)
                                   .out);
  // 20 s -> 2.5 s trims -> 15 s = 765 samples -> 9 windows per session
  CHECK(seg["windows"] == 9 * 9);
  CHECK(seg["frame"] == 153);
  CHECK(seg["participants"] == 3);
  CHECK(fs::exists(gsw));
}

TEST_CASE("cli stepfreq prints a single JSON estimate") {
  const RunResult r =
      run_cli("stepfreq --input " + (dataset_dir() / "raw" / "P01_3.0mph.csv").string());
  REQUIRE(r.exit_code == 0);
  const json doc = json::parse(r.out);
  CHECK(doc.contains("dominant_hz"));
  CHECK(doc["step_frequency_hz"].get<double>() ==
        doctest::Approx(2.0 * doc["dominant_hz"].get<double>()));
  CHECK(doc["band"][0] == 0.5);
  CHECK(doc["band"][1] == 4.0);
}

TEST_CASE("cli missing inputs exit with code 2") {
  const RunResult r = run_cli("train --manifest /nonexistent/manifest.csv");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("manifest not found") != std::string::npos);

  const RunResult r2 = run_cli("eval --model /nonexistent/model.gsn --manifest " + raw_manifest());
  CHECK(r2.exit_code == 2);
  CHECK(r2.err.find("model not found") != std::string::npos);

  const RunResult r3 = run_cli("definitely-not-a-command");
  CHECK(r3.exit_code == 2);
}

TEST_CASE("cli train, eval, predict round trip") {
  const auto model = (dataset_dir() / "model.gsn").string();
  const auto log = (dataset_dir() / "epochs.jsonl").string();
  const RunResult tr = run_cli("train --manifest " + raw_manifest() + " --seed 21 --epochs 3" +
                               " --patience 3 --threads 2 --out " + model + " --log " + log);
  REQUIRE(tr.exit_code == 0);
  const json doc = json::parse(tr.out);
  CHECK(doc["seed"] == 21);
  CHECK(doc["epochs_run"] == 3);
  CHECK(doc["evaluation"]["mae"].is_number());
  CHECK(doc["evaluation"]["mape"].is_number());
  CHECK(doc["evaluation"]["r2"].is_number());
  CHECK(doc["config"]["training"]["seed"] == 21);
  CHECK(fs::exists(model));

  // epoch log: one JSON object per line
  std::ifstream lg(log);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(lg, line)) {
    const json epoch = json::parse(line);
    CHECK(epoch.contains("train_mae"));
    ++lines;
  }
  CHECK(lines == 3);

  SUBCASE("eval reports the same metric fields") {
    const auto scatter = (dataset_dir() / "scatter.csv").string();
    const json ev = json::parse(run_cli("eval --model " + model + " --manifest " + raw_manifest() +
                                        " --paper-r2 --scatter " + scatter)
                                    .out);
    CHECK(ev["evaluation"]["mae"].is_number());
    CHECK(ev["evaluation"].contains("r2_pred_mean"));
    CHECK(fs::exists(scatter));
  }
  SUBCASE("predict on a session is deterministic and averages its windows") {
    const std::string input = (dataset_dir() / "raw" / "P02_5.0mph.csv").string();
    const RunResult p1 = run_cli("predict --model " + model + " --input " + input);
    const RunResult p2 = run_cli("predict --model " + model + " --input " + input);
    REQUIRE(p1.exit_code == 0);
    CHECK(p1.out == p2.out);
    const json doc1 = json::parse(p1.out);
    const auto preds = doc1["predictions_mph"].get<std::vector<double>>();
    // 20 s session, 2.5 s trim -> 765 rows -> 9 windows
    CHECK(preds.size() == 9);
    double mean = 0;
    for (double v : preds) mean += v;
    mean /= static_cast<double>(preds.size());
    CHECK(doc1["mean_mph"].get<double>() == doctest::Approx(mean).epsilon(1e-9));
  }
}

TEST_CASE("cli train with zero learning rate is the optimizer no-op") {
  const auto model_path = dataset_dir() / "noop.gsn";
  const RunResult tr = run_cli("train --manifest " + raw_manifest() +
                               " --seed 77 --lr 0 --epochs 2 --patience 2 --threads 2 --out " +
                               model_path.string());
  REQUIRE(tr.exit_code == 0);
  // the saved model must equal the freshly initialized one for that seed,
  // up to the file format's single-precision storage
  gaitspeed::SpeedNetParams untouched = gaitspeed::build_model(gaitspeed::ArchSpec{}, 77);
  gaitspeed::SpeedNetParams saved = gaitspeed::load_model(model_path);
  auto a = untouched.param_views();
  auto b = saved.param_views();
  REQUIRE(a.size() == b.size());
  for (std::size_t v = 0; v < a.size(); ++v)
    for (std::size_t i = 0; i < a[v].size(); ++i)
      CHECK(static_cast<float>(a[v][i]) == static_cast<float>(b[v][i]));
}

TEST_CASE("cli predict on an all-zero window with zero biases gives 0 mph") {
  const auto dir = dataset_dir();
  gaitspeed::WindowedDataset zeros;
  zeros.frame_size = 153;
  zeros.channels = 6;
  zeros.data.assign(153 * 6, 0.0);
  zeros.labels = {3.0};
  zeros.participants = {"Z"};
  zeros.origin = {{0, 0}};
  gaitspeed::write_windowed(zeros, dir / "zeros.gsw");
  // freshly built models have zero biases everywhere
  gaitspeed::save_model(gaitspeed::build_model(gaitspeed::ArchSpec{}, 3), dir / "zerobias.gsn");

  const RunResult r = run_cli("predict --model " + (dir / "zerobias.gsn").string() +
                              " --input " + (dir / "zeros.gsw").string());
  REQUIRE(r.exit_code == 0);
  const json doc = json::parse(r.out);
  CHECK(doc["predictions_mph"][0].get<double>() == 0.0);
  CHECK(doc["mean_mph"].get<double>() == 0.0);
}

TEST_CASE("cli lopo reports one fold per participant and a mean aggregate") {
  const std::string args = "lopo --manifest " + raw_manifest() +
                           " --seed 33 --epochs 2 --patience 2 --threads 2";
  const RunResult r = run_cli(args);
  REQUIRE(r.exit_code == 0);
  const json doc = json::parse(r.out);
  REQUIRE(doc["folds"].size() == 3);
  double mean_mape = 0;
  for (const auto& fold : doc["folds"]) mean_mape += fold["mape"].get<double>();
  mean_mape /= 3.0;
  CHECK(doc["aggregate"]["mape"].get<double>() == doctest::Approx(mean_mape).epsilon(1e-12));

  SUBCASE("a fixed seed reproduces the report bit for bit") {
    const RunResult again = run_cli(args);
    CHECK(again.out == r.out);
  }
}

TEST_CASE("cli search trains candidates under a reduced budget") {
  const RunResult r = run_cli("search --manifest " + raw_manifest() +
                              " --k 2 --seed 44 --budget-epochs 2 --budget-patience 2 --threads 2" +
                              " --conv-layers 2:2 --filters 10:12 --dense-layers 2:2 --neurons 15:20");
  REQUIRE(r.exit_code == 0);
  const json doc = json::parse(r.out);
  CHECK(doc["leaderboard"].size() == 2);
  CHECK(doc["best"]["val_mae"].get<double>() ==
        doc["leaderboard"][0]["val_mae"].get<double>());
}
