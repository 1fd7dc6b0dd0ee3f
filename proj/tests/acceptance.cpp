// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avf/cli.hpp"
#include "avf/error.hpp"
#include "avf/nn/checkpoint.hpp"
#include "avf/selftest.hpp"
#include "avf/synth.hpp"
#include "test_util.hpp"

using namespace avf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kMetricBudgetS = 1.0;
constexpr double kGradientBudgetS = 60.0;
constexpr double kSvrBudgetS = 30.0;
constexpr double kEndToEndBudgetS = 600.0;
constexpr double kSingleModalFloor = 0.6;
constexpr double kFusionSlack = 0.02;
constexpr double kPccTol = 1e-12;
constexpr int kMaxEpochs = 50;
constexpr std::uint64_t kDataSeed = 0;
constexpr std::uint64_t kRunSeed = 7;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Outcome {
  bool passed = true;
  std::string detail;

  void fail(const std::string& why) {
    if (passed) detail = why;
    passed = false;
  }
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.passed) ++failures;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

Outcome suite_outcome(const selftest::SuiteResult& r, double budget) {
  Outcome o;
  o.detail = std::to_string(r.cases) + " cases in " + fmt(r.seconds, 2) + " s; " + r.detail;
  if (!r.passed) o.fail(r.detail);
  if (r.seconds >= budget) o.fail("took " + fmt(r.seconds, 2) + " s, budget " + fmt(budget, 0) + " s");
  return o;
}

// --- synthetic pipeline ------------------------------------------------------------------

const char* const kEncoderConfigs[] = {
    R"({"name": "VisModel1", "arch": "vis_lstm_attn", "lstm_hidden": 32, "fc_hidden": 32,
        "epochs": 50, "batch_size": 16, "optimizer": {"kind": "adam", "lr0": 0.003}})",
    R"({"name": "VisModel2", "arch": "vis_cnn1d", "conv_channels": 16, "fc_hidden": 32,
        "epochs": 50, "batch_size": 16, "optimizer": {"kind": "adam", "lr0": 0.003}})",
    R"({"name": "AudModel2", "arch": "aud_mlp", "input_dim": 8, "feature_select": 8, "mlp_hidden": [64, 32],
        "epochs": 50, "batch_size": 16, "optimizer": {"kind": "adam", "lr0": 0.003}})",
    R"({"name": "TextModel", "arch": "text_mha", "mha_heads": 4, "mha_head_dim": 16, "fc_hidden": 32,
        "epochs": 50, "batch_size": 16, "optimizer": {"kind": "adam", "lr0": 0.003}})",
};

// Stacking is fitted on the validation split, which the encoders never saw.
const char* const kFusionConfig = R"({"fit_split": "validation", "epsilon": 0.02})";

const std::vector<std::string> kCombinations = {
    "VisModel1+VisModel2", "VisModel2+AudModel2", "VisModel1+TextModel", "VisModel1+VisModel2+AudModel2",
    "VisModel1+VisModel2+AudModel2+TextModel"};

struct Pipeline {
  fs::path data, configs;
  std::vector<fs::path> encoder_configs;
  fs::path fusion_config;
};

Pipeline prepare(const fs::path& root) {
  Pipeline p;
  p.data = root / "data";
  p.configs = root / "configs";
  fs::create_directories(p.configs);
  for (const char* text : kEncoderConfigs) {
    const json j = json::parse(text);
    if (j.at("epochs").get<int>() > kMaxEpochs) throw ConfigError("acceptance config exceeds the epoch budget");
    p.encoder_configs.push_back(p.configs / (j.at("name").get<std::string>() + ".json"));
    nn::write_json(p.encoder_configs.back(), j);
  }
  p.fusion_config = p.configs / "fusion.json";
  nn::write_json(p.fusion_config, json::parse(kFusionConfig));
  return p;
}

// Runs train, fuse and report into `out`; returns an error message or "".
std::string run_pipeline(const Pipeline& p, const fs::path& out) {
  std::ostringstream sink, err;
  const cli::Io io{sink, err};
  cli::RunConfig run;
  run.manifest = p.data / "manifest.jsonl";
  run.out = out;
  run.seed = kRunSeed;
  run.configs = p.encoder_configs;
  if (cli::run_guarded(io, "train", [&] { return cli::cmd_train(run, io); }) != 0) return err.str();
  run.configs = {p.fusion_config};
  run.combinations = kCombinations;
  if (cli::run_guarded(io, "fuse", [&] { return cli::cmd_fuse(run, io); }) != 0) return err.str();
  if (cli::run_guarded(io, "report", [&] { return cli::cmd_report(out, io); }) != 0) return err.str();
  return "";
}

Outcome check_end_to_end(const Pipeline& p, const fs::path& out, double seconds) {
  Outcome o;
  std::ostringstream detail;

  // (a) validation CCC of every encoder on its own predictions.
  double worst_single = 1.0;
  for (const auto& cfg : p.encoder_configs) {
    const std::string name = cfg.stem().string();
    const json ev = nn::read_json(out / "encoders" / name / "evaluation.json");
    for (const char* t : {"arousal", "valence"}) {
      const auto& tj = ev.at("validation");
      if (!tj.contains(t)) {
        o.fail(name + " has no validation " + t);
        continue;
      }
      const double c = tj.at(t).at("ccc").get<double>();
      worst_single = std::min(worst_single, c);
      if (!(c >= kSingleModalFloor)) o.fail("(a) " + name + " validation " + t + " CCC " + fmt(c) + " < 0.6");
    }
  }
  detail << "(a) min single-modality validation CCC " << fmt(worst_single);

  // (b) all-modality fusion against the best single-modal row of the same harness.
  const json table = nn::read_json(out / "report" / "table.json");
  double best_single = -1.0;
  std::string best_name;
  for (const auto& r : table.at("single").at("rows")) {
    const double mean = 0.5 * (r.at("arousal").get<double>() + r.at("valence").get<double>());
    if (mean > best_single) best_single = mean, best_name = r.at("name").get<std::string>();
  }
  std::optional<double> all;
  for (const auto& r : table.at("multi").at("rows")) {
    const auto name = r.at("name").get<std::string>();
    if (static_cast<std::size_t>(std::count(name.begin(), name.end(), '+')) + 1 == p.encoder_configs.size()) {
      all = r.at("mean").get<double>();
    }
  }
  if (!all) {
    o.fail("(b) no all-modality fusion row");
  } else {
    detail << "; (b) all-modality mean " << fmt(*all) << " vs best single " << best_name << " " << fmt(best_single);
    if (!(*all >= best_single - kFusionSlack)) {
      o.fail("(b) all-modality mean " + fmt(*all) + " < best single " + fmt(best_single) + " - 0.02");
    }
  }

  // (c) table shapes and PCC matrices.
  const auto& single = table.at("single");
  const auto& multi = table.at("multi");
  const std::size_t n_enc = p.encoder_configs.size();
  if (single.at("columns") != json::array({"Single Modal", "arousal", "valence"})) o.fail("(c) single-modal columns");
  if (multi.at("columns") != json::array({"Multi Modal", "arousal", "valence", "mean"})) o.fail("(c) multi-modal columns");
  if (single.at("rows").size() != n_enc) o.fail("(c) expected one single-modal row per encoder");
  if (multi.at("rows").size() != kCombinations.size()) o.fail("(c) expected one multi-modal row per combination");
  for (const auto* rows : {&single.at("rows"), &multi.at("rows")}) {
    double prev = 2.0;
    for (const auto& r : *rows) {
      const double a = r.at("arousal").get<double>(), v = r.at("valence").get<double>();
      if (!std::isfinite(a) || !std::isfinite(v)) o.fail("(c) non-finite CCC in " + r.at("name").get<std::string>());
      if (r.contains("mean") && r.at("mean").get<double>() != 0.5 * (a + v)) o.fail("(c) mean column");
      if (0.5 * (a + v) > prev) o.fail("(c) rows not sorted by mean CCC");
      prev = 0.5 * (a + v);
    }
  }
  std::ifstream txt(out / "report" / "table.txt");
  const std::string text((std::istreambuf_iterator<char>(txt)), std::istreambuf_iterator<char>());
  for (const char* title : {"Performance of single modal (5-fold CV CCC)", "Performance of multi modal (5-fold CV CCC)"}) {
    if (text.find(title) == std::string::npos) o.fail(std::string("(c) missing title: ") + title);
  }
  for (const char* key : {"pcc_arousal", "pcc_valence"}) {
    const auto& m = table.at(key);
    const auto& M = m.at("matrix");
    if (m.at("labels").size() != n_enc || M.size() != n_enc) {
      o.fail(std::string("(c) ") + key + " is not " + std::to_string(n_enc) + "x" + std::to_string(n_enc));
      continue;
    }
    for (std::size_t i = 0; i < n_enc; ++i) {
      for (std::size_t j = 0; j < n_enc; ++j) {
        if (M[i][j].is_null()) {
          o.fail(std::string("(c) undefined entry in ") + key);
          continue;
        }
        const double x = M[i][j].get<double>();
        if (i == j && x != 1.0) o.fail(std::string("(c) ") + key + " diagonal is not 1");
        if (std::abs(x - M[j][i].get<double>()) > kPccTol) o.fail(std::string("(c) ") + key + " is not symmetric");
        if (!(std::abs(x) <= 1.0)) o.fail(std::string("(c) ") + key + " entry outside [-1, 1]");
      }
    }
    std::ifstream csv(out / "report" / (std::string(key) + ".csv"));
    std::string header;
    std::getline(csv, header);
    if (header.rfind("model,", 0) != 0) o.fail(std::string("(c) ") + key + ".csv header");
  }
  detail << "; (c) " << n_enc << " single rows, " << multi.at("rows").size() << " multi rows, " << n_enc << "x"
         << n_enc << " PCC";

  detail << "; " << fmt(seconds, 1) << " s";
  if (seconds >= kEndToEndBudgetS) o.fail("took " + fmt(seconds, 1) + " s, budget 600 s");
  if (o.passed) o.detail = detail.str();
  else o.detail += " [" + detail.str() + "]";
  return o;
}

Outcome check_ablations(const Pipeline& p, const fs::path& out) {
  Outcome o;
  std::ostringstream sink, err;
  const cli::Io io{sink, err};
  cli::RunConfig run;
  run.manifest = p.data / "manifest.jsonl";
  run.out = out;
  run.seed = kRunSeed;
  run.configs = {p.configs / "VisModel2.json"};
  if (cli::run_guarded(io, "ablate", [&] { return cli::cmd_ablate(run, io); }) != 0) {
    o.fail(err.str());
    return o;
  }
  struct Shape {
    const char* study;
    const char* header;
    std::vector<std::string> labels;
  };
  const Shape shapes[] = {{"loss", "Loss", {"MSE", "MAE", "CCC + MSE", "CCC + MAE"}},
                          {"augmentation", "Augmentation", {"No", "SSA", "CSA"}},
                          {"multitask", "Learning Scheme", {"Independent", "Multi-task"}}};
  std::ostringstream detail;
  for (const auto& s : shapes) {
    const json t = nn::read_json(out / "ablations" / (std::string(s.study) + ".json"));
    if (t.at("columns") != json::array({s.header, "arousal", "valence"})) o.fail(std::string(s.study) + " columns");
    std::vector<std::string> labels;
    for (const auto& r : t.at("rows")) {
      labels.push_back(r.at("name").get<std::string>());
      for (const char* k : {"arousal", "valence"}) {
        const double v = r.at(k).get<double>();
        if (!std::isfinite(v) || std::abs(v) > 1.0) o.fail(std::string(s.study) + " value " + k + " not a finite CCC");
      }
    }
    if (labels != s.labels) o.fail(std::string(s.study) + " rows differ from the expected variants");
    if (!fs::exists(out / "ablations" / (std::string(s.study) + ".txt"))) o.fail(std::string(s.study) + ".txt missing");
    detail << (detail.tellp() > 0 ? ", " : "") << s.study << " " << labels.size() << "x3";
  }
  if (o.passed) o.detail = detail.str() + " tables, all values finite";
  return o;
}

Outcome check_determinism(const Pipeline& p, const fs::path& first, const fs::path& second) {
  Outcome o;
  const std::string e = run_pipeline(p, second);
  if (!e.empty()) {
    o.fail("rerun failed: " + e);
    return o;
  }
  std::size_t files = 0;
  for (const char* part : {"encoders", "representations", "fusions", "report"}) {
    const auto a = testing::snapshot(first / part), b = testing::snapshot(second / part);
    files += a.size();
    if (a.empty()) o.fail(std::string(part) + " is empty");
    if (a.size() != b.size()) {
      o.fail(std::string(part) + ": file sets differ");
      continue;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].first != b[i].first) o.fail(std::string(part) + ": file sets differ");
      else if (a[i].second != b[i].second) o.fail(std::string(part) + "/" + a[i].first + " differs");
    }
  }
  if (o.passed) o.detail = std::to_string(files) + " checkpoint, representation, fusion and report files byte-identical";
  return o;
}

}  // namespace

int main() {
  selftest::Options opts;
  opts.seeds_per_layer = 20;
  opts.svr_instances = 50;
  opts.augmentation_cases = 100;

  report("metric oracle suite", suite_outcome(selftest::metric_suite(opts), kMetricBudgetS));
  report("gradient suite", suite_outcome(selftest::gradient_suite(opts), kGradientBudgetS));
  report("SVR oracle suite", suite_outcome(selftest::svr_suite(opts), kSvrBudgetS));
  report("augmentation/masking invariants", suite_outcome(selftest::augmentation_suite(opts),
                                                           std::numeric_limits<double>::infinity()));

  testing::TempDir root("acceptance");
  Pipeline p;
  Outcome e2e;
  bool pipeline_ok = false;
  try {
    const Timer timer;
    p = prepare(root.path());
    synth::SynthOptions so;
    so.seed = kDataSeed;
    synth::generate(p.data, so);
    const std::string e = run_pipeline(p, root / "run");
    if (!e.empty()) {
      e2e.fail(e);
    } else {
      pipeline_ok = true;
      e2e = check_end_to_end(p, root / "run", timer.seconds());
    }
  } catch (const std::exception& ex) {
    e2e.fail(ex.what());
  }
  report("synthetic end-to-end", e2e);

  Outcome abl;
  try {
    abl = check_ablations(p, root / "ablate");
  } catch (const std::exception& ex) {
    abl.fail(ex.what());
  }
  report("ablation harness parity", abl);

  Outcome det;
  try {
    if (!pipeline_ok) det.fail("first pipeline run failed");
    else det = check_determinism(p, root / "run", root / "rerun");
  } catch (const std::exception& ex) {
    det.fail(ex.what());
  }
  report("determinism", det);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
