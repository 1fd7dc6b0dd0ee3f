#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "avf/cli.hpp"
#include "avf/error.hpp"
#include "avf/nn/checkpoint.hpp"
#include "avf/synth.hpp"
#include "test_util.hpp"

using namespace avf;
namespace fs = std::filesystem;

namespace {

struct Capture {
  std::ostringstream out, err;
  cli::Io io() { return {out, err}; }
};

template <typename F>
int guarded(Capture& c, const std::string& name, F&& body) {
  return cli::run_guarded(c.io(), name, std::forward<F>(body));
}

synth::SynthOptions small_synth() {
  synth::SynthOptions o;
  o.train = 30;
  o.validation = 10;
  o.visual_dim = 12;
  o.audio_dim = 10;
  o.text_dim = 8;
  o.min_frames = 6;
  o.max_frames = 16;
  o.seed = 4;
  return o;
}

enc::EncoderConfig small_encoder(const std::string& name, enc::Arch arch, int epochs) {
  auto c = enc::EncoderConfig::defaults(arch);
  c.name = name;
  c.epochs = epochs;
  c.batch_size = 8;
  c.downsample = 1;
  c.seed = 3;
  if (arch == enc::Arch::vis_cnn1d) {
    c.input_dim = 12;
    c.seq_len = 16;
    c.conv_channels = 4;
    c.fc_hidden = 8;
  } else {
    c.input_dim = 10;
    c.mlp_hidden = {8};
    c.feature_select = 0;
  }
  return c;
}

fs::path write_config(const fs::path& dir, const enc::EncoderConfig& c) {
  const fs::path p = dir / (c.name + ".json");
  nn::write_json(p, enc::to_json(c));
  return p;
}

// Trains Vis and Aud, then fuses with small folds.
struct Pipeline {
  testing::TempDir dir{"cli_pipeline"};
  data::DatasetManifest manifest;
  cli::RunConfig run;

  explicit Pipeline(int epochs) {
    manifest = synth::generate(dir / "data", small_synth());
    run.manifest = dir / "data" / "manifest.jsonl";
    run.out = dir / "run";
    run.configs = {write_config(dir.path(), small_encoder("Vis", enc::Arch::vis_cnn1d, epochs)),
                   write_config(dir.path(), small_encoder("Aud", enc::Arch::aud_mlp, epochs))};
  }

  cli::RunConfig fuse_run(const std::vector<std::string>& combinations) const {
    cli::RunConfig f = run;
    const fs::path cfg = dir / "fusion.json";
    nn::write_json(cfg, {{"folds", 3}, {"grid", {0.3, 3.0}}});
    f.configs = {cfg};
    f.combinations = combinations;
    return f;
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("validate reports counts and names bad inputs") {
  testing::TempDir dir("cli_validate");
  synth::generate(dir.path(), small_synth());
  {
    Capture c;
    CHECK(guarded(c, "validate", [&] { return cli::cmd_validate(dir / "manifest.jsonl", c.io()); }) == 0);
    CHECK(c.out.str().find("records: 40") != std::string::npos);
    CHECK(c.out.str().find("train: 30") != std::string::npos);
    CHECK(c.out.str().find("validation: 10") != std::string::npos);
  }

  // Out-of-range label on one record.
  std::ifstream in(dir / "manifest.jsonl");
  std::vector<nlohmann::json> lines;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) lines.push_back(nlohmann::json::parse(l));
  }
  in.close();
  std::size_t rec = 0;
  while (!lines[rec].contains("utterance_id")) ++rec;
  const std::string id = lines[rec]["utterance_id"];
  {
    auto bad = lines;
    bad[rec]["arousal"] = 1.5;
    std::ofstream o(dir / "bad.jsonl");
    for (const auto& j : bad) o << j.dump() << '\n';
  }
  Capture c1;
  CHECK(guarded(c1, "validate", [&] { return cli::cmd_validate(dir / "bad.jsonl", c1.io()); }) != 0);
  CHECK(c1.err.str().find(id) != std::string::npos);

  // A NaN inside one referenced tensor.
  const std::string file = lines[rec]["visual"];
  auto bytes = testing::read_bytes(dir / file);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - sizeof(float), &nan, sizeof(float));
  testing::write_bytes(dir / file, bytes);
  Capture c2;
  CHECK(guarded(c2, "validate", [&] { return cli::cmd_validate(dir / "manifest.jsonl", c2.io()); }) != 0);
  CHECK(c2.err.str().find(fs::path(file).filename().string()) != std::string::npos);
}

TEST_CASE("train with zero epochs writes the initial weights") {
  Pipeline p(0);
  Capture c;
  REQUIRE(guarded(c, "train", [&] { return cli::cmd_train(p.run, c.io()); }) == 0);
  // Reference: the untrained model saved directly.
  testing::TempDir ref("cli_init");
  const auto init = enc::train_encoder(small_encoder("Vis", enc::Arch::vis_cnn1d, 0), p.manifest, enc::Precision::f32);
  init->save(ref.path());
  for (const auto& [rel, bytes] : testing::snapshot(ref.path())) {
    CHECK(testing::read_bytes(p.run.out / "encoders" / "Vis" / rel) == bytes);
  }
  CHECK(fs::exists(p.run.out / "encoders" / "Vis" / "evaluation.json"));
}

TEST_CASE("train is reproducible and records its history") {
  Pipeline p(3);
  Capture c;
  REQUIRE(guarded(c, "train", [&] { return cli::cmd_train(p.run, c.io()); }) == 0);
  const auto first = testing::snapshot(p.run.out);
  const auto loaded = enc::load_encoder(p.run.out / "encoders" / "Vis");
  CHECK(loaded->history().rows.size() == 3);
  fs::remove_all(p.run.out);
  cli::RunConfig twice = p.run;
  twice.jobs = 2;
  REQUIRE(guarded(c, "train", [&] { return cli::cmd_train(twice, c.io()); }) == 0);
  CHECK(testing::snapshot(p.run.out) == first);

  // Duplicate names are rejected.
  cli::RunConfig dup = p.run;
  dup.configs = {p.run.configs[0], p.run.configs[0]};
  Capture e;
  CHECK(guarded(e, "train", [&] { return cli::cmd_train(dup, e.io()); }) == cli::kUsage);
  CHECK(e.err.str().find("Vis") != std::string::npos);
}

TEST_CASE("fuse and report") {
  Pipeline p(2);
  Capture c;
  REQUIRE(guarded(c, "train", [&] { return cli::cmd_train(p.run, c.io()); }) == 0);

  SUBCASE("single-member combination") {
    REQUIRE(guarded(c, "fuse", [&] { return cli::cmd_fuse(p.fuse_run({"Aud"}), c.io()); }) == 0);
    CHECK(fs::exists(p.run.out / "fusions" / "Aud" / "row.json"));
    CHECK_FALSE(fs::exists(p.run.out / "fusions" / "Vis"));
  }

  SUBCASE("rows, tables and pcc") {
    REQUIRE(guarded(c, "fuse", [&] { return cli::cmd_fuse(p.fuse_run({"Vis+Aud"}), c.io()); }) == 0);
    const auto row = nn::read_json(p.run.out / "fusions" / "Vis+Aud" / "row.json");
    CHECK(row["members"] == nlohmann::json::array({"Vis", "Aud"}));
    CHECK(row["oof"]["ids"].size() == 30);
    CHECK(row["config"]["folds"] == 3);
    const auto model = fusion::load_fusion(p.run.out / "fusions" / "Vis+Aud");
    CHECK(model.members == std::vector<std::string>{"Vis", "Aud"});

    Capture r;
    REQUIRE(guarded(r, "report", [&] { return cli::cmd_report(p.run.out, r.io()); }) == 0);
    CHECK(r.out.str().find("3-fold CV CCC") != std::string::npos);
    const auto table = nn::read_json(p.run.out / "report" / "table.json");
    CHECK(table["single"]["rows"].size() == 2);
    CHECK(table["multi"]["rows"].size() == 1);
    CHECK(table["multi"]["columns"].size() == 4);
    for (const char* key : {"pcc_arousal", "pcc_valence"}) {
      std::ifstream csv(p.run.out / "report" / (std::string(key) + ".csv"));
      std::string header;
      std::getline(csv, header);
      CHECK((header == "model,Aud,Vis" || header == "model,Vis,Aud"));
      int lines = 0;
      for (std::string l; std::getline(csv, l);) ++lines;
      CHECK(lines == 2);
    }
    const auto before = testing::snapshot(p.run.out / "report");
    REQUIRE(guarded(r, "report", [&] { return cli::cmd_report(p.run.out, r.io()); }) == 0);
    CHECK(testing::snapshot(p.run.out / "report") == before);

    // Fusion reruns are byte-identical.
    const auto fusions = testing::snapshot(p.run.out / "fusions");
    fs::remove_all(p.run.out / "fusions");
    REQUIRE(guarded(c, "fuse", [&] { return cli::cmd_fuse(p.fuse_run({"Vis+Aud"}), c.io()); }) == 0);
    CHECK(testing::snapshot(p.run.out / "fusions") == fusions);
  }

  SUBCASE("unknown member") {
    Capture e;
    CHECK(guarded(e, "fuse", [&] { return cli::cmd_fuse(p.fuse_run({"Vis+Nope"}), e.io()); }) == cli::kUsage);
    CHECK(e.err.str().find("Nope") != std::string::npos);
  }
}

TEST_CASE("report needs fusion rows") {
  testing::TempDir dir("cli_empty");
  Capture c;
  CHECK(guarded(c, "report", [&] { return cli::cmd_report(dir.path(), c.io()); }) == cli::kUsage);
  CHECK(c.err.str().find("avf fuse") != std::string::npos);
}

TEST_CASE("selftest passes and catches an injected gradient fault") {
  Capture ok;
  CHECK(guarded(ok, "selftest", [&] { return cli::cmd_selftest({}, ok.io()); }) == 0);
  CHECK(ok.out.str().find("FAIL") == std::string::npos);
  Capture bad;
  cli::SelftestCommand st;
  st.inject_gradient_fault = true;
  CHECK(guarded(bad, "selftest", [&] { return cli::cmd_selftest(st, bad.io()); }) != 0);
  CHECK(bad.out.str().find("FAIL nncore.gradients") != std::string::npos);
}

TEST_CASE("combination directories") {
  CHECK(cli::combination_dir({"VisModel2", "AudModel2"}) == "VisModel2+AudModel2");
  CHECK(cli::combination_dir({"TextModel"}) == "TextModel");
}

}  // TEST_SUITE
