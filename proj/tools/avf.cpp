#include <CLI11.hpp>

#include <iostream>

#include "avf/cli.hpp"

namespace {

using avf::cli::Io;
using avf::cli::RunConfig;

struct Flags {
  std::string manifest, out, precision = "f32";
  std::vector<std::string> configs, combinations;
  std::uint64_t seed = 0;
  int jobs = 1;
};

RunConfig to_run(const Flags& f, const CLI::Option* seed) {
  RunConfig r;
  r.manifest = f.manifest;
  r.out = f.out;
  r.configs.assign(f.configs.begin(), f.configs.end());
  r.combinations = f.combinations;
  if (seed->count() > 0) r.seed = f.seed;
  r.jobs = f.jobs;
  r.precision = avf::enc::precision_from_string(f.precision);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal arousal/valence regression: encoders, SVR fusion, CCC evaluation"};
  app.require_subcommand(1);
  Flags f;
  avf::cli::SynthCommand synth;
  avf::cli::SelftestCommand selftest;
  std::uint64_t selftest_seed = 0;

  auto common = [&](CLI::App* sub, bool needs_manifest) {
    auto* m = sub->add_option("--manifest", f.manifest, "JSON-lines dataset manifest");
    if (needs_manifest) m->required();
    sub->add_option("--jobs", f.jobs, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    sub->add_option("--precision", f.precision, "Training precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* validate = app.add_subcommand("validate", "Check a manifest and every referenced tensor");
  validate->add_option("--manifest", f.manifest, "JSON-lines dataset manifest")->required();

  auto* train = app.add_subcommand("train", "Train one encoder per --config");
  common(train, true);
  train->add_option("--out", f.out, "Run directory")->required();
  train->add_option("--config", f.configs, "Encoder config JSON (repeatable)")->required();
  auto* train_seed = train->add_option("--seed", f.seed, "Global seed; overrides config seeds");

  auto* extract = app.add_subcommand("extract", "Write representation tables of every trained encoder");
  common(extract, true);
  extract->add_option("--out", f.out, "Run directory")->required();

  auto* fuse = app.add_subcommand("fuse", "SVR late fusion with grid-searched C under grouped k-fold CV");
  common(fuse, true);
  fuse->add_option("--out", f.out, "Run directory")->required();
  fuse->add_option("--config", f.configs, "Fusion config JSON");
  fuse->add_option("--combination", f.combinations, "Members joined by '+', e.g. VisModel2+AudModel2");
  auto* fuse_seed = fuse->add_option("--seed", f.seed, "Global seed for the CV folds");

  auto* report = app.add_subcommand("report", "Aggregate fusion rows into tables and PCC matrices");
  report->add_option("--out", f.out, "Run directory")->required();

  auto* st = app.add_subcommand("selftest", "Gradient, metric, SVR and augmentation property suites");
  st->add_option("--seed", selftest_seed, "Seed of the randomized cases");
  st->add_flag("--inject-fault", selftest.inject_gradient_fault, "Corrupt one analytic gradient")->group("");

  auto* sy = app.add_subcommand("synth", "Write a synthetic dataset with planted signal");
  sy->add_option("--out", synth.out, "Output directory")->required();
  sy->add_option("--seed", synth.seed, "Generator seed");
  sy->add_option("--train", synth.train, "Training utterances")->check(CLI::PositiveNumber);
  sy->add_option("--validation", synth.validation, "Validation utterances")->check(CLI::NonNegativeNumber);
  sy->add_option("--wave-length", synth.wave_length, "Samples per waveform; 0 omits waveforms")
      ->check(CLI::NonNegativeNumber);
  sy->add_option("--frame-noise", synth.frame_noise, "Std of per-frame nuisance noise")
      ->check(CLI::NonNegativeNumber);

  auto* ablate = app.add_subcommand("ablate", "Loss, augmentation and multi-task studies of one encoder");
  common(ablate, true);
  ablate->add_option("--out", f.out, "Run directory")->required();
  ablate->add_option("--config", f.configs, "Base encoder config JSON");
  auto* ablate_seed = ablate->add_option("--seed", f.seed, "Global seed; overrides the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : avf::cli::kUsage;
  }

  const Io io{std::cout, std::cerr};
  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  return avf::cli::run_guarded(io, name, [&]() -> int {
    if (sub == validate) return avf::cli::cmd_validate(f.manifest, io);
    if (sub == train) return avf::cli::cmd_train(to_run(f, train_seed), io);
    if (sub == extract) return avf::cli::cmd_extract(to_run(f, train_seed), io);
    if (sub == fuse) return avf::cli::cmd_fuse(to_run(f, fuse_seed), io);
    if (sub == report) return avf::cli::cmd_report(f.out, io);
    if (sub == st) {
      selftest.seed = selftest_seed;
      return avf::cli::cmd_selftest(selftest, io);
    }
    if (sub == sy) return avf::cli::cmd_synth(synth, io);
    return avf::cli::cmd_ablate(to_run(f, ablate_seed), io);
  });
}
