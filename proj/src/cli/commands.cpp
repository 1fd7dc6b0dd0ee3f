#include "avf/cli.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "avf/error.hpp"
#include "avf/metrics.hpp"
#include "avf/nn/checkpoint.hpp"
#include "avf/selftest.hpp"
#include "avf/synth.hpp"

namespace avf::cli {

using nlohmann::json;

namespace {

// Runs fn(0..n-1) on up to `jobs` threads and rethrows the first failure in
// index order, so the reported error does not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::string> subdirectories(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

data::DatasetManifest require_manifest(const RunConfig& run) {
  if (run.manifest.empty()) throw DataError("--manifest is required");
  return data::parse_manifest(run.manifest);
}

void require_out(const RunConfig& run) {
  if (run.out.empty()) throw DataError("--out is required");
}

enc::EncoderConfig load_encoder_config(const fs::path& path, const std::optional<std::uint64_t>& seed) {
  enc::EncoderConfig c;
  try {
    c = enc::encoder_config_from_json(nn::read_json(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (seed) c.seed = derive_seed(*seed, "encoder:" + c.name);
  c.validate();
  return c;
}

std::string fmt3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

std::string ccc_summary(const metrics::MetricsReport& r) {
  std::string s;
  for (const char* t : {"arousal", "valence"}) {
    const auto it = r.targets.find(t);
    if (it == r.targets.end()) continue;
    s += (s.empty() ? "" : " ") + std::string(t) + " " + fmt3(it->second.ccc);
  }
  return s.empty() ? "n/a" : s;
}

json history_summary(const enc::History& h) {
  return {{"epochs", h.rows.size()}, {"best_epoch", h.best_epoch}};
}

std::string label_histogram(const std::vector<double>& v, double lo, double hi, int bins) {
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (const double x : v) {
    int b = static_cast<int>((x - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  std::ostringstream os;
  for (int b = 0; b < bins; ++b) {
    const double a = lo + (hi - lo) * b / bins, z = lo + (hi - lo) * (b + 1) / bins;
    os << "    [" << std::setw(6) << fmt3(a) << ", " << std::setw(6) << fmt3(z) << ") " << std::setw(5)
       << counts[static_cast<std::size_t>(b)] << '\n';
  }
  return os.str();
}

fusion::RepresentationTable table_for(const RunConfig& run, const data::DatasetManifest& manifest,
                                      const std::string& name, data::Split split) {
  const fs::path dir = run.out / "representations" / name / data::to_string(split);
  if (fs::exists(dir / "ids.json")) return fusion::load_table(dir);
  const fs::path ckpt = run.out / "encoders" / name;
  if (!fs::exists(ckpt / "index.json")) throw DataError("missing member checkpoint " + ckpt.string());
  const auto model = enc::load_encoder(ckpt);
  auto t = fusion::extract_table(name, *model, manifest, split);
  fusion::save_table(dir, t);
  return t;
}

struct StoredRow {
  std::string dir;
  std::vector<std::string> members;
  metrics::ResultRow row;
  std::vector<std::string> ids;
  std::vector<double> oof_arousal, oof_valence;
  int folds = 5;
};

StoredRow load_row(const fs::path& dir) {
  const json j = nn::read_json(dir / "row.json");
  StoredRow r;
  try {
    r.dir = dir.filename().string();
    r.members = j.at("members").get<std::vector<std::string>>();
    r.row.name = j.at("name").get<std::string>();
    r.row.arousal = j.at("arousal").get<double>();
    r.row.valence = j.at("valence").get<double>();
    r.ids = j.at("oof").at("ids").get<std::vector<std::string>>();
    r.oof_arousal = j.at("oof").at("arousal").get<std::vector<double>>();
    r.oof_valence = j.at("oof").at("valence").get<std::vector<double>>();
    if (j.contains("config")) r.folds = j.at("config").value("folds", 5);
  } catch (const json::exception& e) {
    throw DataError((dir / "row.json").string() + ": " + e.what());
  }
  return r;
}

void sort_rows(std::vector<StoredRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const StoredRow& a, const StoredRow& b) {
    if (a.row.mean() != b.row.mean()) return a.row.mean() > b.row.mean();
    return a.row.name < b.row.name;
  });
}

// Out-of-fold predictions of the single-modal rows, restricted to the ids all
// of them share.
metrics::PccMatrix oof_pcc(const std::vector<StoredRow>& singles, bool arousal) {
  if (singles.empty()) return {};
  std::set<std::string> common(singles.front().ids.begin(), singles.front().ids.end());
  for (const auto& s : singles) {
    std::set<std::string> mine(s.ids.begin(), s.ids.end()), keep;
    std::set_intersection(common.begin(), common.end(), mine.begin(), mine.end(),
                          std::inserter(keep, keep.end()));
    common = std::move(keep);
  }
  std::vector<std::pair<std::string, std::vector<double>>> preds;
  for (const auto& s : singles) {
    const auto& v = arousal ? s.oof_arousal : s.oof_valence;
    std::vector<double> picked;
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      if (common.count(s.ids[i])) picked.push_back(v[i]);
    }
    preds.emplace_back(s.row.name, std::move(picked));
  }
  return metrics::pcc_matrix(preds);
}

}  // namespace

int run_guarded(const Io& io, const std::string& command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    io.err << "avf " << command << ": numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    io.err << "avf " << command << ": " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    io.err << "avf " << command << ": malformed JSON: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    io.err << "avf " << command << ": " << e.what() << '\n';
    return kUsage;
  }
}

// --- validate --------------------------------------------------------------------------

int cmd_validate(const fs::path& manifest_path, const Io& io) {
  const auto m = data::parse_manifest(manifest_path);
  std::map<data::Split, int> per_split;
  std::map<data::Modality, int> per_modality;
  std::map<data::Modality, std::pair<Eigen::Index, std::string>> dims;
  std::vector<double> arousal, valence;
  for (const auto& r : m.records) {
    ++per_split[r.split];
    arousal.push_back(r.arousal);
    valence.push_back(r.valence);
    for (const auto mod : data::kAllModalities) {
      if (!r.has(mod)) continue;
      ++per_modality[mod];
      data::FeatureSequence s;
      try {
        s = m.load(r, mod);
      } catch (const DataError& e) {
        throw DataError("utterance '" + r.utterance_id + "' " + data::to_string(mod) + ": " + e.what());
      }
      // Vectors may differ in length only for waveforms.
      if (mod == data::Modality::audio_wave) continue;
      const auto it = dims.find(mod);
      if (it == dims.end()) {
        dims[mod] = {s.dim(), r.utterance_id};
      } else if (it->second.first != s.dim()) {
        throw DataError("utterance '" + r.utterance_id + "' " + data::to_string(mod) + " has dim " +
                        std::to_string(s.dim()) + ", '" + it->second.second + "' has " +
                        std::to_string(it->second.first));
      }
    }
  }
  io.out << "records: " << m.records.size() << '\n';
  for (const auto s : {data::Split::train, data::Split::validation, data::Split::test}) {
    io.out << "  " << data::to_string(s) << ": " << per_split[s] << '\n';
  }
  io.out << "modalities:\n";
  for (const auto mod : data::kAllModalities) {
    io.out << "  " << data::to_string(mod) << ": " << per_modality[mod];
    if (const auto it = dims.find(mod); it != dims.end()) io.out << " (dim " << it->second.first << ")";
    io.out << '\n';
  }
  const auto& lr = m.label_ranges;
  io.out << "arousal in [" << lr.arousal_min << ", " << lr.arousal_max << "]:\n"
         << label_histogram(arousal, lr.arousal_min, lr.arousal_max, 10);
  io.out << "valence in [" << lr.valence_min << ", " << lr.valence_max << "]:\n"
         << label_histogram(valence, lr.valence_min, lr.valence_max, 10);
  io.out << "ok\n";
  return kOk;
}

// --- train / extract ---------------------------------------------------------------------

metrics::MetricsReport evaluate_encoder(const enc::EncoderModel& model, const data::DatasetManifest& manifest,
                                        data::Split split) {
  auto recs = manifest.in_split(split);
  std::sort(recs.begin(), recs.end(),
            [](const auto* a, const auto* b) { return a->utterance_id < b->utterance_id; });
  const auto mod = enc::modality_of(model.config().arch);
  std::vector<double> pa, ta, pv, tv;
  for (const auto* r : recs) {
    if (!r->has(mod)) continue;
    const auto p = enc::encoder_predict(model, manifest, *r);
    if (p.arousal) pa.push_back(*p.arousal), ta.push_back(r->arousal);
    if (p.valence) pv.push_back(*p.valence), tv.push_back(r->valence);
  }
  metrics::MetricsReport rep;
  rep.n = std::max(pa.size(), pv.size());
  if (pa.size() >= 2) rep.targets["arousal"] = metrics::evaluate_target(pa, ta);
  if (pv.size() >= 2) rep.targets["valence"] = metrics::evaluate_target(pv, tv);
  return rep;
}

int cmd_train(const RunConfig& run, const Io& io) {
  require_out(run);
  if (run.configs.empty()) throw DataError("train needs at least one --config");
  const auto manifest = require_manifest(run);
  std::vector<enc::EncoderConfig> configs;
  std::set<std::string> names;
  for (const auto& p : run.configs) {
    configs.push_back(load_encoder_config(p, run.seed));
    if (!names.insert(configs.back().name).second) {
      throw ConfigError("two configs share the encoder name '" + configs.back().name + "'");
    }
  }
  std::vector<std::string> lines(configs.size());
  parallel_for(configs.size(), run.jobs, [&](std::size_t i) {
    const auto& c = configs[i];
    const auto model = enc::train_encoder(c, manifest, run.precision);
    const fs::path dir = run.out / "encoders" / c.name;
    model->save(dir);
    const auto train = evaluate_encoder(*model, manifest, data::Split::train);
    const auto val = evaluate_encoder(*model, manifest, data::Split::validation);
    json ev = {{"encoder", c.name},
               {"arch", enc::to_string(c.arch)},
               {"precision", enc::to_string(run.precision)},
               {"history", history_summary(model->history())},
               {"train", metrics::to_json(train)},
               {"validation", metrics::to_json(val)}};
    nn::write_json(dir / "evaluation.json", ev);
    lines[i] = c.name + ": best epoch " + std::to_string(model->history().best_epoch) + "; train CCC " +
               ccc_summary(train) + "; validation CCC " + ccc_summary(val) + '\n';
  });
  for (const auto& l : lines) io.out << l;
  return kOk;
}

int cmd_extract(const RunConfig& run, const Io& io) {
  require_out(run);
  const auto manifest = require_manifest(run);
  const auto names = subdirectories(run.out / "encoders");
  if (names.empty()) throw DataError("no trained encoders under " + (run.out / "encoders").string());
  for (const auto& name : names) {
    const auto model = enc::load_encoder(run.out / "encoders" / name);
    for (const auto split : {data::Split::train, data::Split::validation, data::Split::test}) {
      const auto t = fusion::extract_table(name, *model, manifest, split);
      fusion::save_table(run.out / "representations" / name / data::to_string(split), t);
      io.out << name << " " << data::to_string(split) << ": " << t.ids.size() << " x " << t.features.cols()
             << '\n';
    }
  }
  return kOk;
}

// --- fuse / report ---------------------------------------------------------------------------

std::string combination_dir(const std::vector<std::string>& members) {
  std::string s;
  for (const auto& m : members) s += (s.empty() ? "" : "+") + m;
  return s;
}

int cmd_fuse(const RunConfig& run, const Io& io) {
  require_out(run);
  const auto manifest = require_manifest(run);
  fusion::FusionConfig cfg;
  if (run.configs.size() > 1) throw DataError("fuse takes at most one --config");
  if (!run.configs.empty()) cfg = fusion::fusion_config_from_json(nn::read_json(run.configs.front()));
  if (run.seed) cfg.seed = derive_seed(*run.seed, "fusion");
  cfg.jobs = run.jobs;

  const auto encoders = subdirectories(run.out / "encoders");
  std::vector<std::vector<std::string>> combos;
  for (const auto& spec : run.combinations) combos.push_back(fusion::parse_combination(spec));
  if (combos.empty()) {
    if (encoders.empty()) throw DataError("no trained encoders under " + (run.out / "encoders").string());
    for (const auto& e : encoders) combos.push_back({e});
    if (encoders.size() > 1) combos.push_back(encoders);
  }
  // Every member also gets its single-modal row.
  std::vector<std::vector<std::string>> all = combos;
  for (const auto& c : combos) {
    for (const auto& m : c) {
      const std::vector<std::string> single = {m};
      if (std::find(all.begin(), all.end(), single) == all.end()) all.push_back(single);
    }
  }
  std::vector<std::string> members;
  for (const auto& c : all) {
    for (const auto& m : c) {
      if (std::find(members.begin(), members.end(), m) == members.end()) members.push_back(m);
    }
  }
  std::vector<fusion::RepresentationTable> fit_tables, holdout_tables;
  for (const auto& m : members) {
    fit_tables.push_back(table_for(run, manifest, m, cfg.fit_split));
    auto h = table_for(run, manifest, m, fusion::holdout_split(cfg));
    if (!h.ids.empty()) holdout_tables.push_back(std::move(h));
  }

  const auto report = fusion::fuse_evaluate(all, fit_tables, holdout_tables, manifest, cfg);
  for (const auto& res : report.results) {
    const fs::path dir = run.out / "fusions" / combination_dir(res.model.members);
    fusion::save_fusion(dir, res.model);
    json row = fusion::to_json(res);
    row["oof"] = {{"ids", res.fit_ids},
                  {"arousal", res.model.arousal.grid.oof},
                  {"valence", res.model.valence.grid.oof}};
    row["config"] = fusion::to_json(cfg);
    nn::write_json(dir / "row.json", row);
  }
  io.out << metrics::format_table("Fusion (" + std::to_string(cfg.folds) + "-fold CV CCC)", "Combination",
                                  report.rows, true);
  return kOk;
}

int cmd_report(const fs::path& run_dir, const Io& io) {
  std::vector<StoredRow> singles, multis;
  for (const auto& name : subdirectories(run_dir / "fusions")) {
    const fs::path dir = run_dir / "fusions" / name;
    if (!fs::exists(dir / "row.json")) continue;
    auto r = load_row(dir);
    (r.members.size() == 1 ? singles : multis).push_back(std::move(r));
  }
  if (singles.empty() && multis.empty()) {
    throw DataError("no evaluations under " + (run_dir / "fusions").string() + "; run `avf fuse` first");
  }
  sort_rows(singles);
  sort_rows(multis);
  auto rows_of = [](const std::vector<StoredRow>& v) {
    std::vector<metrics::ResultRow> out;
    for (const auto& r : v) out.push_back(r.row);
    return out;
  };
  const int folds = (singles.empty() ? multis : singles).front().folds;
  const std::string cv = " (" + std::to_string(folds) + "-fold CV CCC)";
  const std::string t7 = "Performance of single modal" + cv;
  const std::string t8 = "Performance of multi modal" + cv;
  const std::string text = metrics::format_table(t7, "Single Modal", rows_of(singles), false) + '\n' +
                           metrics::format_table(t8, "Multi Modal", rows_of(multis), true);
  const auto pcc_a = oof_pcc(singles, true);
  const auto pcc_v = oof_pcc(singles, false);
  const json table = {{"single", metrics::table_json(t7, "Single Modal", rows_of(singles), false)},
                      {"multi", metrics::table_json(t8, "Multi Modal", rows_of(multis), true)},
                      {"pcc_arousal", metrics::to_json(pcc_a)},
                      {"pcc_valence", metrics::to_json(pcc_v)}};
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  write_text(out / "table.txt", text);
  nn::write_json(out / "table.json", table);
  write_text(out / "pcc_arousal.csv", metrics::to_csv(pcc_a));
  write_text(out / "pcc_valence.csv", metrics::to_csv(pcc_v));
  io.out << text;
  return kOk;
}

// --- synth / selftest / ablate ---------------------------------------------------------------

int cmd_synth(const SynthCommand& c, const Io& io) {
  if (c.out.empty()) throw DataError("--out is required");
  synth::SynthOptions o;
  o.seed = c.seed;
  o.train = c.train;
  o.validation = c.validation;
  o.wave_length = c.wave_length;
  o.frame_noise = c.frame_noise;
  const auto m = synth::generate(c.out, o);
  io.out << "wrote " << m.records.size() << " utterances to " << (c.out / "manifest.jsonl").string() << '\n';
  return kOk;
}

int cmd_selftest(const SelftestCommand& c, const Io& io) {
  selftest::Options o;
  o.seed = c.seed;
  o.inject_gradient_fault = c.inject_gradient_fault;
  bool ok = true;
  for (const auto& r : selftest::run_all(o)) {
    io.out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << std::right
           << " max error " << std::setprecision(3) << std::scientific << r.max_error << std::defaultfloat
           << ", " << r.cases << " cases, " << std::fixed << std::setprecision(2) << r.seconds << " s"
           << std::defaultfloat << std::setprecision(6) << ": " << r.detail << '\n';
    if (!r.passed) {
      io.err << "selftest suite " << r.name << " failed: " << r.detail << '\n';
      ok = false;
    }
  }
  return ok ? kOk : kNumerical;
}

std::vector<AblationTable> run_ablations(const enc::EncoderConfig& base, const data::DatasetManifest& manifest,
                                         enc::Precision precision, int jobs) {
  struct Variant {
    std::string study, label;
    enc::EncoderConfig config;
  };
  std::vector<Variant> variants;
  const std::pair<nn::LossKind, const char*> losses[] = {{nn::LossKind::mse, "MSE"},
                                                         {nn::LossKind::mae, "MAE"},
                                                         {nn::LossKind::ccc_plus_mse, "CCC + MSE"},
                                                         {nn::LossKind::ccc_plus_mae, "CCC + MAE"}};
  for (const auto& [kind, label] : losses) {
    auto c = base;
    c.loss.kind = kind;
    variants.push_back({"loss", label, c});
  }
  const std::pair<enc::Augmentation, const char*> augs[] = {
      {enc::Augmentation::none, "No"}, {enc::Augmentation::ssa, "SSA"}, {enc::Augmentation::csa, "CSA"}};
  for (const auto& [aug, label] : augs) {
    auto c = base;
    c.augmentation = aug;
    variants.push_back({"augmentation", label, c});
  }
  for (const auto head : {enc::Head::independent_arousal, enc::Head::independent_valence, enc::Head::multitask}) {
    auto c = base;
    c.head = head;
    variants.push_back({"multitask", head == enc::Head::multitask ? "Multi-task" : "Independent", c});
  }

  // Identical configurations (the base appears in every study) train once.
  std::vector<std::string> keys;
  std::map<std::string, std::size_t> slot;
  for (auto& v : variants) {
    v.config.name = base.name;
    const std::string key = enc::to_json(v.config).dump();
    if (slot.emplace(key, keys.size()).second) keys.push_back(key);
  }
  std::vector<enc::HistoryRow> best(keys.size());
  parallel_for(keys.size(), jobs, [&](std::size_t i) {
    const auto c = enc::encoder_config_from_json(json::parse(keys[i]));
    const auto model = enc::train_encoder(c, manifest, precision);
    const auto& h = model->history();
    if (h.best_epoch < 1) throw NumericalError("ablation needs epochs >= 1 and a validation split");
    best[i] = h.rows[static_cast<std::size_t>(h.best_epoch - 1)];
  });

  auto score = [](const std::optional<double>& v, const std::string& what) {
    if (!v) throw NumericalError("ablation: no validation CCC for " + what);
    return *v;
  };
  std::vector<AblationTable> tables = {
      {"loss", "Performance of different loss functions (validation CCC)", "Loss", {}},
      {"augmentation", "Performance of different data augmentations (validation CCC)", "Augmentation", {}},
      {"multitask", "Performance on independent and multi-task learning (validation CCC)", "Learning Scheme", {}}};
  for (auto& t : tables) {
    for (const auto& v : variants) {
      if (v.study != t.study) continue;
      const auto& h = best[slot.at(enc::to_json(v.config).dump())];
      if (v.config.head == enc::Head::independent_valence) {
        t.rows.back().valence = score(h.val_ccc_valence, v.label + " valence");
        continue;
      }
      metrics::ResultRow row{v.label, score(h.val_ccc_arousal, v.label + " arousal"), 0.0};
      if (v.config.head == enc::Head::multitask) row.valence = score(h.val_ccc_valence, v.label + " valence");
      t.rows.push_back(row);
    }
  }
  return tables;
}

int cmd_ablate(const RunConfig& run, const Io& io) {
  require_out(run);
  const auto manifest = require_manifest(run);
  if (run.configs.size() > 1) throw DataError("ablate takes at most one --config");
  enc::EncoderConfig base = enc::EncoderConfig::defaults(enc::Arch::vis_lstm_attn);
  if (!run.configs.empty()) base = load_encoder_config(run.configs.front(), std::nullopt);
  if (run.seed) base.seed = derive_seed(*run.seed, "ablation");
  base.validate();
  const fs::path dir = run.out / "ablations";
  fs::create_directories(dir);
  for (const auto& t : run_ablations(base, manifest, run.precision, run.jobs)) {
    const std::string text = metrics::format_table(t.title, t.label_header, t.rows, false);
    write_text(dir / (t.study + ".txt"), text);
    nn::write_json(dir / (t.study + ".json"), metrics::table_json(t.title, t.label_header, t.rows, false));
    io.out << text << '\n';
  }
  return kOk;
}

}  // namespace avf::cli
