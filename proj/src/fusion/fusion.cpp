#include <algorithm>
#include <map>

#include "avf/error.hpp"
#include "avf/fusion.hpp"
#include "avf/nn/checkpoint.hpp"

namespace avf::fusion {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::size_t> RepresentationTable::row_of(const std::string& id) const {
  const auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

RepresentationTable extract_table(const std::string& name, const enc::EncoderModel& model,
                                  const data::DatasetManifest& manifest, data::Split split) {
  auto recs = manifest.in_split(split);
  std::sort(recs.begin(), recs.end(),
            [](const auto* a, const auto* b) { return a->utterance_id < b->utterance_id; });
  const auto m = enc::modality_of(model.config().arch);
  RepresentationTable t;
  t.encoder = name;
  std::vector<std::vector<double>> rows;
  for (const auto* r : recs) {
    if (!r->has(m)) continue;
    t.ids.push_back(r->utterance_id);
    rows.push_back(enc::extract_representation(model, manifest, *r));
  }
  t.features.resize(static_cast<Eigen::Index>(rows.size()), model.representation_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      t.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return t;
}

void save_table(const fs::path& dir, const RepresentationTable& t) {
  fs::create_directories(dir);
  nn::write_json(dir / "ids.json", {{"encoder", t.encoder}, {"ids", t.ids}});
  if (t.features.rows() > 0) data::write_feature_tensor(dir / "features.aff1", data::FeatureSequence(t.features));
}

RepresentationTable load_table(const fs::path& dir) {
  const json j = nn::read_json(dir / "ids.json");
  RepresentationTable t;
  t.encoder = j.at("encoder").get<std::string>();
  t.ids = j.at("ids").get<std::vector<std::string>>();
  if (!t.ids.empty()) {
    t.features = data::read_feature_tensor(dir / "features.aff1").data;
    if (t.features.rows() != static_cast<Eigen::Index>(t.ids.size())) {
      throw DataError(dir.string() + ": representation rows do not match ids");
    }
  }
  return t;
}

json to_json(const FusionConfig& c) {
  return {{"fit_split", data::to_string(c.fit_split)},
          {"grid", c.grid},
          {"epsilon", c.epsilon},
          {"gamma", c.gamma},
          {"tolerance", c.tolerance},
          {"zscore", c.zscore},
          {"folds", c.folds},
          {"seed", c.seed}};
}

FusionConfig fusion_config_from_json(const json& j) {
  FusionConfig c;
  try {
    if (j.contains("fit_split")) c.fit_split = data::split_from_string(j["fit_split"].get<std::string>());
    if (j.contains("grid")) c.grid = j["grid"].get<std::vector<double>>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("tolerance")) c.tolerance = j["tolerance"].get<double>();
    if (j.contains("zscore")) c.zscore = j["zscore"].get<bool>();
    if (j.contains("folds")) c.folds = j["folds"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fusion config: ") + e.what());
  }
  if (c.grid.empty() || std::any_of(c.grid.begin(), c.grid.end(), [](double v) { return !(v > 0.0); })) {
    throw ConfigError("fusion config: grid must be non-empty and positive");
  }
  if (c.folds < 2) throw ConfigError("fusion config: folds must be >= 2");
  return c;
}

Eigen::RowVectorXd FusionModel::features(const std::vector<std::span<const double>>& reps) const {
  if (reps.size() != members.size()) throw ConfigError("fusion: expected one representation per member");
  Eigen::RowVectorXd x(dim());
  Eigen::Index o = 0;
  for (std::size_t m = 0; m < reps.size(); ++m) {
    if (static_cast<Eigen::Index>(reps[m].size()) != member_dims[m]) {
      throw ConfigError("fusion: member '" + members[m] + "' representation has the wrong dimension");
    }
    for (const double v : reps[m]) x(o++) = v;
  }
  return (x - mean).cwiseQuotient(scale);
}

std::pair<double, double> fusion_predict(const FusionModel& m, const std::vector<std::span<const double>>& reps) {
  const Eigen::RowVectorXd x = m.features(reps);
  const std::span<const double> s(x.data(), static_cast<std::size_t>(x.size()));
  return {svr_predict(m.arousal.svr, s), svr_predict(m.valence.svr, s)};
}

data::Split holdout_split(const FusionConfig& cfg) {
  return cfg.fit_split == data::Split::train ? data::Split::validation : data::Split::test;
}

data::FoldAssignment fusion_folds(const data::DatasetManifest& manifest, const FusionConfig& cfg) {
  std::vector<std::string> ids, groups;
  for (const auto* r : manifest.in_split(cfg.fit_split)) {
    ids.push_back(r->utterance_id);
    groups.push_back(r->video_id);
  }
  return data::kfold_split(ids, groups, cfg.folds, derive_seed(cfg.seed, "folds"));
}

namespace {

// Concatenated member representations for `ids`, in member order.
Matrix concat(const std::vector<const RepresentationTable*>& tables, const std::vector<std::string>& ids) {
  Eigen::Index d = 0;
  for (const auto* t : tables) d += t->features.cols();
  Matrix X(static_cast<Eigen::Index>(ids.size()), d);
  Eigen::Index o = 0;
  for (const auto* t : tables) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto r = t->row_of(ids[i]);
      if (!r) throw DataError("record '" + ids[i] + "' has no '" + t->encoder + "' representation");
      X.block(static_cast<Eigen::Index>(i), o, 1, t->features.cols()) =
          t->features.row(static_cast<Eigen::Index>(*r));
    }
    o += t->features.cols();
  }
  return X;
}

std::map<std::string, const data::UtteranceRecord*> by_id(const data::DatasetManifest& m) {
  std::map<std::string, const data::UtteranceRecord*> out;
  for (const auto& r : m.records) out[r.utterance_id] = &r;
  return out;
}

}  // namespace

FusionResult fuse_train(const std::vector<const RepresentationTable*>& fit_tables,
                        const std::vector<const RepresentationTable*>& holdout_tables,
                        const data::DatasetManifest& manifest, const FusionConfig& cfg) {
  if (fit_tables.empty()) throw ConfigError("fuse_train: empty combination");
  const auto index = by_id(manifest);
  std::vector<std::string> ids;
  for (const auto* r : manifest.in_split(cfg.fit_split)) ids.push_back(r->utterance_id);
  std::sort(ids.begin(), ids.end());

  FusionResult res;
  FusionModel& model = res.model;
  for (const auto* t : fit_tables) {
    model.members.push_back(t->encoder);
    model.member_dims.push_back(t->features.cols());
  }
  Matrix X = concat(fit_tables, ids);
  const auto n = static_cast<double>(X.rows());
  model.mean = X.colwise().mean();
  model.scale = Eigen::RowVectorXd::Ones(X.cols());
  if (cfg.zscore) {
    model.scale = ((X.rowwise() - model.mean).array().square().colwise().sum() / n).sqrt();
    for (Eigen::Index j = 0; j < model.scale.size(); ++j) {
      if (!(model.scale(j) > 0.0)) model.scale(j) = 1.0;
    }
  } else {
    model.mean.setZero();
  }
  X = ((X.rowwise() - model.mean).array().rowwise() / model.scale.array()).matrix();

  const auto folds = fusion_folds(manifest, cfg);
  std::vector<int> fold_of_row;
  std::vector<double> ya, yv;
  for (const auto& id : ids) {
    fold_of_row.push_back(folds.fold_of.at(id));
    ya.push_back(index.at(id)->arousal);
    yv.push_back(index.at(id)->valence);
  }
  SvrParams base;
  base.epsilon = cfg.epsilon;
  base.gamma = cfg.gamma;
  base.tolerance = cfg.tolerance;

  auto fit = [&](const std::vector<double>& y) {
    TargetFit tf;
    tf.grid = grid_search_c(X, y, cfg.grid, fold_of_row, cfg.folds, base, cfg.jobs);
    SvrParams p = base;
    p.C = tf.grid.chosen_c;
    tf.svr = svr_train(X, y, p);
    return tf;
  };
  model.arousal = fit(ya);
  model.valence = fit(yv);
  res.cv = {combination_name(model.members), model.arousal.grid.scores[model.arousal.grid.chosen],
            model.valence.grid.scores[model.valence.grid.chosen]};
  res.fit_ids = ids;

  if (!holdout_tables.empty()) {
    std::vector<std::string> vids;
    for (const auto* r : manifest.in_split(holdout_split(cfg))) vids.push_back(r->utterance_id);
    std::sort(vids.begin(), vids.end());
    if (vids.size() >= 2) {
      const Matrix V = concat(holdout_tables, vids);
      std::vector<double> pa, pv, ta, tv;
      for (Eigen::Index i = 0; i < V.rows(); ++i) {
        std::vector<std::span<const double>> reps;
        Eigen::Index o = 0;
        for (const auto d : model.member_dims) {
          reps.emplace_back(V.data() + i * V.cols() + o, static_cast<std::size_t>(d));
          o += d;
        }
        const auto [a, v] = fusion_predict(model, reps);
        pa.push_back(a);
        pv.push_back(v);
        ta.push_back(index.at(vids[static_cast<std::size_t>(i)])->arousal);
        tv.push_back(index.at(vids[static_cast<std::size_t>(i)])->valence);
      }
      res.holdout = metrics::ResultRow{res.cv.name, metrics::ccc(pa, ta), metrics::ccc(pv, tv)};
    }
  }
  return res;
}

namespace {

json svr_json(const SvrModel& m) {
  // Support vectors are z-scored doubles; JSON keeps them exact.
  json sv = json::array();
  for (Eigen::Index i = 0; i < m.support_vectors.rows(); ++i) {
    sv.push_back(std::vector<double>(m.support_vectors.row(i).begin(), m.support_vectors.row(i).end()));
  }
  std::vector<double> coefs(m.dual_coefs.data(), m.dual_coefs.data() + m.dual_coefs.size());
  return {{"support_vectors", sv},   {"support", m.support},  {"dual_coefs", coefs},
          {"bias", m.bias},          {"gamma", m.gamma},      {"C", m.C},
          {"epsilon", m.epsilon},    {"objective", m.objective}, {"iterations", m.iterations}};
}

SvrModel svr_from_json(const fs::path& dir, const json& j) {
  SvrModel m;
  const auto coefs = j.at("dual_coefs").get<std::vector<double>>();
  m.dual_coefs = Eigen::Map<const Eigen::VectorXd>(coefs.data(), static_cast<Eigen::Index>(coefs.size()));
  m.support = j.at("support").get<std::vector<std::size_t>>();
  m.bias = j.at("bias").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.C = j.at("C").get<double>();
  m.epsilon = j.at("epsilon").get<double>();
  m.objective = j.value("objective", 0.0);
  m.iterations = j.value("iterations", std::size_t{0});
  const auto sv = j.at("support_vectors").get<std::vector<std::vector<double>>>();
  const auto d = sv.empty() ? 0 : static_cast<Eigen::Index>(sv.front().size());
  m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), d);
  for (std::size_t i = 0; i < sv.size(); ++i) {
    if (static_cast<Eigen::Index>(sv[i].size()) != d) throw DataError(dir.string() + ": ragged support vectors");
    for (Eigen::Index k = 0; k < d; ++k) m.support_vectors(static_cast<Eigen::Index>(i), k) = sv[i][static_cast<std::size_t>(k)];
  }
  if (m.support_vectors.rows() != m.dual_coefs.size()) {
    throw DataError(dir.string() + ": support vector count does not match dual coefficients");
  }
  return m;
}

json grid_json(const GridSearchResult& g) {
  return {{"candidates", g.candidates}, {"scores", g.scores}, {"chosen_c", g.chosen_c}};
}

}  // namespace

void save_fusion(const fs::path& dir, const FusionModel& m) {
  fs::create_directories(dir);
  std::vector<double> mean(m.mean.data(), m.mean.data() + m.mean.size());
  std::vector<double> scale(m.scale.data(), m.scale.data() + m.scale.size());
  json j = {{"members", m.members},
            {"member_dims", m.member_dims},
            {"mean", mean},
            {"scale", scale},
            {"arousal", {{"svr", svr_json(m.arousal.svr)}, {"grid", grid_json(m.arousal.grid)}}},
            {"valence", {{"svr", svr_json(m.valence.svr)}, {"grid", grid_json(m.valence.grid)}}}};
  nn::write_json(dir / "fusion.json", j);
}

FusionModel load_fusion(const fs::path& dir) {
  const json j = nn::read_json(dir / "fusion.json");
  FusionModel m;
  m.members = j.at("members").get<std::vector<std::string>>();
  m.member_dims = j.at("member_dims").get<std::vector<Eigen::Index>>();
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  m.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.scale = Eigen::Map<const Eigen::RowVectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  for (auto [tf, key] : {std::pair{&m.arousal, "arousal"}, std::pair{&m.valence, "valence"}}) {
    const json& t = j.at(key);
    tf->svr = svr_from_json(dir, t.at("svr"));
    tf->grid.candidates = t.at("grid").at("candidates").get<std::vector<double>>();
    tf->grid.scores = t.at("grid").at("scores").get<std::vector<double>>();
    tf->grid.chosen_c = t.at("grid").at("chosen_c").get<double>();
    const auto it = std::find(tf->grid.candidates.begin(), tf->grid.candidates.end(), tf->grid.chosen_c);
    tf->grid.chosen = static_cast<std::size_t>(it - tf->grid.candidates.begin());
  }
  return m;
}

std::vector<std::string> parse_combination(const std::string& spec) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("combination '" + spec + "' has an empty member");
    out.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (const char ch : spec) {
    if (ch == '+') flush();
    else cur += ch;
  }
  flush();
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (out[i] == out[j]) throw ConfigError("combination '" + spec + "' repeats member '" + out[i] + "'");
    }
  }
  return out;
}

std::string combination_name(const std::vector<std::string>& members) {
  std::string s;
  for (const auto& m : members) s += (s.empty() ? "" : " + ") + m;
  return s;
}

FusionReport fuse_evaluate(const std::vector<std::vector<std::string>>& combinations,
                           const std::vector<RepresentationTable>& fit_tables,
                           const std::vector<RepresentationTable>& holdout_tables,
                           const data::DatasetManifest& manifest, const FusionConfig& cfg) {
  auto find = [](const std::vector<RepresentationTable>& v, const std::string& name) -> const RepresentationTable* {
    for (const auto& t : v) {
      if (t.encoder == name) return &t;
    }
    return nullptr;
  };
  FusionReport rep;
  std::vector<std::pair<std::string, std::vector<double>>> oof_a, oof_v;
  for (const auto& combo : combinations) {
    std::vector<const RepresentationTable*> tr, va;
    for (const auto& name : combo) {
      const auto* t = find(fit_tables, name);
      if (!t) throw DataError("no trained encoder named '" + name + "'");
      tr.push_back(t);
      if (const auto* v = find(holdout_tables, name)) va.push_back(v);
    }
    if (va.size() != tr.size()) va.clear();
    auto res = fuse_train(tr, va, manifest, cfg);
    if (combo.size() == 1) {
      oof_a.emplace_back(combo[0], res.model.arousal.grid.oof);
      oof_v.emplace_back(combo[0], res.model.valence.grid.oof);
    }
    rep.results.push_back(std::move(res));
  }
  std::vector<std::size_t> order(rep.results.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rep.results[a].cv.mean() > rep.results[b].cv.mean();
  });
  std::vector<FusionResult> sorted;
  for (const auto i : order) {
    rep.rows.push_back(rep.results[i].cv);
    sorted.push_back(std::move(rep.results[i]));
  }
  rep.results = std::move(sorted);
  if (!oof_a.empty()) {
    rep.pcc_arousal = metrics::pcc_matrix(oof_a);
    rep.pcc_valence = metrics::pcc_matrix(oof_v);
  }
  return rep;
}

json to_json(const FusionResult& r) {
  json j = {{"name", r.cv.name},
            {"members", r.model.members},
            {"arousal", r.cv.arousal},
            {"valence", r.cv.valence},
            {"mean", r.cv.mean()},
            {"c_arousal", r.model.arousal.grid.chosen_c},
            {"c_valence", r.model.valence.grid.chosen_c},
            {"cv_scores_arousal", r.model.arousal.grid.scores},
            {"cv_scores_valence", r.model.valence.grid.scores}};
  if (r.holdout) {
    j["holdout"] = {{"arousal", r.holdout->arousal}, {"valence", r.holdout->valence}, {"mean", r.holdout->mean()}};
  }
  return j;
}

}  // namespace avf::fusion
