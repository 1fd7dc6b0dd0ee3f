#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "avf/error.hpp"
#include "avf/fusion.hpp"
#include "avf/metrics.hpp"
#include "avf/rng.hpp"
#include "avf/selftest.hpp"
#include "test_util.hpp"

using namespace avf;
using fusion::Matrix;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix X(rows, cols);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  return X;
}

std::span<const double> row(const Matrix& X, Eigen::Index i) {
  return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

// Coefficients in training-row order.
Eigen::VectorXd full_coefs(const fusion::SvrModel& m, Eigen::Index n) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < m.support.size(); ++s) {
    c(static_cast<Eigen::Index>(m.support[s])) = m.dual_coefs(static_cast<Eigen::Index>(s));
  }
  return c;
}

// Records u00..u(n-1): the first `train` are train, the rest validation.
// Labels are smooth functions of a latent pair (a, v).
struct Toy {
  data::DatasetManifest manifest;
  std::vector<fusion::RepresentationTable> train_tables, val_tables;
};

Toy toy_fusion(int train, int validation, std::uint64_t seed) {
  Rng rng(seed);
  Toy t;
  const int n = train + validation;
  std::vector<double> la(static_cast<std::size_t>(n)), lv(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    data::UtteranceRecord r;
    r.utterance_id = (i < 10 ? "u0" : "u") + std::to_string(i);
    r.video_id = "v" + std::to_string(i / 2);
    r.split = i < train ? data::Split::train : data::Split::validation;
    la[static_cast<std::size_t>(i)] = rng.uniform(-1, 1);
    lv[static_cast<std::size_t>(i)] = rng.uniform(-1, 1);
    r.arousal = 0.5 + 0.4 * la[static_cast<std::size_t>(i)];
    r.valence = 0.8 * lv[static_cast<std::size_t>(i)];
    r.visual = r.utterance_id + ".aff1";
    t.manifest.records.push_back(r);
  }
  // A sees both latents, B only valence plus noise.
  for (const auto split : {data::Split::train, data::Split::validation}) {
    const int lo = split == data::Split::train ? 0 : train, hi = split == data::Split::train ? train : n;
    fusion::RepresentationTable a{"A", {}, Matrix(hi - lo, 3)}, b{"B", {}, Matrix(hi - lo, 2)};
    for (int i = lo; i < hi; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Eigen::Index r = i - lo;
      a.ids.push_back(t.manifest.records[k].utterance_id);
      b.ids.push_back(t.manifest.records[k].utterance_id);
      a.features.row(r) << la[k] + 0.1 * rng.normal(), lv[k] + 0.1 * rng.normal(), rng.normal();
      b.features.row(r) << lv[k] + 0.3 * rng.normal(), 5.0 * rng.normal();
    }
    auto& dst = split == data::Split::train ? t.train_tables : t.val_tables;
    dst.push_back(std::move(a));
    dst.push_back(std::move(b));
  }
  return t;
}

std::vector<const fusion::RepresentationTable*> pick(const std::vector<fusion::RepresentationTable>& v,
                                                     const std::vector<std::string>& names) {
  std::vector<const fusion::RepresentationTable*> out;
  for (const auto& n : names) {
    for (const auto& t : v) {
      if (t.encoder == n) out.push_back(&t);
    }
  }
  return out;
}

std::vector<std::span<const double>> reps_of(const std::vector<const fusion::RepresentationTable*>& tables,
                                             Eigen::Index r) {
  std::vector<std::span<const double>> out;
  for (const auto* t : tables) out.push_back(row(t->features, r));
  return out;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("rbf kernel") {
  const std::vector<double> o = {0, 0}, one = {1, 1}, x = {0.3, -2.0};
  CHECK(fusion::rbf_kernel(o, one, 0.5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(fusion::rbf_kernel(x, x, 3.0) == 1.0);
  CHECK(fusion::rbf_kernel(x, one, 0.7) == fusion::rbf_kernel(one, x, 0.7));
  CHECK_THROWS_AS(fusion::rbf_kernel(o, std::vector<double>{1}, 1.0), ConfigError);
  CHECK_THROWS_AS(fusion::rbf_kernel(o, one, 0.0), ConfigError);
}

TEST_CASE("svr on constant targets") {
  Rng rng(1);
  const Matrix X = random_matrix(6, 2, rng);
  const std::vector<double> y(6, 0.7);
  fusion::SvrParams p;
  p.gamma = 0.5;
  const auto m = fusion::svr_train(X, y, p);
  CHECK(full_coefs(m, 6).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.bias == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fusion::svr_predict(m, row(X, 3)) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("svr is odd in the targets") {
  Rng rng(2);
  const Matrix X = random_matrix(9, 3, rng);
  std::vector<double> y(9), neg(9);
  for (std::size_t i = 0; i < 9; ++i) {
    y[i] = rng.uniform(-1, 1);
    neg[i] = -y[i];
  }
  fusion::SvrParams p;
  p.gamma = 0.3;
  p.epsilon = 0.05;
  p.tolerance = 1e-8;
  const auto a = fusion::svr_train(X, y, p), b = fusion::svr_train(X, neg, p);
  CHECK((full_coefs(a, 9) + full_coefs(b, 9)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(a.bias == doctest::Approx(-b.bias).epsilon(1e-6));
  CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-9));
}

TEST_CASE("svr matches the qp oracle and the kkt conditions") {
  Rng rng(3);
  for (const double C : {0.1, 1.0, 10.0}) {
    const Matrix X = random_matrix(8, 2, rng);
    std::vector<double> y(8);
    for (auto& v : y) v = rng.uniform(-1, 1);
    fusion::SvrParams p;
    p.C = C;
    p.epsilon = 0.1;
    p.gamma = 0.5;
    p.tolerance = 1e-4;
    const auto m = fusion::svr_train(X, y, p);
    const auto q = selftest::svr_qp_oracle(X, y, C, 0.1, 0.5);
    INFO("C = ", C);
    CHECK(std::abs(m.objective - q.objective) <= 1e-3 * std::abs(q.objective));

    const Eigen::VectorXd coef = full_coefs(m, 8);
    CHECK(std::abs(coef.sum()) <= 1e-8);
    CHECK(coef.cwiseAbs().maxCoeff() <= C);
    for (Eigen::Index i = 0; i < 8; ++i) {
      const double f = fusion::svr_predict(m, row(X, i));
      CHECK(std::abs(f - selftest::qp_predict(q, X, 0.5, row(X, i))) <= 1e-3);
      // Explicit kernel expansion.
      double g = m.bias;
      for (Eigen::Index s = 0; s < m.support_vectors.rows(); ++s) {
        g += m.dual_coefs(s) * fusion::rbf_kernel(row(m.support_vectors, s), row(X, i), 0.5);
      }
      CHECK(f == doctest::Approx(g).epsilon(1e-12));
      // Residual r = y - f: inside the tube for zero coefficients, on its
      // edge for free ones and outside it (on the coefficient's side) at C.
      const double r = y[static_cast<std::size_t>(i)] - f, a = coef(i);
      if (a == 0.0) CHECK(std::abs(r) <= 0.1 + 1e-4);
      else if (std::abs(a) < C) CHECK(std::abs(std::abs(r) - 0.1) <= 1e-4);
      else CHECK(std::abs(r) >= 0.1 - 1e-4);
      if (a != 0.0) CHECK((a > 0) == (r > 0));
    }
  }
}

TEST_CASE("duplicated points at half the box give the same fit") {
  Rng rng(4);
  const Matrix X = random_matrix(7, 2, rng);
  std::vector<double> y(7);
  for (auto& v : y) v = rng.uniform(-1, 1);
  Matrix X2(14, 2);
  X2 << X, X;
  std::vector<double> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  fusion::SvrParams p;
  p.C = 0.5;
  p.epsilon = 0.05;
  p.gamma = 0.5;
  p.tolerance = 1e-6;
  const auto a = fusion::svr_train(X, y, p);
  p.C = 0.25;
  const auto b = fusion::svr_train(X2, y2, p);
  // The doubled dual is the original one with every variable split in two.
  CHECK(b.objective == doctest::Approx(a.objective).epsilon(1e-4));
  const Matrix probes = random_matrix(5, 2, rng);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(std::abs(fusion::svr_predict(a, row(probes, i)) - fusion::svr_predict(b, row(probes, i))) <= 1e-4);
  }
}

TEST_CASE("svr input validation") {
  Rng rng(5);
  const Matrix X = random_matrix(4, 2, rng);
  const std::vector<double> y = {0, 1, 0, 1};
  fusion::SvrParams p;
  CHECK_THROWS_AS(fusion::svr_train(X.topRows(1), std::vector<double>{1}, p), ConfigError);
  CHECK_THROWS_AS(fusion::svr_train(X, std::vector<double>{0, 1}, p), ConfigError);
  p.C = 0.0;
  CHECK_THROWS_AS(fusion::svr_train(X, y, p), ConfigError);
}

TEST_CASE("grid search against an exhaustive rerun") {
  Rng rng(6);
  const Matrix X = random_matrix(30, 2, rng);
  std::vector<double> y(30);
  std::vector<int> folds(30);
  for (std::size_t i = 0; i < 30; ++i) {
    y[i] = std::sin(X(static_cast<Eigen::Index>(i), 0)) + 0.2 * rng.normal();
    folds[i] = static_cast<int>(i % 3);
  }
  fusion::SvrParams base;
  base.epsilon = 0.05;
  const std::vector<double> grid = {0.1, 1.0, 10.0};
  const auto g = fusion::grid_search_c(X, y, grid, folds, 3, base);

  std::vector<double> expect(grid.size(), 0.0);
  std::vector<double> oof(30);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (int f = 0; f < 3; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < 30; ++i) (folds[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
      Matrix Xtr(static_cast<Eigen::Index>(tr.size()), 2);
      std::vector<double> ytr, pred, truth;
      for (std::size_t r = 0; r < tr.size(); ++r) {
        Xtr.row(static_cast<Eigen::Index>(r)) = X.row(tr[r]);
        ytr.push_back(y[static_cast<std::size_t>(tr[r])]);
      }
      fusion::SvrParams p = base;
      p.C = grid[c];
      const auto m = fusion::svr_train(Xtr, ytr, p);
      for (const auto i : te) {
        pred.push_back(fusion::svr_predict(m, row(X, i)));
        truth.push_back(y[static_cast<std::size_t>(i)]);
      }
      expect[c] += metrics::ccc(pred, truth) / 3.0;
    }
  }
  REQUIRE(g.scores.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) CHECK(g.scores[c] == doctest::Approx(expect[c]).epsilon(1e-12));
  const auto best = static_cast<std::size_t>(std::max_element(expect.begin(), expect.end()) - expect.begin());
  CHECK(g.chosen == best);
  CHECK(g.chosen_c == grid[best]);
  CHECK(g.oof.size() == 30);

  // Threads do not change the result.
  const auto threaded = fusion::grid_search_c(X, y, grid, folds, 3, base, 4);
  CHECK(threaded.scores == g.scores);
  CHECK(threaded.oof == g.oof);

  const auto single = fusion::grid_search_c(X, y, {3.0}, folds, 3, base);
  CHECK(single.chosen == 0);
  CHECK(single.chosen_c == 3.0);

  // Identical candidates tie; the first (smallest) wins.
  const auto tie = fusion::grid_search_c(X, y, {1.0, 1.0}, folds, 3, base);
  CHECK(tie.scores[0] == tie.scores[1]);
  CHECK(tie.chosen == 0);
}

TEST_CASE("grid search rejects degenerate folds") {
  Rng rng(7);
  const Matrix X = random_matrix(6, 2, rng);
  const std::vector<double> y = {0, 1, 2, 3, 4, 5};
  const std::vector<int> folds = {0, 0, 0, 0, 0, 1};
  CHECK_THROWS_AS(fusion::grid_search_c(X, y, {1.0}, folds, 2, {}), DataError);
  CHECK_THROWS_AS(fusion::grid_search_c(X, y, {}, folds, 2, {}), ConfigError);
  CHECK_THROWS_AS(fusion::grid_search_c(X, y, {1.0}, std::vector<int>{0, 1, 2, 0, 1, 2}, 2, {}), ConfigError);
}

TEST_CASE("combination names") {
  CHECK(fusion::parse_combination("VisModel2+AudModel2") == std::vector<std::string>{"VisModel2", "AudModel2"});
  CHECK(fusion::parse_combination("TextModel") == std::vector<std::string>{"TextModel"});
  CHECK_THROWS_AS(fusion::parse_combination("A++B"), ConfigError);
  CHECK_THROWS_AS(fusion::parse_combination("A+B+A"), ConfigError);
  CHECK(fusion::combination_name({"A", "B"}) == "A + B");
}

TEST_CASE("fusion config json") {
  fusion::FusionConfig c;
  c.fit_split = data::Split::validation;
  c.epsilon = 0.02;
  c.grid = {0.5, 2.0};
  c.folds = 4;
  const auto back = fusion::fusion_config_from_json(fusion::to_json(c));
  CHECK(back.fit_split == data::Split::validation);
  CHECK(back.epsilon == 0.02);
  CHECK(back.grid == c.grid);
  CHECK(back.folds == 4);
  CHECK(fusion::holdout_split(c) == data::Split::test);
  CHECK(fusion::holdout_split(fusion::FusionConfig{}) == data::Split::validation);
  CHECK_THROWS_AS(fusion::fusion_config_from_json({{"folds", 1}}), ConfigError);
  CHECK_THROWS_AS(fusion::fusion_config_from_json({{"grid", nlohmann::json::array()}}), ConfigError);
}

TEST_CASE("late fusion end to end") {
  const auto toy = toy_fusion(40, 20, 8);
  fusion::FusionConfig cfg;
  cfg.folds = 4;
  const auto ab = pick(toy.train_tables, {"A", "B"});
  const auto ab_val = pick(toy.val_tables, {"A", "B"});
  const auto res = fusion::fuse_train(ab, ab_val, toy.manifest, cfg);
  CHECK(res.model.members == std::vector<std::string>{"A", "B"});
  CHECK(res.model.dim() == 5);
  CHECK(res.fit_ids.size() == 40);
  CHECK(std::is_sorted(res.fit_ids.begin(), res.fit_ids.end()));
  REQUIRE(res.holdout.has_value());
  CHECK(res.holdout->arousal > 0.5);
  CHECK(res.holdout->valence > 0.5);
  CHECK(res.cv.arousal == res.model.arousal.grid.scores[res.model.arousal.grid.chosen]);

  SUBCASE("member order does not matter") {
    const auto ba = fusion::fuse_train(pick(toy.train_tables, {"B", "A"}), {}, toy.manifest, cfg);
    const auto val_ba = pick(toy.val_tables, {"B", "A"});
    for (Eigen::Index r = 0; r < 20; ++r) {
      const auto p = fusion::fusion_predict(res.model, reps_of(ab_val, r));
      const auto q = fusion::fusion_predict(ba.model, reps_of(val_ba, r));
      CHECK(std::abs(p.first - q.first) <= 1e-8);
      CHECK(std::abs(p.second - q.second) <= 1e-8);
    }
  }

  SUBCASE("single member") {
    const auto a = fusion::fuse_train(pick(toy.train_tables, {"A"}), {}, toy.manifest, cfg);
    CHECK(a.model.members.size() == 1);
    CHECK_FALSE(a.holdout.has_value());
    CHECK(std::isfinite(a.cv.mean()));
  }

  SUBCASE("save and load") {
    testing::TempDir dir("fusion_model");
    fusion::save_fusion(dir.path(), res.model);
    const auto loaded = fusion::load_fusion(dir.path());
    CHECK(loaded.members == res.model.members);
    for (Eigen::Index r = 0; r < 20; ++r) {
      CHECK(fusion::fusion_predict(loaded, reps_of(ab_val, r)) == fusion::fusion_predict(res.model, reps_of(ab_val, r)));
    }
  }

  SUBCASE("wrong representation width") {
    std::vector<double> short_row(2, 0.0), b_row(2, 0.0);
    CHECK_THROWS_AS(fusion::fusion_predict(res.model, {short_row, b_row}), ConfigError);
    CHECK_THROWS_AS(fusion::fusion_predict(res.model, {b_row}), ConfigError);
  }
}

TEST_CASE("representation tables round-trip") {
  const auto toy = toy_fusion(10, 4, 9);
  testing::TempDir dir("fusion_table");
  fusion::save_table(dir.path(), toy.train_tables[0]);
  const auto back = fusion::load_table(dir.path());
  CHECK(back.encoder == "A");
  CHECK(back.ids == toy.train_tables[0].ids);
  // Tables are stored at single precision.
  CHECK(back.features == toy.train_tables[0].features.cast<float>().cast<double>());
  CHECK(back.row_of("u03") == std::optional<std::size_t>(3));
  CHECK_FALSE(back.row_of("nope").has_value());
}

TEST_CASE("fuse_evaluate tabulates every combination") {
  const auto toy = toy_fusion(40, 20, 10);
  fusion::FusionConfig cfg;
  cfg.folds = 4;
  const std::vector<std::vector<std::string>> combos = {{"A"}, {"B"}, {"A", "B"}};
  const auto rep = fusion::fuse_evaluate(combos, toy.train_tables, toy.val_tables, toy.manifest, cfg);
  REQUIRE(rep.rows.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) CHECK(rep.rows[i - 1].mean() >= rep.rows[i].mean());
  for (std::size_t i = 0; i < 3; ++i) CHECK(rep.rows[i].name == rep.results[i].cv.name);
  for (const auto* m : {&rep.pcc_arousal, &rep.pcc_valence}) {
    REQUIRE(m->M.rows() == 2);
    CHECK(m->labels == std::vector<std::string>{"A", "B"});
    CHECK(m->M(0, 0) == 1.0);
    CHECK(m->M(0, 1) == m->M(1, 0));
  }
  CHECK_THROWS_AS(fusion::fuse_evaluate({{"C"}}, toy.train_tables, toy.val_tables, toy.manifest, cfg), DataError);
  // Four train records cannot fill five folds of two.
  const auto tiny = toy_fusion(4, 2, 11);
  CHECK_THROWS(fusion::fuse_evaluate({{"A"}}, tiny.train_tables, tiny.val_tables, tiny.manifest, fusion::FusionConfig{}));
}

}  // TEST_SUITE
