#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "avf/encoders.hpp"
#include "avf/error.hpp"
#include "avf/metrics.hpp"
#include "avf/selftest.hpp"
#include "test_util.hpp"

using namespace avf;
using enc::Arch;
namespace fs = std::filesystem;

namespace {

constexpr Arch kArchs[] = {Arch::vis_lstm_attn, Arch::vis_cnn1d, Arch::text_mha, Arch::aud_conv1d, Arch::aud_mlp};

std::map<std::string, nn::Mat<double>> params_of(enc::TrainedEncoder<double>& m) {
  std::map<std::string, nn::Mat<double>> out;
  for (const auto& [name, p] : m.network().parameters()) out[name] = *p;
  return out;
}

template <typename T>
bool same_bits(enc::TrainedEncoder<T>& a, enc::TrainedEncoder<T>& b) {
  const auto pa = a.network().parameters(), pb = b.network().parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = *pa[i].second;
    const auto& y = *pb[i].second;
    if (pa[i].first != pb[i].first || x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(T) * static_cast<std::size_t>(x.size())) != 0) return false;
  }
  return true;
}

data::FeatureSequence random_input(const enc::EncoderConfig& c, Eigen::Index frames, Rng& rng) {
  if (c.arch == Arch::aud_mlp) return data::FeatureSequence(testing::random_float_matrix(1, c.input_dim, rng), 1);
  if (c.arch == Arch::aud_conv1d) return data::FeatureSequence(testing::random_float_matrix(1, frames, rng), 1);
  return data::FeatureSequence(testing::random_float_matrix(frames, c.input_dim, rng));
}

// Visual sequences over low-amplitude background noise; channel 0 carries
// arousal and channel 1 valence, and each label is the mean of its channel.
data::DatasetManifest planted_dataset(const fs::path& dir, int train, int validation, int dim, std::uint64_t seed) {
  Rng rng(seed);
  data::DatasetManifest m;
  m.base_dir = dir;
  for (int i = 0; i < train + validation; ++i) {
    const auto frames = rng.uniform_int(10, 40);
    const double sa = rng.normal(), sv = rng.normal();
    data::FeatureMatrix x = 0.1f * testing::random_float_matrix(frames, dim, rng);
    for (Eigen::Index t = 0; t < frames; ++t) {
      x(t, 0) = static_cast<float>(sa + 0.5 * rng.normal());
      x(t, 1) = static_cast<float>(sv + 0.5 * rng.normal());
    }
    data::UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.video_id = r.utterance_id;
    r.split = i < train ? data::Split::train : data::Split::validation;
    r.arousal = std::clamp(0.5 + 0.2 * x.col(0).mean(), 0.0, 1.0);
    r.valence = std::clamp(0.25 * x.col(1).mean(), -1.0, 1.0);
    r.visual = r.utterance_id + ".aff1";
    data::write_feature_tensor(dir / *r.visual, data::FeatureSequence(x));
    m.records.push_back(r);
  }
  data::write_manifest(dir / "manifest.jsonl", m);
  return data::parse_manifest(dir / "manifest.jsonl");
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("architecture defaults") {
  const auto cnn = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  CHECK(cnn.conv_widths == std::vector<int>{2, 3, 4, 5});
  CHECK(cnn.input_dim == 512);
  CHECK(enc::EncoderConfig::defaults(Arch::vis_lstm_attn).lstm_hidden == 256);
  CHECK(enc::EncoderConfig::defaults(Arch::text_mha).input_dim == 400);
  CHECK(enc::EncoderConfig::defaults(Arch::text_mha).mha_heads == 8);
  CHECK(enc::EncoderConfig::defaults(Arch::text_mha).mha_head_dim == 64);

  auto c = cnn;
  c.conv_channels = 4;
  c.fc_hidden = 8;
  CHECK(enc::build_network<double>(c, 1)->output_dim() == 2);
  c.head = enc::Head::independent_valence;
  CHECK(enc::build_network<double>(c, 1)->output_dim() == 1);
  CHECK_FALSE(c.predicts_arousal());
  CHECK(c.predicts_valence());
}

TEST_CASE("representation dimensions") {
  auto cnn = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  cnn.conv_channels = 16;
  CHECK(enc::build_network<float>(cnn, 0)->representation_dim() == 64);
  CHECK(enc::build_network<float>(enc::EncoderConfig::defaults(Arch::aud_conv1d), 0)->representation_dim() == 256);
  auto mlp = enc::EncoderConfig::defaults(Arch::aud_mlp);
  mlp.mlp_hidden = {32, 12};
  CHECK(enc::build_network<float>(mlp, 0)->representation_dim() == 12);
}

TEST_CASE("config validation and json round trip") {
  for (const auto arch : kArchs) {
    auto c = selftest::toy_config(arch, 3);
    c.name = "Model_" + enc::to_string(arch);
    c.loss.kind = nn::LossKind::ccc_plus_mae;
    c.augmentation = enc::Augmentation::csa;
    const auto back = enc::encoder_config_from_json(enc::to_json(c));
    CHECK(enc::to_json(back) == enc::to_json(c));
  }
  auto bad = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  bad.conv_widths = {3, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  bad.loss.kind = nn::LossKind::ccc;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS(enc::encoder_config_from_json(nlohmann::json{{"arch", "vis_gru"}}));
}

TEST_CASE("heads share the trunk") {
  auto c = selftest::toy_config(Arch::vis_lstm_attn, 9);
  auto multi = enc::build_encoder<double>(c);
  c.head = enc::Head::independent_arousal;
  auto single = enc::build_encoder<double>(c);
  const auto pm = params_of(multi), ps = params_of(single);
  for (const auto& [name, value] : pm) {
    if (name.rfind("head.", 0) == 0) {
      CHECK(ps.at(name).cols() == 1);
      continue;
    }
    CHECK(ps.at(name) == value);
  }
}

TEST_CASE("head contract") {
  Rng rng(2);
  for (const auto head : {enc::Head::multitask, enc::Head::independent_arousal, enc::Head::independent_valence}) {
    auto c = selftest::toy_config(Arch::text_mha, 1);
    c.head = head;
    const auto m = enc::build_encoder<float>(c);
    const auto p = m.predict(random_input(c, 3, rng));
    CHECK(p.arousal.has_value() == (head != enc::Head::independent_valence));
    CHECK(p.valence.has_value() == (head != enc::Head::independent_arousal));
  }
}

TEST_CASE("padding never changes outputs") {
  Rng rng(3);
  for (const auto arch : kArchs) {
    auto c = selftest::toy_config(arch, 4);
    if (arch != Arch::aud_mlp) c.seq_len = 8;
    const auto m = enc::build_encoder<double>(c);
    for (int trial = 0; trial < 5; ++trial) {
      const auto raw = random_input(c, rng.uniform_int(1, 6), rng);
      auto s = enc::prepare_eval(c, m.preprocessor(), raw);
      const auto base_p = m.predict_masked(s);
      const auto base_r = m.represent_masked(s);
      // Append padded rows holding garbage.
      const auto extra = rng.uniform_int(1, 5);
      data::MaskedSequence padded;
      padded.data = data::FeatureMatrix(s.data.rows() + extra, s.data.cols());
      padded.data.topRows(s.data.rows()) = s.data;
      padded.data.bottomRows(extra) = testing::random_float_matrix(extra, s.data.cols(), rng) * 100.0;
      padded.mask = s.mask;
      padded.mask.resize(static_cast<std::size_t>(padded.data.rows()), false);
      const auto p = m.predict_masked(padded);
      CHECK(p.arousal == base_p.arousal);
      CHECK(p.valence == base_p.valence);
      CHECK(m.represent_masked(padded) == base_r);
    }
  }
}

TEST_CASE("prediction matches a hand-composed forward pass") {
  auto c = selftest::toy_config(Arch::vis_lstm_attn, 5);
  auto m = enc::build_encoder<double>(c);
  auto P = params_of(m);
  Rng rng(5);
  for (auto& [name, value] : P) value = nn::random_normal<double>(value.rows(), value.cols(), rng, 0.7);
  for (auto& [name, ptr] : m.network().parameters()) *ptr = P.at(name);

  const data::FeatureMatrix x = testing::random_float_matrix(2, c.input_dim, rng);
  const auto& W = P.at("lstm.W");
  const auto& U = P.at("lstm.U");
  const auto& b = P.at("lstm.b");
  const Eigen::Index h = U.rows();
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };

  std::vector<std::vector<double>> H;
  std::vector<double> hp(static_cast<std::size_t>(h), 0.0), cp(static_cast<std::size_t>(h), 0.0);
  for (Eigen::Index t = 0; t < 2; ++t) {
    std::vector<double> z(static_cast<std::size_t>(4 * h));
    for (Eigen::Index k = 0; k < 4 * h; ++k) {
      double acc = b(0, k);
      for (Eigen::Index j = 0; j < x.cols(); ++j) acc += x(t, j) * W(j, k);
      for (Eigen::Index j = 0; j < h; ++j) acc += hp[static_cast<std::size_t>(j)] * U(j, k);
      z[static_cast<std::size_t>(k)] = acc;
    }
    for (Eigen::Index j = 0; j < h; ++j) {
      const auto u = static_cast<std::size_t>(j);
      const double i = sig(z[u]), f = sig(z[u + h]), o = sig(z[u + 2 * h]), g = std::tanh(z[u + 3 * h]);
      cp[u] = f * cp[u] + i * g;
      hp[u] = o * std::tanh(cp[u]);
    }
    H.push_back(hp);
  }
  const auto& aW = P.at("att.W");
  const auto& ab = P.at("att.b");
  const auto& au = P.at("att.u");
  double s[2];
  for (int t = 0; t < 2; ++t) {
    s[t] = 0.0;
    for (Eigen::Index k = 0; k < aW.cols(); ++k) {
      double pre = ab(0, k);
      for (Eigen::Index j = 0; j < h; ++j) pre += H[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] * aW(j, k);
      s[t] += std::tanh(pre) * au(k, 0);
    }
  }
  const double a0 = std::exp(s[0]) / (std::exp(s[0]) + std::exp(s[1])), a1 = 1.0 - a0;
  std::vector<double> ctx(static_cast<std::size_t>(h));
  for (std::size_t j = 0; j < ctx.size(); ++j) ctx[j] = a0 * H[0][j] + a1 * H[1][j];
  const auto& fW = P.at("fc.W");
  const auto& fb = P.at("fc.b");
  std::vector<double> h1(static_cast<std::size_t>(fW.cols()));
  for (Eigen::Index k = 0; k < fW.cols(); ++k) {
    double acc = fb(0, k);
    for (Eigen::Index j = 0; j < h; ++j) acc += ctx[static_cast<std::size_t>(j)] * fW(j, k);
    h1[static_cast<std::size_t>(k)] = std::max(0.0, acc);
  }
  const auto& hW = P.at("head.W");
  const auto& hb = P.at("head.b");
  double out[2];
  for (Eigen::Index k = 0; k < 2; ++k) {
    out[k] = hb(0, k);
    for (Eigen::Index j = 0; j < fW.cols(); ++j) out[k] += h1[static_cast<std::size_t>(j)] * hW(j, k);
  }

  const auto p = m.predict(data::FeatureSequence(x));
  CHECK(std::abs(*p.arousal - out[0]) <= 1e-10);
  CHECK(std::abs(*p.valence - out[1]) <= 1e-10);
  const auto rep = m.represent(data::FeatureSequence(x));
  for (std::size_t j = 0; j < ctx.size(); ++j) CHECK(std::abs(rep[j] - ctx[j]) <= 1e-10);
}

TEST_CASE("every architecture passes the end-to-end gradient check") {
  for (const auto arch : kArchs) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto r = selftest::check_encoder(arch, seed, 1e-4);
      INFO(enc::to_string(arch), " seed ", seed, ": ", r.worst_param, " ", r.max_rel_err);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("training: no-op, determinism, persistence") {
  testing::TempDir dir("enc_train");
  const auto manifest = planted_dataset(dir.path(), 24, 8, 6, 11);
  auto c = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  c.input_dim = 6;
  c.downsample = 1;
  c.seq_len = 16;
  c.conv_channels = 3;
  c.fc_hidden = 5;
  c.batch_size = 8;
  c.seed = 21;

  c.epochs = 0;
  auto init = enc::build_encoder<float>(c);
  auto untrained = enc::train_encoder(enc::build_encoder<float>(c), manifest);
  CHECK(same_bits(init, untrained));
  CHECK(untrained.history().rows.empty());

  c.epochs = 3;
  c.augmentation = enc::Augmentation::ssa;
  c.ssa_chunk = 2;
  auto a = enc::train_encoder(enc::build_encoder<float>(c), manifest);
  auto b = enc::train_encoder(enc::build_encoder<float>(c), manifest);
  CHECK(same_bits(a, b));
  CHECK_FALSE(same_bits(a, init));
  REQUIRE(a.history().rows.size() == 3);
  for (int e = 0; e < 3; ++e) CHECK(a.history().rows[static_cast<std::size_t>(e)].epoch == e + 1);
  CHECK(a.history().best_epoch >= 1);

  a.save(dir / "ckpt");
  const auto loaded = enc::load_encoder(dir / "ckpt");
  CHECK(loaded->precision() == enc::Precision::f32);
  CHECK(enc::to_json(loaded->config()) == enc::to_json(c));
  CHECK(loaded->history().rows.size() == 3);
  for (const auto& r : manifest.records) {
    const auto raw = manifest.load(r, data::Modality::visual);
    const auto p0 = a.predict(raw);
    const auto p1 = loaded->predict(raw);
    CHECK(p0.arousal == p1.arousal);
    CHECK(p0.valence == p1.valence);
    CHECK(loaded->represent(raw) == loaded->represent(raw));
  }

  auto text_only = manifest;
  text_only.records[0].visual.reset();
  text_only.records[0].text_emb = text_only.records[1].visual;
  CHECK_THROWS_AS(enc::encoder_predict(a, text_only, text_only.records[0]), DataError);
}

TEST_CASE("divergence names the epoch") {
  testing::TempDir dir("enc_div");
  const auto manifest = planted_dataset(dir.path(), 16, 4, 4, 12);
  auto c = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  c.input_dim = 4;
  c.downsample = 1;
  c.seq_len = 8;
  c.conv_channels = 2;
  c.fc_hidden = 4;
  c.batch_size = 4;
  c.epochs = 5;
  c.loss.kind = nn::LossKind::mse;
  c.optimizer.lr0 = 1e30;
  try {
    enc::train_encoder(enc::build_encoder<double>(c), manifest);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("vis_cnn1d learns a planted channel") {
  testing::TempDir dir("enc_planted");
  const auto manifest = planted_dataset(dir.path(), 200, 50, 512, 13);
  auto c = enc::EncoderConfig::defaults(Arch::vis_cnn1d);
  c.downsample = 1;
  c.seq_len = 64;
  c.conv_channels = 8;
  c.fc_hidden = 16;
  c.batch_size = 16;
  c.epochs = 50;
  c.optimizer.kind = nn::OptimizerKind::adam;
  c.optimizer.lr0 = 0.003;
  c.seed = 1;
  const auto model = enc::train_encoder(c, manifest, enc::Precision::f32);
  std::vector<double> pa, pv, ta, tv;
  for (const auto* r : manifest.in_split(data::Split::validation)) {
    const auto p = enc::encoder_predict(*model, manifest, *r);
    pa.push_back(*p.arousal);
    pv.push_back(*p.valence);
    ta.push_back(r->arousal);
    tv.push_back(r->valence);
  }
  const double ccc_a = metrics::ccc(pa, ta), ccc_v = metrics::ccc(pv, tv);
  INFO("validation CCC arousal ", ccc_a, " valence ", ccc_v);
  CHECK(ccc_a >= 0.8);
  CHECK(ccc_v >= 0.8);
}

}  // TEST_SUITE
