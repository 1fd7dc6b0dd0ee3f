#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "avf/error.hpp"
#include "avf/metrics.hpp"
#include "avf/nn/gradcheck.hpp"
#include "avf/nn/layers.hpp"
#include "avf/nn/loss.hpp"
#include "avf/selftest.hpp"

namespace avf::selftest {

using nn::Mat;
using MatD = Mat<double>;
using RowD = nn::Row<double>;

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void fail(SuiteResult& r, const std::string& what) {
  if (r.passed) r.detail = what;
  r.passed = false;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

nn::Mask random_mask(Eigen::Index n, Rng& rng) {
  nn::Mask m(static_cast<std::size_t>(n));
  for (auto&& b : m) b = rng.uniform01() < 0.7;
  m[rng.uniform_index(static_cast<std::uint64_t>(n))] = true;
  return m;
}

double sum_prod(const MatD& a, const MatD& r) { return a.cwiseProduct(r).sum(); }

// --- gradient problems ---------------------------------------------------------------------
// Each builder returns a report for one random instance; `fault` doubles one
// analytic gradient.

nn::GradCheckReport check_dense(Rng& rng, double tol, bool fault) {
  auto layer = nn::Dense<double>::init(4, 5, rng);
  layer.b = nn::random_normal<double>(1, 5, rng);
  MatD x = nn::random_normal<double>(3, 4, rng);
  const MatD R = nn::probe_weights(3, 5, rng);
  MatD gW, gb, gx;
  nn::GradCheckProblem p;
  p.blocks = {{"dense.W", &layer.W, &gW}, {"dense.b", &layer.b, &gb}, {"dense.x", &x, &gx}};
  gW.setZero(4, 5), gb.setZero(1, 5), gx.setZero(3, 4);
  p.loss = [&] { return sum_prod(layer.forward(x), R); };
  p.backward = [&] {
    auto g = layer.zeros_like();
    gx += layer.backward(x, R, g);
    gW += g.W;
    gb += g.b;
    if (fault) gW *= 2.0;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_activation(Rng& rng, double tol, nn::Activation kind, const std::string& name) {
  MatD x = nn::random_normal<double>(3, 4, rng, 1.5);
  const MatD R = nn::probe_weights(3, 4, rng);
  MatD gx = MatD::Zero(3, 4);
  nn::GradCheckProblem p;
  p.blocks = {{name + ".x", &x, &gx}};
  p.loss = [&] { return sum_prod(nn::activate(x, kind), R); };
  p.backward = [&] { gx += nn::activate_backward<double>(nn::activate(x, kind), R, kind); };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_conv_multiwidth(Rng& rng, double tol) {
  auto conv = nn::Conv1dMultiWidth<double>::init({2, 3, 4, 5}, 3, 2, rng);
  for (auto& f : conv.filters) f.b = nn::random_normal<double>(1, 2, rng);
  MatD x = nn::random_normal<double>(7, 3, rng);
  std::vector<MatD> R;
  for (const auto& f : conv.filters) R.push_back(nn::probe_weights(f.output_length(7), 2, rng));
  std::vector<MatD> gK(conv.filters.size()), gb(conv.filters.size());
  MatD gx = MatD::Zero(7, 3);
  nn::GradCheckProblem p;
  for (std::size_t i = 0; i < conv.filters.size(); ++i) {
    gK[i].setZero(conv.filters[i].K.rows(), 2);
    gb[i].setZero(1, 2);
    const std::string w = std::to_string(conv.filters[i].width);
    p.blocks.push_back({"conv.w" + w + ".K", &conv.filters[i].K, &gK[i]});
    p.blocks.push_back({"conv.w" + w + ".b", &conv.filters[i].b, &gb[i]});
  }
  p.blocks.push_back({"conv.x", &x, &gx});
  p.loss = [&] {
    const auto maps = conv.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) s += sum_prod(maps[i], R[i]);
    return s;
  };
  p.backward = [&] {
    auto g = conv.zeros_like();
    gx += conv.backward(x, R, g);
    for (std::size_t i = 0; i < g.filters.size(); ++i) gK[i] += g.filters[i].K, gb[i] += g.filters[i].b;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_conv_strided(Rng& rng, double tol) {
  auto conv = nn::Conv1d<double>::init(3, 2, 2, 3, rng);
  conv.b = nn::random_normal<double>(1, 3, rng);
  MatD x = nn::random_normal<double>(9, 2, rng);
  const MatD R = nn::probe_weights(conv.output_length(9), 3, rng);
  MatD gK = MatD::Zero(conv.K.rows(), 3), gb = MatD::Zero(1, 3), gx = MatD::Zero(9, 2);
  nn::GradCheckProblem p;
  p.blocks = {{"conv_s2.K", &conv.K, &gK}, {"conv_s2.b", &conv.b, &gb}, {"conv_s2.x", &x, &gx}};
  p.loss = [&] { return sum_prod(conv.forward(x), R); };
  p.backward = [&] {
    auto g = conv.zeros_like();
    gx += conv.backward(x, R, g);
    gK += g.K;
    gb += g.b;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_pool(Rng& rng, double tol, nn::PoolKind kind) {
  MatD x = nn::random_normal<double>(6, 4, rng);
  const nn::Mask mask = random_mask(6, rng);
  const RowD R = nn::probe_weights(1, 4, rng);
  MatD gx = MatD::Zero(6, 4);
  const std::string name = kind == nn::PoolKind::max ? "maxpool.x" : "avgpool.x";
  nn::GradCheckProblem p;
  p.blocks = {{name, &x, &gx}};
  p.loss = [&] { return nn::global_pool<double>(x, kind, mask).dot(R); };
  p.backward = [&] {
    nn::PoolCache<double> cache;
    nn::global_pool<double>(x, kind, mask, &cache);
    gx += nn::global_pool_backward<double>(6, R, kind, mask, cache);
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_lstm(Rng& rng, double tol) {
  auto lstm = nn::Lstm<double>::init(3, 4, rng);
  lstm.b = nn::random_normal<double>(1, 16, rng, 0.5);
  MatD x = nn::random_normal<double>(5, 3, rng);
  const nn::Mask mask = random_mask(5, rng);
  const MatD R = nn::probe_weights(5, 4, rng);
  MatD gW = MatD::Zero(3, 16), gU = MatD::Zero(4, 16), gb = MatD::Zero(1, 16), gx = MatD::Zero(5, 3);
  nn::GradCheckProblem p;
  p.blocks = {{"lstm.W", &lstm.W, &gW}, {"lstm.U", &lstm.U, &gU}, {"lstm.b", &lstm.b, &gb}, {"lstm.x", &x, &gx}};
  p.loss = [&] {
    nn::LstmCache<double> c;
    return sum_prod(lstm.forward(x, mask, c), R);
  };
  p.backward = [&] {
    nn::LstmCache<double> c;
    lstm.forward(x, mask, c);
    auto g = lstm.zeros_like();
    gx += lstm.backward(x, mask, c, R, g);
    gW += g.W, gU += g.U, gb += g.b;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_attention(Rng& rng, double tol) {
  auto att = nn::AttentionPool<double>::init(6, 5, rng);
  att.b = nn::random_normal<double>(1, 5, rng, 0.5);
  MatD H = nn::random_normal<double>(4, 6, rng);
  const nn::Mask mask = random_mask(4, rng);
  const RowD R = nn::probe_weights(1, 6, rng);
  MatD gW = MatD::Zero(6, 5), gb = MatD::Zero(1, 5), gu = MatD::Zero(5, 1), gH = MatD::Zero(4, 6);
  nn::GradCheckProblem p;
  p.blocks = {{"att.W", &att.W, &gW}, {"att.b", &att.b, &gb}, {"att.u", &att.u, &gu}, {"att.H", &H, &gH}};
  p.loss = [&] {
    nn::AttentionCache<double> c;
    return att.forward(H, mask, c).dot(R);
  };
  p.backward = [&] {
    nn::AttentionCache<double> c;
    att.forward(H, mask, c);
    auto g = att.zeros_like();
    gH += att.backward(H, mask, c, R, g);
    gW += g.W, gb += g.b, gu += g.u;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_mha(Rng& rng, double tol) {
  auto mha = nn::Mha<double>::init(4, 2, 2, rng);
  MatD x = nn::random_normal<double>(3, 4, rng);
  const nn::Mask mask = random_mask(3, rng);
  const MatD R = nn::probe_weights(3, 4, rng);
  MatD gq = MatD::Zero(4, 4), gk = MatD::Zero(4, 4), gv = MatD::Zero(4, 4), go = MatD::Zero(4, 4);
  MatD gx = MatD::Zero(3, 4);
  nn::GradCheckProblem p;
  p.blocks = {{"mha.Wq", &mha.Wq, &gq}, {"mha.Wk", &mha.Wk, &gk}, {"mha.Wv", &mha.Wv, &gv},
              {"mha.Wo", &mha.Wo, &go}, {"mha.x", &x, &gx}};
  p.loss = [&] {
    nn::MhaCache<double> c;
    return sum_prod(mha.forward(x, mask, c), R);
  };
  p.backward = [&] {
    nn::MhaCache<double> c;
    mha.forward(x, mask, c);
    auto g = mha.zeros_like();
    gx += mha.backward(x, mask, c, R, g);
    gq += g.Wq, gk += g.Wk, gv += g.Wv, go += g.Wo;
  };
  return nn::gradient_check(p, tol);
}

nn::GradCheckReport check_loss(Rng& rng, double tol, nn::LossKind kind) {
  MatD pred = nn::random_normal<double>(8, 2, rng);
  const MatD truth = nn::random_normal<double>(8, 2, rng);
  nn::LossSpec spec;
  spec.kind = kind;
  spec.lambda = 0.3 + 0.4 * rng.uniform01();
  MatD g = MatD::Zero(8, 2);
  nn::GradCheckProblem p;
  p.blocks = {{"loss." + nn::to_string(kind), &pred, &g}};
  p.loss = [&] { return nn::loss_eval(pred, truth, spec).value; };
  p.backward = [&] { g += nn::loss_eval(pred, truth, spec).grad; };
  return nn::gradient_check(p, tol);
}

}  // namespace

/// Toy configuration of every architecture, small enough for exhaustive
/// finite differences.
enc::EncoderConfig toy_config(enc::Arch arch, std::uint64_t seed) {
  auto c = enc::EncoderConfig::defaults(arch);
  c.seed = seed;
  c.downsample = 1;
  c.fc_hidden = 3;
  switch (arch) {
    case enc::Arch::vis_cnn1d:
      c.input_dim = 3;
      c.conv_channels = 2;
      c.seq_len = 8;
      break;
    case enc::Arch::vis_lstm_attn:
      c.input_dim = 3;
      c.lstm_hidden = 3;
      c.att_dim = 2;
      c.seq_len = 8;
      break;
    case enc::Arch::text_mha:
      c.input_dim = 4;
      c.mha_heads = 2;
      c.mha_head_dim = 2;
      c.seq_len = 8;
      break;
    case enc::Arch::aud_conv1d:
      c.seq_len = 16;
      c.aud_channels = {2, 3};
      c.aud_kernels = {4, 3};
      c.aud_strides = {2, 2};
      break;
    case enc::Arch::aud_mlp:
      c.input_dim = 5;
      c.feature_select = 0;
      c.standardize = false;
      c.mlp_hidden = {4, 3};
      break;
  }
  return c;
}

nn::GradCheckReport check_encoder(enc::Arch arch, std::uint64_t seed, double tol) {
  const auto c = toy_config(arch, seed);
  auto net = enc::build_network<double>(c, seed);
  Rng rng(derive_seed(seed, "input"));
  const Eigen::Index frames = arch == enc::Arch::aud_conv1d ? 12 : arch == enc::Arch::aud_mlp ? 1 : 2;
  MatD x = nn::random_normal<double>(frames, c.input_dim, rng);
  const RowD R = nn::probe_weights(1, c.output_dim(), rng);
  auto grad = net->zeros_like();
  auto params = net->parameters();
  auto gparams = grad->parameters();
  // Zero biases put zero-extended windows exactly on the ReLU kink.
  for (auto& [name, m] : params) {
    if (name.ends_with(".b")) *m = nn::random_normal<double>(m->rows(), m->cols(), rng, 0.5);
  }
  MatD gx = MatD::Zero(frames, c.input_dim);
  nn::GradCheckProblem p;
  for (std::size_t i = 0; i < params.size(); ++i) {
    p.blocks.push_back({enc::to_string(arch) + "." + params[i].first, params[i].second, gparams[i].second});
  }
  p.blocks.push_back({enc::to_string(arch) + ".x", &x, &gx});
  p.loss = [&] { return net->forward(x, nullptr).prediction.dot(R); };
  p.backward = [&] {
    std::unique_ptr<enc::Tape> tape;
    net->forward(x, &tape);
    gx += net->backward(*tape, R, *grad);
  };
  return nn::gradient_check(p, tol);
}

SuiteResult metric_suite(const Options& o) {
  Timer timer;
  SuiteResult r;
  r.name = "metrics";
  Rng rng(derive_seed(o.seed, "metrics"));
  for (int c = 0; c < 200; ++c) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 64));
    std::vector<double> x(n), y(n);
    const double shift = rng.uniform(-2.0, 2.0), scale = rng.uniform(0.1, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = shift + scale * (0.6 * x[i] + 0.8 * rng.normal());
    }
    const double ec = std::abs(metrics::ccc(x, y) - ccc_oracle(x, y));
    const double ep = std::abs(metrics::pearson(x, y) - pearson_oracle(x, y));
    r.max_error = std::max({r.max_error, ec, ep});
    ++r.cases;
    if (ec > 1e-12 || ep > 1e-12) {
      fail(r, "case " + std::to_string(c) + " (n=" + std::to_string(n) + ") differs from the direct formula");
    }
  }
  const std::vector<double> a{1, 2, 3}, b{2, 3, 4}, d{1, 3, 2};
  if (round6(metrics::ccc(a, b)) != round6(4.0 / 7.0)) fail(r, "ccc([1,2,3],[2,3,4]) != 4/7");
  if (round6(metrics::pearson(a, d)) != round6(0.5)) fail(r, "pearson([1,2,3],[1,3,2]) != 0.5");
  const std::vector<double> z0{0, 0}, z1{1, 1};
  if (round6(fusion::rbf_kernel(z0, z1, 0.5)) != round6(std::exp(-1.0))) fail(r, "rbf([0,0],[1,1],0.5) != e^-1");
  const auto em = metrics::error_metrics(std::vector<double>{0, 1}, std::vector<double>{1, 3});
  if (em.mse != 2.5 || em.mae != 1.5) fail(r, "error_metrics([0,1],[1,3]) != {2.5, 1.5}");
  r.cases += 4;
  r.seconds = timer.seconds();
  if (r.passed) r.detail = "max |metric - oracle| over 200 pairs";
  return r;
}

SuiteResult gradient_suite(const Options& o) {
  Timer timer;
  SuiteResult r;
  r.name = "nncore.gradients";
  std::ostringstream worst;
  double worst_err = -1.0;
  auto record = [&](const std::string& what, int s, const nn::GradCheckReport& rep) {
    ++r.cases;
    if (rep.max_rel_err > worst_err) {
      worst_err = rep.max_rel_err;
      worst.str("");
      worst << what << " seed " << s << " param " << rep.worst_param << "[" << rep.worst_index << "]";
    }
    r.max_error = std::max(r.max_error, rep.max_rel_err);
    if (!rep.passed) {
      std::ostringstream os;
      os << what << " seed " << s << ": param " << rep.worst_param << "[" << rep.worst_index
         << "] analytic " << rep.analytic << " numeric " << rep.numeric << " rel err " << rep.max_rel_err
         << " > " << rep.tolerance;
      fail(r, os.str());
    }
  };
  using Check = std::function<nn::GradCheckReport(Rng&)>;
  const std::vector<std::pair<std::string, Check>> layers = {
      {"dense", [&](Rng& g) { return check_dense(g, 1e-5, o.inject_gradient_fault); }},
      {"relu", [](Rng& g) { return check_activation(g, 1e-5, nn::Activation::relu, "relu"); }},
      {"tanh", [](Rng& g) { return check_activation(g, 1e-5, nn::Activation::tanh, "tanh"); }},
      {"softmax", [](Rng& g) { return check_activation(g, 1e-5, nn::Activation::softmax_lastdim, "softmax"); }},
      {"conv1d_multiwidth", [](Rng& g) { return check_conv_multiwidth(g, 1e-5); }},
      {"conv1d_strided", [](Rng& g) { return check_conv_strided(g, 1e-5); }},
      {"max_pool", [](Rng& g) { return check_pool(g, 1e-5, nn::PoolKind::max); }},
      {"avg_pool", [](Rng& g) { return check_pool(g, 1e-5, nn::PoolKind::avg); }},
      {"lstm", [](Rng& g) { return check_lstm(g, 1e-5); }},
      {"attention_pool", [](Rng& g) { return check_attention(g, 1e-5); }},
      {"mha", [](Rng& g) { return check_mha(g, 1e-5); }},
      {"loss.mse", [](Rng& g) { return check_loss(g, 1e-5, nn::LossKind::mse); }},
      {"loss.mae", [](Rng& g) { return check_loss(g, 1e-5, nn::LossKind::mae); }},
      {"loss.ccc", [](Rng& g) { return check_loss(g, 1e-5, nn::LossKind::ccc); }},
      {"loss.ccc_plus_mse", [](Rng& g) { return check_loss(g, 1e-5, nn::LossKind::ccc_plus_mse); }},
      {"loss.ccc_plus_mae", [](Rng& g) { return check_loss(g, 1e-5, nn::LossKind::ccc_plus_mae); }},
  };
  for (const auto& [name, check] : layers) {
    for (int s = 0; s < o.seeds_per_layer; ++s) {
      Rng rng(derive_seed(o.seed, "grad:" + name, static_cast<std::uint64_t>(s)));
      record(name, s, check(rng));
    }
  }
  for (const auto arch : {enc::Arch::vis_cnn1d, enc::Arch::vis_lstm_attn, enc::Arch::text_mha,
                          enc::Arch::aud_conv1d, enc::Arch::aud_mlp}) {
    for (int s = 0; s < o.seeds_per_layer; ++s) {
      record("encoder." + enc::to_string(arch), s,
             check_encoder(arch, derive_seed(o.seed, "grad:" + enc::to_string(arch), static_cast<std::uint64_t>(s)),
                           1e-4));
    }
  }
  r.seconds = timer.seconds();
  if (r.passed) r.detail = "worst: " + worst.str();
  return r;
}

SuiteResult svr_suite(const Options& o) {
  Timer timer;
  SuiteResult r;
  r.name = "fusion.svr";
  constexpr double kTol = 1e-3;
  const double Cs[] = {0.1, 1.0, 10.0};
  const double eps[] = {0.0, 0.05, 0.2};
  double worst_obj = 0.0, worst_pred = 0.0, worst_kkt = 0.0;
  for (int c = 0; c < o.svr_instances; ++c) {
    Rng rng(derive_seed(o.seed, "svr", static_cast<std::uint64_t>(c)));
    const auto n = static_cast<Eigen::Index>(rng.uniform_int(3, 10));
    const auto d = static_cast<Eigen::Index>(rng.uniform_int(1, 4));
    fusion::Matrix X(n, d);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);
    fusion::SvrParams p;
    p.C = Cs[rng.uniform_index(3)];
    p.epsilon = eps[rng.uniform_index(3)];
    p.gamma = 1.0 / static_cast<double>(d);
    p.tolerance = o.svr_solver_tolerance;
    const auto m = fusion::svr_train(X, y, p);
    const auto q = svr_qp_oracle(X, y, p.C, p.epsilon, p.gamma);
    ++r.cases;
    const std::string tag = "instance " + std::to_string(c) + " (n=" + std::to_string(n) + ", C=" +
                            std::to_string(p.C) + ", eps=" + std::to_string(p.epsilon) + ")";

    const double obj_err = std::abs(m.objective - q.objective) / std::max(std::abs(q.objective), 1e-12);
    worst_obj = std::max(worst_obj, q.objective == 0.0 && m.objective == 0.0 ? 0.0 : obj_err);
    if (!(q.objective == 0.0 && m.objective == 0.0) && obj_err > kTol) {
      fail(r, tag + ": dual objective " + std::to_string(m.objective) + " vs oracle " +
                  std::to_string(q.objective));
    }

    // Full coefficient vector in training order.
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(n);
    for (std::size_t s = 0; s < m.support.size(); ++s) coef(static_cast<Eigen::Index>(m.support[s])) = m.dual_coefs(static_cast<Eigen::Index>(s));
    if (std::abs(coef.sum()) > 1e-8) fail(r, tag + ": sum of dual coefficients is not 0");
    if (coef.cwiseAbs().maxCoeff() > p.C) fail(r, tag + ": dual coefficient exceeds C");

    std::vector<fusion::Matrix> probes = {X};
    fusion::Matrix extra(5, d);
    for (Eigen::Index i = 0; i < extra.size(); ++i) extra.data()[i] = rng.normal();
    probes.push_back(extra);
    for (const auto& P : probes) {
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        const std::span<const double> xi(P.data() + i * d, static_cast<std::size_t>(d));
        const double e = std::abs(fusion::svr_predict(m, xi) - qp_predict(q, X, p.gamma, xi));
        worst_pred = std::max(worst_pred, e);
        if (e > kTol) fail(r, tag + ": prediction differs from oracle by " + std::to_string(e));
      }
    }

    // KKT at the solver's own tolerance, never looser than the comparison one.
    const double kkt_tol = std::min(kTol, p.tolerance);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::span<const double> xi(X.data() + i * d, static_cast<std::size_t>(d));
      const double res = std::abs(fusion::svr_predict(m, xi) - y[static_cast<std::size_t>(i)]);
      const double a = std::abs(coef(i));
      double v = 0.0;
      if (a >= p.C) v = std::max(0.0, (p.epsilon - kkt_tol) - res);
      else if (a > 0.0) v = std::max(0.0, std::abs(res - p.epsilon) - kkt_tol);
      else v = std::max(0.0, res - (p.epsilon + kkt_tol));
      worst_kkt = std::max(worst_kkt, v);
      if (v > 0.0) fail(r, tag + ": KKT violated at point " + std::to_string(i));
    }
  }
  r.max_error = std::max({worst_obj, worst_pred, worst_kkt});
  r.seconds = timer.seconds();
  if (r.passed) {
    std::ostringstream os;
    os << "objective rel err " << worst_obj << ", prediction err " << worst_pred << ", KKT excess " << worst_kkt;
    r.detail = os.str();
  }
  return r;
}

namespace {

// Frames whose first column encodes their index, so sampled rows can be traced.
data::FeatureSequence indexed_sequence(Eigen::Index n, Eigen::Index d, Rng& rng) {
  data::FeatureMatrix m(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    m(t, 0) = static_cast<double>(t);
    for (Eigen::Index j = 1; j < d; ++j) m(t, j) = rng.normal();
  }
  return data::FeatureSequence(m);
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool bitwise_equal(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::memcmp(&*a, &*b, sizeof(double)) == 0;
}

}  // namespace

SuiteResult augmentation_suite(const Options& o) {
  Timer timer;
  SuiteResult r;
  r.name = "dataio.augmentation";
  const int N = o.augmentation_cases;
  for (int c = 0; c < N; ++c) {
    Rng rng(derive_seed(o.seed, "augment", static_cast<std::uint64_t>(c)));
    const auto n = static_cast<Eigen::Index>(rng.uniform_int(1, 80));
    const auto seq = indexed_sequence(n, rng.uniform_int(1, 4), rng);
    const std::string tag = "case " + std::to_string(c) + " (n=" + std::to_string(n) + ")";

    // SSA: one row from each chunk, ceil length.
    const auto chunk = static_cast<Eigen::Index>(rng.uniform_int(1, 8));
    Rng draw(derive_seed(o.seed, "ssa", static_cast<std::uint64_t>(c)));
    const auto s = data::ssa_sample(seq, static_cast<std::size_t>(chunk), draw);
    if (s.frames() != (n + chunk - 1) / chunk) fail(r, tag + ": SSA length is not ceil(n/chunk)");
    for (Eigen::Index i = 0; i < s.frames(); ++i) {
      const auto src = static_cast<Eigen::Index>(s.data(i, 0));
      if (src < i * chunk || src >= std::min(n, (i + 1) * chunk) || s.data.row(i) != seq.data.row(src)) {
        fail(r, tag + ": SSA row " + std::to_string(i) + " is not from its chunk");
      }
    }

    // CSA: contiguous window at an admissible offset, or the whole input.
    const auto window = static_cast<Eigen::Index>(rng.uniform_int(1, 90));
    const auto w = data::csa_sample(seq, static_cast<std::size_t>(window), draw);
    if (n < window) {
      if (w.data != seq.data) fail(r, tag + ": CSA on a short input is not the identity");
    } else {
      const auto start = static_cast<Eigen::Index>(w.data(0, 0));
      if (w.frames() != window || start < 0 || start > n - window ||
          w.data != seq.data.middleRows(start, window)) {
        fail(r, tag + ": CSA output is not a contiguous window");
      }
    }

    // Down-sampling: indices 0, k, 2k, ...; SSA with chunk 1 is the identity on top of it.
    const auto k = static_cast<Eigen::Index>(rng.uniform_int(1, 7));
    const auto ds = data::downsample_every_k(seq, static_cast<std::size_t>(k));
    if (ds.frames() != (n + k - 1) / k) fail(r, tag + ": downsample length is not ceil(n/k)");
    for (Eigen::Index i = 0; i < ds.frames(); ++i) {
      if (ds.data.row(i) != seq.data.row(i * k)) fail(r, tag + ": downsample picked the wrong row");
    }
    if (data::ssa_sample(ds, 1, draw).data != ds.data) fail(r, tag + ": SSA(chunk=1) after downsample changed it");

    // Padding: exact length, mask count, idempotence.
    const auto T = static_cast<std::size_t>(rng.uniform_int(1, 96));
    const auto p1 = data::pad_truncate(seq, T);
    const auto p2 = data::pad_truncate(p1, T);
    if (p1.data.rows() != static_cast<Eigen::Index>(T) || p1.valid_count() != std::min<Eigen::Index>(n, T)) {
      fail(r, tag + ": pad_truncate length or mask count wrong");
    }
    if (p2.data != p1.data || p2.mask != p1.mask) fail(r, tag + ": pad_truncate is not idempotent");
    r.cases += 5;
  }

  // Mask invariance of every architecture at both precisions.
  for (const auto arch : {enc::Arch::vis_cnn1d, enc::Arch::vis_lstm_attn, enc::Arch::text_mha,
                          enc::Arch::aud_conv1d, enc::Arch::aud_mlp}) {
    for (int c = 0; c < N; ++c) {
      const std::uint64_t seed = derive_seed(o.seed, "mask:" + enc::to_string(arch), static_cast<std::uint64_t>(c));
      Rng rng(seed);
      auto cfg = toy_config(arch, seed);
      std::unique_ptr<enc::EncoderModel> model;
      if (c % 2 == 0) model = std::make_unique<enc::TrainedEncoder<double>>(enc::build_encoder<double>(cfg));
      else model = std::make_unique<enc::TrainedEncoder<float>>(enc::build_encoder<float>(cfg));
      const Eigen::Index frames =
          arch == enc::Arch::aud_mlp ? 1 : static_cast<Eigen::Index>(rng.uniform_int(1, cfg.seq_len));
      data::FeatureSequence raw(nn::random_normal<double>(frames, cfg.input_dim, rng));
      const auto base = enc::prepare_eval(cfg, {}, raw);
      auto padded = base;
      const auto extra = static_cast<Eigen::Index>(rng.uniform_int(1, 10));
      padded.data.conservativeResize(base.data.rows() + extra, Eigen::NoChange);
      padded.data.bottomRows(extra) = nn::random_normal<double>(extra, cfg.input_dim, rng, 100.0);
      padded.mask.resize(static_cast<std::size_t>(padded.data.rows()), false);
      const auto p0 = model->predict_masked(base), p1 = model->predict_masked(padded);
      const auto r0 = model->represent_masked(base), r1 = model->represent_masked(padded);
      ++r.cases;
      if (!bitwise_equal(p0.arousal, p1.arousal) || !bitwise_equal(p0.valence, p1.valence) || !bitwise_equal(r0, r1)) {
        fail(r, "encoder " + enc::to_string(arch) + " case " + std::to_string(c) + ": padding changed the output");
      }
    }
  }
  r.seconds = timer.seconds();
  if (r.passed) r.detail = "all laws hold";
  return r;
}

std::vector<SuiteResult> run_all(const Options& o) {
  return {metric_suite(o), gradient_suite(o), svr_suite(o), augmentation_suite(o)};
}

}  // namespace avf::selftest
