#include "avf/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avf/error.hpp"

namespace avf::nn {

namespace {

template <typename T>
using StridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

// Zero-copy im2col: in a row-major matrix the `width` rows starting at
// t*stride are one contiguous run of width*in values.
template <typename T>
StridedMap<T> patches(const Mat<T>& x, int width, int stride, Eigen::Index out_len) {
  return StridedMap<T>(x.data(), out_len, width * x.cols(), Eigen::OuterStride<>(stride * x.cols()));
}

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

void require(bool ok, const char* msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

// --- Dense ---------------------------------------------------------------------

template <typename T>
Dense<T> Dense<T>::init(Eigen::Index in, Eigen::Index out, Rng& rng) {
  return {xavier_uniform<T>(in, out, in, out, rng), Mat<T>::Zero(1, out)};
}

template <typename T>
Dense<T> Dense<T>::zeros_like() const {
  return {Mat<T>::Zero(W.rows(), W.cols()), Mat<T>::Zero(1, W.cols())};
}

template <typename T>
Mat<T> Dense<T>::forward(const Mat<T>& x) const {
  require(x.cols() == W.rows(), "dense: input width does not match weight rows");
  Mat<T> y = x * W;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> Dense<T>::backward(const Mat<T>& x, const Mat<T>& dy, Dense& grad) const {
  require(dy.rows() == x.rows() && dy.cols() == W.cols(), "dense: gradient shape mismatch");
  grad.W.noalias() += x.transpose() * dy;
  grad.b += dy.colwise().sum();
  return dy * W.transpose();
}

template <typename T>
void Dense<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.emplace_back(prefix + "W", &W);
  out.emplace_back(prefix + "b", &b);
}

// --- activations -------------------------------------------------------------------

template <typename T>
Mat<T> activate(const Mat<T>& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return x.cwiseMax(T(0));
    case Activation::tanh:
      return x.array().tanh().matrix();
    case Activation::softmax_lastdim: {
      Mat<T> y(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp().matrix();
        y.row(r) /= y.row(r).sum();
      }
      return y;
    }
  }
  return x;
}

template <typename T>
Mat<T> activate_backward(const Mat<T>& y, const Mat<T>& dy, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return (y.array() > T(0)).select(dy, T(0));
    case Activation::tanh:
      return (dy.array() * (T(1) - y.array().square())).matrix();
    case Activation::softmax_lastdim: {
      Mat<T> dx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const T inner = y.row(r).dot(dy.row(r));
        dx.row(r) = (y.row(r).array() * (dy.row(r).array() - inner)).matrix();
      }
      return dx;
    }
  }
  return dy;
}

// --- Conv1d ---------------------------------------------------------------------------

template <typename T>
Conv1d<T> Conv1d<T>::init(int width, int stride, Eigen::Index in, Eigen::Index out, Rng& rng) {
  require(width >= 1 && stride >= 1, "conv1d: width and stride must be >= 1");
  const Eigen::Index fan_in = width * in;
  return {width, stride, xavier_uniform<T>(fan_in, out, fan_in, out, rng), Mat<T>::Zero(1, out)};
}

template <typename T>
Conv1d<T> Conv1d<T>::zeros_like() const {
  return {width, stride, Mat<T>::Zero(K.rows(), K.cols()), Mat<T>::Zero(1, K.cols())};
}

template <typename T>
Eigen::Index Conv1d<T>::output_length(Eigen::Index frames) const {
  if (frames < width) return 0;
  return (frames - width) / stride + 1;
}

template <typename T>
Mat<T> Conv1d<T>::forward(const Mat<T>& x) const {
  require(x.cols() * width == K.rows(), "conv1d: input width does not match kernel");
  if (x.rows() < width) throw ConfigError("conv1d: sequence shorter than filter width");
  const Eigen::Index n = output_length(x.rows());
  Mat<T> y = patches(x, width, stride, n) * K;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> Conv1d<T>::backward(const Mat<T>& x, const Mat<T>& dy, Conv1d& grad) const {
  const Eigen::Index n = output_length(x.rows());
  require(dy.rows() == n && dy.cols() == K.cols(), "conv1d: gradient shape mismatch");
  const auto P = patches(x, width, stride, n);
  grad.K.noalias() += P.transpose() * dy;
  grad.b += dy.colwise().sum();
  const Mat<T> dP = dy * K.transpose();
  Mat<T> dx = Mat<T>::Zero(x.rows(), x.cols());
  const Eigen::Index span = width * x.cols();
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::Map<Row<T>>(dx.data() + t * stride * x.cols(), span) += dP.row(t);
  }
  return dx;
}

template <typename T>
void Conv1d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.emplace_back(prefix + "K", &K);
  out.emplace_back(prefix + "b", &b);
}

template <typename T>
Conv1dMultiWidth<T> Conv1dMultiWidth<T>::init(const std::vector<int>& widths, Eigen::Index in,
                                              Eigen::Index channels, Rng& rng) {
  require(!widths.empty(), "conv1d: at least one width required");
  for (std::size_t i = 1; i < widths.size(); ++i) {
    require(widths[i] > widths[i - 1], "conv1d: widths must be strictly increasing");
  }
  Conv1dMultiWidth out;
  for (int w : widths) out.filters.push_back(Conv1d<T>::init(w, 1, in, channels, rng));
  return out;
}

template <typename T>
Conv1dMultiWidth<T> Conv1dMultiWidth<T>::zeros_like() const {
  Conv1dMultiWidth out;
  for (const auto& f : filters) out.filters.push_back(f.zeros_like());
  return out;
}

template <typename T>
int Conv1dMultiWidth<T>::max_width() const {
  return filters.empty() ? 0 : filters.back().width;
}

template <typename T>
std::vector<Mat<T>> Conv1dMultiWidth<T>::forward(const Mat<T>& x) const {
  std::vector<Mat<T>> maps;
  maps.reserve(filters.size());
  for (const auto& f : filters) maps.push_back(f.forward(x));
  return maps;
}

template <typename T>
Mat<T> Conv1dMultiWidth<T>::backward(const Mat<T>& x, const std::vector<Mat<T>>& dmaps,
                                     Conv1dMultiWidth& grad) const {
  require(dmaps.size() == filters.size(), "conv1d: one gradient map per width required");
  Mat<T> dx = Mat<T>::Zero(x.rows(), x.cols());
  for (std::size_t i = 0; i < filters.size(); ++i) {
    dx += filters[i].backward(x, dmaps[i], grad.filters[i]);
  }
  return dx;
}

template <typename T>
void Conv1dMultiWidth<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (auto& f : filters) f.collect(prefix + "w" + std::to_string(f.width) + ".", out);
}

// --- pooling ------------------------------------------------------------------------

template <typename T>
Row<T> global_pool(const Mat<T>& map, PoolKind kind, const Mask& mask, PoolCache<T>* cache) {
  require(mask.empty() || mask.size() == static_cast<std::size_t>(map.rows()),
          "pool: mask length does not match time steps");
  const Eigen::Index C = map.cols();
  Row<T> out(C);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(C), -1);
  Eigen::Index valid = 0;
  if (kind == PoolKind::max) out.setConstant(-std::numeric_limits<T>::infinity());
  else out.setZero();
  for (Eigen::Index t = 0; t < map.rows(); ++t) {
    if (!is_valid(mask, t)) continue;
    ++valid;
    if (kind == PoolKind::avg) {
      out += map.row(t);
      continue;
    }
    for (Eigen::Index c = 0; c < C; ++c) {
      if (map(t, c) > out(c)) {
        out(c) = map(t, c);
        arg[static_cast<std::size_t>(c)] = t;
      }
    }
  }
  if (valid == 0) throw ConfigError("pool: no valid time step");
  if (kind == PoolKind::avg) out /= static_cast<T>(valid);
  if (cache) {
    cache->argmax = std::move(arg);
    cache->valid = valid;
  }
  return out;
}

template <typename T>
Mat<T> global_pool_backward(Eigen::Index frames, const Row<T>& dy, PoolKind kind, const Mask& mask,
                            const PoolCache<T>& cache) {
  Mat<T> dmap = Mat<T>::Zero(frames, dy.cols());
  if (kind == PoolKind::max) {
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
      dmap(cache.argmax[static_cast<std::size_t>(c)], c) = dy(c);
    }
    return dmap;
  }
  const Row<T> share = dy / static_cast<T>(cache.valid);
  for (Eigen::Index t = 0; t < frames; ++t) {
    if (is_valid(mask, t)) dmap.row(t) = share;
  }
  return dmap;
}

// --- LSTM ------------------------------------------------------------------------------

template <typename T>
Lstm<T> Lstm<T>::init(Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  Lstm p;
  p.W = xavier_uniform<T>(in, 4 * hidden, in, hidden, rng);
  p.U = xavier_uniform<T>(hidden, 4 * hidden, hidden, hidden, rng);
  p.b = Mat<T>::Zero(1, 4 * hidden);
  p.b.block(0, hidden, 1, hidden).setOnes();
  return p;
}

template <typename T>
Lstm<T> Lstm<T>::zeros_like() const {
  return {Mat<T>::Zero(W.rows(), W.cols()), Mat<T>::Zero(U.rows(), U.cols()),
          Mat<T>::Zero(1, b.cols())};
}

template <typename T>
Mat<T> Lstm<T>::forward(const Mat<T>& x, const Mask& mask, LstmCache<T>& cache) const {
  require(x.cols() == W.rows(), "lstm: input width does not match W");
  require(mask.empty() || mask.size() == static_cast<std::size_t>(x.rows()),
          "lstm: mask length does not match frames");
  const Eigen::Index n = x.rows(), h = hidden();
  Mat<T> Z = x * W;
  Z.rowwise() += b.row(0);
  cache.gates = Mat<T>::Zero(n, 4 * h);
  cache.c = Mat<T>::Zero(n, h);
  cache.tanh_c = Mat<T>::Zero(n, h);
  cache.h = Mat<T>::Zero(n, h);
  Row<T> h_prev = Row<T>::Zero(h), c_prev = Row<T>::Zero(h);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!is_valid(mask, t)) {
      cache.c.row(t) = c_prev;
      cache.tanh_c.row(t) = c_prev.array().tanh().matrix();
      cache.h.row(t) = h_prev;
      continue;
    }
    Row<T> z = Z.row(t);
    z.noalias() += h_prev * U;
    auto g = cache.gates.row(t);
    for (Eigen::Index j = 0; j < 3 * h; ++j) g(j) = sigmoid(z(j));
    for (Eigen::Index j = 3 * h; j < 4 * h; ++j) g(j) = std::tanh(z(j));
    const auto i_g = g.segment(0, h).array();
    const auto f_g = g.segment(h, h).array();
    const auto o_g = g.segment(2 * h, h).array();
    const auto c_g = g.segment(3 * h, h).array();
    cache.c.row(t) = (f_g * c_prev.array() + i_g * c_g).matrix();
    cache.tanh_c.row(t) = cache.c.row(t).array().tanh().matrix();
    cache.h.row(t) = (o_g * cache.tanh_c.row(t).array()).matrix();
    h_prev = cache.h.row(t);
    c_prev = cache.c.row(t);
  }
  return cache.h;
}

template <typename T>
Mat<T> Lstm<T>::backward(const Mat<T>& x, const Mask& mask, const LstmCache<T>& cache,
                         const Mat<T>& dH, Lstm& grad) const {
  const Eigen::Index n = x.rows(), h = hidden();
  require(dH.rows() == n && dH.cols() == h, "lstm: gradient shape mismatch");
  Mat<T> dZ = Mat<T>::Zero(n, 4 * h);
  Mat<T> H_prev = Mat<T>::Zero(n, h);
  Row<T> dh_next = Row<T>::Zero(h), dc_next = Row<T>::Zero(h);
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const Row<T> dh = dH.row(t) + dh_next;
    if (!is_valid(mask, t)) {
      dh_next = dh;
      continue;  // state copied through; dc_next passes unchanged
    }
    const Row<T> c_prev = t > 0 ? Row<T>(cache.c.row(t - 1)) : Row<T>::Zero(h);
    if (t > 0) H_prev.row(t) = cache.h.row(t - 1);
    const auto g = cache.gates.row(t);
    const auto i_g = g.segment(0, h).array();
    const auto f_g = g.segment(h, h).array();
    const auto o_g = g.segment(2 * h, h).array();
    const auto c_g = g.segment(3 * h, h).array();
    const auto tc = cache.tanh_c.row(t).array();

    const Row<T> dc = (dc_next.array() + dh.array() * o_g * (T(1) - tc.square())).matrix();
    auto dz = dZ.row(t);
    dz.segment(0, h) = (dc.array() * c_g * i_g * (T(1) - i_g)).matrix();
    dz.segment(h, h) = (dc.array() * c_prev.array() * f_g * (T(1) - f_g)).matrix();
    dz.segment(2 * h, h) = (dh.array() * tc * o_g * (T(1) - o_g)).matrix();
    dz.segment(3 * h, h) = (dc.array() * i_g * (T(1) - c_g.square())).matrix();
    dc_next = (dc.array() * f_g).matrix();
    dh_next.noalias() = dz * U.transpose();
  }
  grad.W.noalias() += x.transpose() * dZ;
  grad.U.noalias() += H_prev.transpose() * dZ;
  grad.b += dZ.colwise().sum();
  return dZ * W.transpose();
}

template <typename T>
void Lstm<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.emplace_back(prefix + "W", &W);
  out.emplace_back(prefix + "U", &U);
  out.emplace_back(prefix + "b", &b);
}

// --- attention pooling ------------------------------------------------------------------

template <typename T>
AttentionPool<T> AttentionPool<T>::init(Eigen::Index hidden, Eigen::Index att, Rng& rng) {
  return {xavier_uniform<T>(hidden, att, hidden, att, rng), Mat<T>::Zero(1, att),
          xavier_uniform<T>(att, 1, att, 1, rng)};
}

template <typename T>
AttentionPool<T> AttentionPool<T>::zeros_like() const {
  return {Mat<T>::Zero(W.rows(), W.cols()), Mat<T>::Zero(1, b.cols()), Mat<T>::Zero(u.rows(), 1)};
}

template <typename T>
Row<T> AttentionPool<T>::forward(const Mat<T>& H, const Mask& mask, AttentionCache<T>& cache) const {
  require(H.cols() == W.rows(), "attention: hidden width does not match W");
  require(mask.empty() || mask.size() == static_cast<std::size_t>(H.rows()),
          "attention: mask length does not match frames");
  const Eigen::Index n = H.rows();
  Mat<T> pre = H * W;
  pre.rowwise() += b.row(0);
  cache.V = pre.array().tanh().matrix();
  const Mat<T> s = cache.V * u;  // n x 1

  T smax = -std::numeric_limits<T>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    if (is_valid(mask, t)) smax = std::max(smax, s(t, 0));
  }
  if (!std::isfinite(smax)) throw ConfigError("attention: every frame is masked");
  cache.a = Row<T>::Zero(n);
  T total = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!is_valid(mask, t)) continue;
    cache.a(t) = std::exp(s(t, 0) - smax);
    total += cache.a(t);
  }
  cache.a /= total;
  return cache.a * H;
}

template <typename T>
Mat<T> AttentionPool<T>::backward(const Mat<T>& H, const Mask& mask, const AttentionCache<T>& cache,
                                  const Row<T>& dcontext, AttentionPool& grad) const {
  const Eigen::Index n = H.rows();
  Mat<T> dH = cache.a.transpose() * dcontext;        // direct path through the weighted sum
  const Row<T> da = (H * dcontext.transpose()).transpose();
  const T inner = cache.a.dot(da);
  Mat<T> ds(n, 1);
  for (Eigen::Index t = 0; t < n; ++t) ds(t, 0) = cache.a(t) * (da(t) - inner);

  grad.u.noalias() += cache.V.transpose() * ds;
  const Mat<T> dpre = ((ds * u.transpose()).array() * (T(1) - cache.V.array().square())).matrix();
  grad.W.noalias() += H.transpose() * dpre;
  grad.b += dpre.colwise().sum();
  dH.noalias() += dpre * W.transpose();
  return dH;
}

template <typename T>
void AttentionPool<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.emplace_back(prefix + "W", &W);
  out.emplace_back(prefix + "b", &b);
  out.emplace_back(prefix + "u", &u);
}

// --- multi-head attention -----------------------------------------------------------------

template <typename T>
Mha<T> Mha<T>::init(Eigen::Index model_dim, int heads, int head_dim, Rng& rng) {
  require(heads >= 1 && head_dim >= 1, "mha: heads and head_dim must be >= 1");
  const Eigen::Index inner = static_cast<Eigen::Index>(heads) * head_dim;
  Mha p;
  p.heads = heads;
  p.head_dim = head_dim;
  p.Wq = xavier_uniform<T>(model_dim, inner, model_dim, head_dim, rng);
  p.Wk = xavier_uniform<T>(model_dim, inner, model_dim, head_dim, rng);
  p.Wv = xavier_uniform<T>(model_dim, inner, model_dim, head_dim, rng);
  p.Wo = xavier_uniform<T>(inner, model_dim, inner, model_dim, rng);
  return p;
}

template <typename T>
Mha<T> Mha<T>::zeros_like() const {
  Mha z;
  z.heads = heads;
  z.head_dim = head_dim;
  z.Wq = Mat<T>::Zero(Wq.rows(), Wq.cols());
  z.Wk = Mat<T>::Zero(Wk.rows(), Wk.cols());
  z.Wv = Mat<T>::Zero(Wv.rows(), Wv.cols());
  z.Wo = Mat<T>::Zero(Wo.rows(), Wo.cols());
  return z;
}

template <typename T>
Mat<T> Mha<T>::forward(const Mat<T>& x, const Mask& mask, MhaCache<T>& cache) const {
  require(x.cols() == Wq.rows(), "mha: input width does not match model_dim");
  require(mask.empty() || mask.size() == static_cast<std::size_t>(x.rows()),
          "mha: mask length does not match tokens");
  const Eigen::Index n = x.rows();
  Eigen::Index valid = 0;
  for (Eigen::Index t = 0; t < n; ++t) valid += is_valid(mask, t) ? 1 : 0;
  if (valid == 0) throw ConfigError("mha: every token is masked");

  cache.Q = x * Wq;
  cache.K = x * Wk;
  cache.V = x * Wv;
  cache.concat = Mat<T>::Zero(n, Wq.cols());
  cache.weights.assign(static_cast<std::size_t>(heads), Mat<T>());
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  for (int hd = 0; hd < heads; ++hd) {
    const Eigen::Index off = static_cast<Eigen::Index>(hd) * head_dim;
    Mat<T> S = cache.Q.middleCols(off, head_dim) * cache.K.middleCols(off, head_dim).transpose();
    S *= scale;
    Mat<T>& A = cache.weights[static_cast<std::size_t>(hd)];
    A = Mat<T>::Zero(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      T m = -std::numeric_limits<T>::infinity();
      for (Eigen::Index c = 0; c < n; ++c) {
        if (is_valid(mask, c)) m = std::max(m, S(r, c));
      }
      T total = 0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (!is_valid(mask, c)) continue;
        A(r, c) = std::exp(S(r, c) - m);
        total += A(r, c);
      }
      A.row(r) /= total;
    }
    cache.concat.middleCols(off, head_dim).noalias() = A * cache.V.middleCols(off, head_dim);
  }
  return cache.concat * Wo;
}

template <typename T>
Mat<T> Mha<T>::backward(const Mat<T>& x, const Mask& mask, const MhaCache<T>& cache, const Mat<T>& dy,
                        Mha& grad) const {
  const Eigen::Index n = x.rows();
  require(dy.rows() == n && dy.cols() == Wo.cols(), "mha: gradient shape mismatch");
  grad.Wo.noalias() += cache.concat.transpose() * dy;
  const Mat<T> dconcat = dy * Wo.transpose();
  Mat<T> dQ(n, Wq.cols()), dK(n, Wk.cols()), dV(n, Wv.cols());
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  for (int hd = 0; hd < heads; ++hd) {
    const Eigen::Index off = static_cast<Eigen::Index>(hd) * head_dim;
    const Mat<T>& A = cache.weights[static_cast<std::size_t>(hd)];
    const Mat<T> dO = dconcat.middleCols(off, head_dim);
    const Mat<T> dA = dO * cache.V.middleCols(off, head_dim).transpose();
    dV.middleCols(off, head_dim).noalias() = A.transpose() * dO;
    Mat<T> dS(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const T inner = A.row(r).dot(dA.row(r));
      dS.row(r) = (A.row(r).array() * (dA.row(r).array() - inner)).matrix();
    }
    dS *= scale;
    dQ.middleCols(off, head_dim).noalias() = dS * cache.K.middleCols(off, head_dim);
    dK.middleCols(off, head_dim).noalias() = dS.transpose() * cache.Q.middleCols(off, head_dim);
  }
  grad.Wq.noalias() += x.transpose() * dQ;
  grad.Wk.noalias() += x.transpose() * dK;
  grad.Wv.noalias() += x.transpose() * dV;
  Mat<T> dx = dQ * Wq.transpose();
  dx.noalias() += dK * Wk.transpose();
  dx.noalias() += dV * Wv.transpose();
  return dx;
}

template <typename T>
void Mha<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.emplace_back(prefix + "Wq", &Wq);
  out.emplace_back(prefix + "Wk", &Wk);
  out.emplace_back(prefix + "Wv", &Wv);
  out.emplace_back(prefix + "Wo", &Wo);
}

#define AVF_INSTANTIATE_LAYERS(T)                                                                  \
  template struct Dense<T>;                                                                        \
  template struct Conv1d<T>;                                                                       \
  template struct Conv1dMultiWidth<T>;                                                             \
  template struct Lstm<T>;                                                                         \
  template struct AttentionPool<T>;                                                                \
  template struct Mha<T>;                                                                          \
  template Mat<T> activate<T>(const Mat<T>&, Activation);                                          \
  template Mat<T> activate_backward<T>(const Mat<T>&, const Mat<T>&, Activation);                  \
  template Row<T> global_pool<T>(const Mat<T>&, PoolKind, const Mask&, PoolCache<T>*);             \
  template Mat<T> global_pool_backward<T>(Eigen::Index, const Row<T>&, PoolKind, const Mask&,      \
                                          const PoolCache<T>&);

AVF_INSTANTIATE_LAYERS(float)
AVF_INSTANTIATE_LAYERS(double)

}  // namespace avf::nn
