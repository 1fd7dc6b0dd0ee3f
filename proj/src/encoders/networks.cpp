#include "avf/encoders.hpp"
#include "avf/error.hpp"

namespace avf::enc {

using nn::Mat;
using nn::Row;

namespace {

template <typename T>
Mat<T> relu_grad(const Mat<T>& y, const Mat<T>& dy) {
  return nn::activate_backward(y, dy, nn::Activation::relu);
}

template <typename T>
Row<T> relu_grad(const Row<T>& y, const Row<T>& dy) {
  return (y.array() > T(0)).select(dy, T(0));
}

template <typename T>
Mat<T> zero_extend(const Mat<T>& x, Eigen::Index rows) {
  Mat<T> out = Mat<T>::Zero(rows, x.cols());
  const Eigen::Index keep = std::min(rows, x.rows());
  out.topRows(keep) = x.topRows(keep);
  return out;
}

template <typename T>
const auto& tape_as(const Tape& t) {
  return static_cast<const T&>(t);
}

// --- vis_cnn1d ------------------------------------------------------------------------
// Full-width convolutions of every configured width, per-width global max
// pooling + ReLU, concatenation (the representation), FC + ReLU, linear head.
// The input is zero-extended by (max width - 1) rows so every real frame
// starts one window; only windows starting at a real frame are pooled.

template <typename T>
class VisCnn1d final : public Network<T> {
 public:
  VisCnn1d() = default;
  VisCnn1d(const EncoderConfig& c, Rng& trunk, Rng& head) {
    conv_ = nn::Conv1dMultiWidth<T>::init(c.conv_widths, c.input_dim, c.conv_channels, trunk);
    const Eigen::Index rep = static_cast<Eigen::Index>(c.conv_widths.size()) * c.conv_channels;
    fc_ = nn::Dense<T>::init(rep, c.fc_hidden, trunk);
    head_ = nn::Dense<T>::init(c.fc_hidden, c.output_dim(), head);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<VisCnn1d>(*this); }
  std::unique_ptr<Network<T>> zeros_like() const override {
    auto z = std::make_unique<VisCnn1d>();
    z->conv_ = conv_.zeros_like();
    z->fc_ = fc_.zeros_like();
    z->head_ = head_.zeros_like();
    return z;
  }
  void collect(nn::ParamList<T>& out) override {
    conv_.collect("conv.", out);
    fc_.collect("fc.", out);
    head_.collect("head.", out);
  }
  Eigen::Index representation_dim() const override { return fc_.in_dim(); }
  Eigen::Index output_dim() const override { return head_.out_dim(); }

  NetOutput<T> forward(const Mat<T>& x, std::unique_ptr<Tape>* tape) const override {
    auto tp = std::make_unique<Tp>();
    const Eigen::Index n = x.rows();
    tp->n = n;
    tp->xe = zero_extend(x, n + conv_.max_width() - 1);
    const auto maps = conv_.forward(tp->xe);
    const Eigen::Index C = conv_.filters.front().out_dim();
    tp->rep = Row<T>(static_cast<Eigen::Index>(maps.size()) * C);
    tp->pools.resize(maps.size());
    tp->map_rows.resize(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      nn::Mask m(static_cast<std::size_t>(maps[i].rows()), false);
      std::fill(m.begin(), m.begin() + n, true);
      const Row<T> pooled = nn::global_pool(maps[i], nn::PoolKind::max, m, &tp->pools[i]);
      tp->rep.segment(static_cast<Eigen::Index>(i) * C, C) = pooled.cwiseMax(T(0));
      tp->map_rows[i] = maps[i].rows();
    }
    tp->h1 = nn::activate<T>(fc_.forward(tp->rep), nn::Activation::relu);
    NetOutput<T> out{tp->rep, head_.forward(tp->h1)};
    if (tape) *tape = std::move(tp);
    return out;
  }

  Mat<T> backward(const Tape& t, const Row<T>& dpred, Network<T>& g_) const override {
    const auto& tp = tape_as<Tp>(t);
    auto& g = static_cast<VisCnn1d&>(g_);
    const Mat<T> dh1 = head_.backward(tp.h1, dpred, g.head_);
    const Mat<T> drep = fc_.backward(tp.rep, relu_grad<T>(tp.h1, dh1), g.fc_);
    const Eigen::Index C = conv_.filters.front().out_dim();
    std::vector<Mat<T>> dmaps;
    for (std::size_t i = 0; i < conv_.filters.size(); ++i) {
      const auto off = static_cast<Eigen::Index>(i) * C;
      const Row<T> dpool = relu_grad<T>(Row<T>(tp.rep.segment(off, C)), Row<T>(drep.row(0).segment(off, C)));
      dmaps.push_back(nn::global_pool_backward<T>(tp.map_rows[i], dpool, nn::PoolKind::max, {}, tp.pools[i]));
    }
    return conv_.backward(tp.xe, dmaps, g.conv_).topRows(tp.n);
  }

 private:
  struct Tp : Tape {
    Eigen::Index n = 0;
    Mat<T> xe;
    std::vector<nn::PoolCache<T>> pools;
    std::vector<Eigen::Index> map_rows;
    Row<T> rep;
    Mat<T> h1;
  };
  nn::Conv1dMultiWidth<T> conv_;
  nn::Dense<T> fc_, head_;
};

// --- vis_lstm_attn ----------------------------------------------------------------------
// LSTM over frames, additive attention pooling (the representation),
// FC + ReLU, linear head.

template <typename T>
class VisLstmAttn final : public Network<T> {
 public:
  VisLstmAttn() = default;
  VisLstmAttn(const EncoderConfig& c, Rng& trunk, Rng& head) {
    const int att = c.att_dim > 0 ? c.att_dim : c.lstm_hidden;
    lstm_ = nn::Lstm<T>::init(c.input_dim, c.lstm_hidden, trunk);
    att_ = nn::AttentionPool<T>::init(c.lstm_hidden, att, trunk);
    fc_ = nn::Dense<T>::init(c.lstm_hidden, c.fc_hidden, trunk);
    head_ = nn::Dense<T>::init(c.fc_hidden, c.output_dim(), head);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<VisLstmAttn>(*this); }
  std::unique_ptr<Network<T>> zeros_like() const override {
    auto z = std::make_unique<VisLstmAttn>();
    z->lstm_ = lstm_.zeros_like();
    z->att_ = att_.zeros_like();
    z->fc_ = fc_.zeros_like();
    z->head_ = head_.zeros_like();
    return z;
  }
  void collect(nn::ParamList<T>& out) override {
    lstm_.collect("lstm.", out);
    att_.collect("att.", out);
    fc_.collect("fc.", out);
    head_.collect("head.", out);
  }
  Eigen::Index representation_dim() const override { return lstm_.hidden(); }
  Eigen::Index output_dim() const override { return head_.out_dim(); }

  NetOutput<T> forward(const Mat<T>& x, std::unique_ptr<Tape>* tape) const override {
    auto tp = std::make_unique<Tp>();
    tp->x = x;
    tp->H = lstm_.forward(x, {}, tp->lstm);
    tp->ctx = att_.forward(tp->H, {}, tp->att);
    tp->h1 = nn::activate<T>(fc_.forward(tp->ctx), nn::Activation::relu);
    NetOutput<T> out{tp->ctx, head_.forward(tp->h1)};
    if (tape) *tape = std::move(tp);
    return out;
  }

  Mat<T> backward(const Tape& t, const Row<T>& dpred, Network<T>& g_) const override {
    const auto& tp = tape_as<Tp>(t);
    auto& g = static_cast<VisLstmAttn&>(g_);
    const Mat<T> dh1 = head_.backward(tp.h1, dpred, g.head_);
    const Mat<T> dctx = fc_.backward(tp.ctx, relu_grad<T>(tp.h1, dh1), g.fc_);
    const Mat<T> dH = att_.backward(tp.H, {}, tp.att, Row<T>(dctx.row(0)), g.att_);
    return lstm_.backward(tp.x, {}, tp.lstm, dH, g.lstm_);
  }

 private:
  struct Tp : Tape {
    Mat<T> x, H;
    nn::LstmCache<T> lstm;
    nn::AttentionCache<T> att;
    Row<T> ctx;
    Mat<T> h1;
  };
  nn::Lstm<T> lstm_;
  nn::AttentionPool<T> att_;
  nn::Dense<T> fc_, head_;
};

// --- text_mha ------------------------------------------------------------------------------
// Multi-head self-attention, mean over tokens, FC + ReLU (the
// representation), linear head.

template <typename T>
class TextMha final : public Network<T> {
 public:
  TextMha() = default;
  TextMha(const EncoderConfig& c, Rng& trunk, Rng& head) {
    mha_ = nn::Mha<T>::init(c.input_dim, c.mha_heads, c.mha_head_dim, trunk);
    fc_ = nn::Dense<T>::init(c.input_dim, c.fc_hidden, trunk);
    head_ = nn::Dense<T>::init(c.fc_hidden, c.output_dim(), head);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<TextMha>(*this); }
  std::unique_ptr<Network<T>> zeros_like() const override {
    auto z = std::make_unique<TextMha>();
    z->mha_ = mha_.zeros_like();
    z->fc_ = fc_.zeros_like();
    z->head_ = head_.zeros_like();
    return z;
  }
  void collect(nn::ParamList<T>& out) override {
    mha_.collect("mha.", out);
    fc_.collect("fc.", out);
    head_.collect("head.", out);
  }
  Eigen::Index representation_dim() const override { return fc_.out_dim(); }
  Eigen::Index output_dim() const override { return head_.out_dim(); }

  NetOutput<T> forward(const Mat<T>& x, std::unique_ptr<Tape>* tape) const override {
    auto tp = std::make_unique<Tp>();
    tp->x = x;
    const Mat<T> Y = mha_.forward(x, {}, tp->mha);
    tp->pooled = nn::global_pool<T>(Y, nn::PoolKind::avg, {}, &tp->pool);
    tp->h1 = nn::activate<T>(fc_.forward(tp->pooled), nn::Activation::relu);
    NetOutput<T> out{tp->h1.row(0), head_.forward(tp->h1)};
    if (tape) *tape = std::move(tp);
    return out;
  }

  Mat<T> backward(const Tape& t, const Row<T>& dpred, Network<T>& g_) const override {
    const auto& tp = tape_as<Tp>(t);
    auto& g = static_cast<TextMha&>(g_);
    const Mat<T> dh1 = head_.backward(tp.h1, dpred, g.head_);
    const Mat<T> dpooled = fc_.backward(tp.pooled, relu_grad<T>(tp.h1, dh1), g.fc_);
    const Mat<T> dY =
        nn::global_pool_backward<T>(tp.x.rows(), Row<T>(dpooled.row(0)), nn::PoolKind::avg, {}, tp.pool);
    return mha_.backward(tp.x, {}, tp.mha, dY, g.mha_);
  }

 private:
  struct Tp : Tape {
    Mat<T> x;
    nn::MhaCache<T> mha;
    nn::PoolCache<T> pool;
    Row<T> pooled;
    Mat<T> h1;
  };
  nn::Mha<T> mha_;
  nn::Dense<T> fc_, head_;
};

// --- aud_conv1d ----------------------------------------------------------------------------
// Strided 1D conv stack with ReLU over the raw waveform; each layer's input
// is zero-extended so it yields ceil(len / stride) outputs. Global max pool
// of the last layer is the representation; linear head.

template <typename T>
class AudConv1d final : public Network<T> {
 public:
  AudConv1d() = default;
  AudConv1d(const EncoderConfig& c, Rng& trunk, Rng& head) {
    Eigen::Index in = c.input_dim;
    for (std::size_t i = 0; i < c.aud_channels.size(); ++i) {
      layers_.push_back(nn::Conv1d<T>::init(c.aud_kernels[i], c.aud_strides[i], in, c.aud_channels[i], trunk));
      in = c.aud_channels[i];
    }
    head_ = nn::Dense<T>::init(in, c.output_dim(), head);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<AudConv1d>(*this); }
  std::unique_ptr<Network<T>> zeros_like() const override {
    auto z = std::make_unique<AudConv1d>();
    for (const auto& l : layers_) z->layers_.push_back(l.zeros_like());
    z->head_ = head_.zeros_like();
    return z;
  }
  void collect(nn::ParamList<T>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("conv" + std::to_string(i + 1) + ".", out);
    head_.collect("head.", out);
  }
  Eigen::Index representation_dim() const override { return head_.in_dim(); }
  Eigen::Index output_dim() const override { return head_.out_dim(); }

  NetOutput<T> forward(const Mat<T>& x, std::unique_ptr<Tape>* tape) const override {
    auto tp = std::make_unique<Tp>();
    Mat<T> a = x;
    for (const auto& layer : layers_) {
      const Eigen::Index len = a.rows();
      const Eigen::Index out_len = (len + layer.stride - 1) / layer.stride;
      tp->in_rows.push_back(len);
      tp->inputs.push_back(zero_extend(a, (out_len - 1) * layer.stride + layer.width));
      a = nn::activate<T>(layer.forward(tp->inputs.back()), nn::Activation::relu);
      tp->acts.push_back(a);
    }
    tp->rep = nn::global_pool<T>(a, nn::PoolKind::max, {}, &tp->pool);
    NetOutput<T> out{tp->rep, head_.forward(tp->rep)};
    if (tape) *tape = std::move(tp);
    return out;
  }

  Mat<T> backward(const Tape& t, const Row<T>& dpred, Network<T>& g_) const override {
    const auto& tp = tape_as<Tp>(t);
    auto& g = static_cast<AudConv1d&>(g_);
    const Mat<T> drep = head_.backward(tp.rep, dpred, g.head_);
    Mat<T> da = nn::global_pool_backward<T>(tp.acts.back().rows(), Row<T>(drep.row(0)), nn::PoolKind::max, {},
                                            tp.pool);
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Mat<T> dz = relu_grad<T>(tp.acts[i], da);
      da = zero_extend(layers_[i].backward(tp.inputs[i], dz, g.layers_[i]), tp.in_rows[i]);
    }
    return da;
  }

 private:
  struct Tp : Tape {
    std::vector<Eigen::Index> in_rows;
    std::vector<Mat<T>> inputs, acts;
    nn::PoolCache<T> pool;
    Row<T> rep;
  };
  std::vector<nn::Conv1d<T>> layers_;
  nn::Dense<T> head_;
};

// --- aud_mlp -------------------------------------------------------------------------------------
// FC + ReLU stack over one feature vector; the last hidden layer is the
// representation; linear head.

template <typename T>
class AudMlp final : public Network<T> {
 public:
  AudMlp() = default;
  AudMlp(const EncoderConfig& c, Rng& trunk, Rng& head) {
    Eigen::Index in = c.input_dim;
    for (int h : c.mlp_hidden) {
      layers_.push_back(nn::Dense<T>::init(in, h, trunk));
      in = h;
    }
    head_ = nn::Dense<T>::init(in, c.output_dim(), head);
  }

  std::unique_ptr<Network<T>> clone() const override { return std::make_unique<AudMlp>(*this); }
  std::unique_ptr<Network<T>> zeros_like() const override {
    auto z = std::make_unique<AudMlp>();
    for (const auto& l : layers_) z->layers_.push_back(l.zeros_like());
    z->head_ = head_.zeros_like();
    return z;
  }
  void collect(nn::ParamList<T>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("fc" + std::to_string(i + 1) + ".", out);
    head_.collect("head.", out);
  }
  Eigen::Index representation_dim() const override { return head_.in_dim(); }
  Eigen::Index output_dim() const override { return head_.out_dim(); }

  NetOutput<T> forward(const Mat<T>& x, std::unique_ptr<Tape>* tape) const override {
    if (x.rows() != 1) throw ConfigError("aud_mlp expects a single feature vector");
    auto tp = std::make_unique<Tp>();
    tp->acts.push_back(x);
    for (const auto& l : layers_) {
      tp->acts.push_back(nn::activate<T>(l.forward(tp->acts.back()), nn::Activation::relu));
    }
    NetOutput<T> out{tp->acts.back().row(0), head_.forward(tp->acts.back())};
    if (tape) *tape = std::move(tp);
    return out;
  }

  Mat<T> backward(const Tape& t, const Row<T>& dpred, Network<T>& g_) const override {
    const auto& tp = tape_as<Tp>(t);
    auto& g = static_cast<AudMlp&>(g_);
    Mat<T> da = head_.backward(tp.acts.back(), dpred, g.head_);
    for (std::size_t i = layers_.size(); i-- > 0;) {
      da = layers_[i].backward(tp.acts[i], relu_grad<T>(tp.acts[i + 1], da), g.layers_[i]);
    }
    return da;
  }

 private:
  struct Tp : Tape {
    std::vector<Mat<T>> acts;  // input, then each hidden activation
  };
  std::vector<nn::Dense<T>> layers_;
  nn::Dense<T> head_;
};

}  // namespace

template <typename T>
std::unique_ptr<Network<T>> build_network(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng trunk(derive_seed(seed, "trunk"));
  Rng head(derive_seed(seed, "head"));
  switch (config.arch) {
    case Arch::vis_cnn1d: return std::make_unique<VisCnn1d<T>>(config, trunk, head);
    case Arch::vis_lstm_attn: return std::make_unique<VisLstmAttn<T>>(config, trunk, head);
    case Arch::text_mha: return std::make_unique<TextMha<T>>(config, trunk, head);
    case Arch::aud_conv1d: return std::make_unique<AudConv1d<T>>(config, trunk, head);
    case Arch::aud_mlp: return std::make_unique<AudMlp<T>>(config, trunk, head);
  }
  throw ConfigError("unknown architecture");
}

template std::unique_ptr<Network<float>> build_network<float>(const EncoderConfig&, std::uint64_t);
template std::unique_ptr<Network<double>> build_network<double>(const EncoderConfig&, std::uint64_t);

}  // namespace avf::enc
