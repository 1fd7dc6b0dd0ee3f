#pragma once

#include <string>
#include <vector>

#include "avf/nn/tensor.hpp"

// Layers of the fixed architectures. Each layer type doubles as its own
// gradient accumulator: `backward` adds parameter gradients into a second
// instance of the same type (see zeros_like) and returns the input gradient.
// Forward passes that need intermediate values for backward fill a
// caller-owned cache, so one parameter set can serve many samples at once.

namespace avf::nn {

// --- dense ------------------------------------------------------------------

template <typename T>
struct Dense {
  Mat<T> W;  // in x out
  Mat<T> b;  // 1 x out

  static Dense init(Eigen::Index in, Eigen::Index out, Rng& rng);
  Dense zeros_like() const;

  Eigen::Index in_dim() const { return W.rows(); }
  Eigen::Index out_dim() const { return W.cols(); }

  /// y = xW + b for x of shape batch x in.
  Mat<T> forward(const Mat<T>& x) const;
  /// Accumulates dW, db into `grad`; returns dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Dense& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

// --- activations --------------------------------------------------------------

enum class Activation { relu, tanh, softmax_lastdim };

template <typename T>
Mat<T> activate(const Mat<T>& x, Activation kind);

/// Gradient w.r.t. the activation input, given its output `y`.
template <typename T>
Mat<T> activate_backward(const Mat<T>& y, const Mat<T>& dy, Activation kind);

// --- 1D convolution -----------------------------------------------------------

/// Strided "valid" temporal convolution whose filters span the full input
/// width: output row t reads input rows [t*stride, t*stride + width).
template <typename T>
struct Conv1d {
  int width = 1;
  int stride = 1;
  Mat<T> K;  // (width * in) x out_channels
  Mat<T> b;  // 1 x out_channels

  static Conv1d init(int width, int stride, Eigen::Index in, Eigen::Index out, Rng& rng);
  Conv1d zeros_like() const;

  Eigen::Index in_dim() const { return K.rows() / width; }
  Eigen::Index out_dim() const { return K.cols(); }
  Eigen::Index output_length(Eigen::Index frames) const;

  Mat<T> forward(const Mat<T>& x) const;
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Conv1d& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

/// Parallel stride-1 convolutions of strictly increasing widths over the
/// same input (the text-CNN layout); default widths {2, 3, 4, 5}.
template <typename T>
struct Conv1dMultiWidth {
  std::vector<Conv1d<T>> filters;

  static Conv1dMultiWidth init(const std::vector<int>& widths, Eigen::Index in,
                               Eigen::Index channels, Rng& rng);
  Conv1dMultiWidth zeros_like() const;
  int max_width() const;

  /// One (frames - w + 1) x channels map per width. Throws ConfigError when
  /// frames < max width.
  std::vector<Mat<T>> forward(const Mat<T>& x) const;
  Mat<T> backward(const Mat<T>& x, const std::vector<Mat<T>>& dmaps, Conv1dMultiWidth& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

// --- pooling -------------------------------------------------------------------

enum class PoolKind { max, avg };

template <typename T>
struct PoolCache {
  std::vector<Eigen::Index> argmax;  // per channel, max pooling only
  Eigen::Index valid = 0;
};

/// Per-channel max or mean over valid time steps. Throws if none is valid.
template <typename T>
Row<T> global_pool(const Mat<T>& map, PoolKind kind, const Mask& mask, PoolCache<T>* cache = nullptr);

/// Max pooling routes each channel's gradient to its arg-max step (earliest
/// on ties); average pooling spreads it evenly over valid steps.
template <typename T>
Mat<T> global_pool_backward(Eigen::Index frames, const Row<T>& dy, PoolKind kind, const Mask& mask,
                            const PoolCache<T>& cache);

// --- LSTM ------------------------------------------------------------------------

template <typename T>
struct LstmCache {
  Mat<T> gates;   // frames x 4h, post-activation [i | f | o | g]
  Mat<T> c;       // frames x h
  Mat<T> tanh_c;  // frames x h
  Mat<T> h;       // frames x h
};

/// Gate blocks are stored side by side as [input | forget | output | cell].
template <typename T>
struct Lstm {
  Mat<T> W;  // in x 4h
  Mat<T> U;  // h x 4h
  Mat<T> b;  // 1 x 4h

  /// Xavier kernels, forget-gate bias 1, remaining biases 0.
  static Lstm init(Eigen::Index in, Eigen::Index hidden, Rng& rng);
  Lstm zeros_like() const;

  Eigen::Index hidden() const { return U.rows(); }
  Eigen::Index in_dim() const { return W.rows(); }

  /// Zero initial state. A masked step copies the previous (h, c).
  Mat<T> forward(const Mat<T>& x, const Mask& mask, LstmCache<T>& cache) const;
  Mat<T> backward(const Mat<T>& x, const Mask& mask, const LstmCache<T>& cache, const Mat<T>& dH,
                  Lstm& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

// --- additive attention pooling ---------------------------------------------------

template <typename T>
struct AttentionCache {
  Mat<T> V;     // frames x att
  Row<T> a;     // frames
};

/// V = tanh(HW + b), s = Vu, a = softmax(s) over valid frames,
/// context = sum_t a_t h_t.
template <typename T>
struct AttentionPool {
  Mat<T> W;  // hidden x att
  Mat<T> b;  // 1 x att
  Mat<T> u;  // att x 1

  static AttentionPool init(Eigen::Index hidden, Eigen::Index att, Rng& rng);
  AttentionPool zeros_like() const;

  /// Returns the context vector; frame weights land in cache.a.
  Row<T> forward(const Mat<T>& H, const Mask& mask, AttentionCache<T>& cache) const;
  Mat<T> backward(const Mat<T>& H, const Mask& mask, const AttentionCache<T>& cache,
                  const Row<T>& dcontext, AttentionPool& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

// --- multi-head self-attention ------------------------------------------------------

template <typename T>
struct MhaCache {
  Mat<T> Q, K, V;               // tokens x (heads * head_dim)
  std::vector<Mat<T>> weights;  // per head, tokens x tokens
  Mat<T> concat;                // tokens x (heads * head_dim)
};

/// Scaled dot-product self-attention with `heads` parallel heads; no
/// positional encoding, residual, or normalization.
template <typename T>
struct Mha {
  int heads = 8;
  int head_dim = 64;
  Mat<T> Wq, Wk, Wv;  // model x (heads * head_dim); head h owns columns [h*hd, (h+1)*hd)
  Mat<T> Wo;          // (heads * head_dim) x model

  static Mha init(Eigen::Index model_dim, int heads, int head_dim, Rng& rng);
  Mha zeros_like() const;

  Eigen::Index model_dim() const { return Wq.rows(); }

  /// Masked tokens are excluded as keys; their own output rows are still
  /// computed. Throws if no token is valid.
  Mat<T> forward(const Mat<T>& x, const Mask& mask, MhaCache<T>& cache) const;
  Mat<T> backward(const Mat<T>& x, const Mask& mask, const MhaCache<T>& cache, const Mat<T>& dy,
                  Mha& grad) const;

  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace avf::nn
