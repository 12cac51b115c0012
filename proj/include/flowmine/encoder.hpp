#pragma once

// Small bidirectional transformer encoder with a masked-token head, written
// out by hand (forward, reverse-mode gradients, Adam) in double precision.
//
// Layout per layer is post-norm:
//   y = LN1(x + Dropout(MHA(x)))
//   z = LN2(y + Dropout(W2 gelu(W1 y + b1) + b2))
// Row i of every activation matrix is sequence position i.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowmine/error.hpp"
#include "flowmine/random.hpp"
#include "flowmine/tokenizer.hpp"

namespace flowmine {

using Matrix = Eigen::MatrixXd;

struct ModelConfig {
  int vocab_size = 0;
  int layers = 2;
  int heads = 2;
  int d_model = 64;
  int d_ff = 128;
  int max_seq = 32;
  double dropout = 0.1;
  bool tie_head = true;

  bool operator==(const ModelConfig&) const = default;
};

inline void check(const ModelConfig& c) {
  if (c.vocab_size < 4) throw usage_error("model.vocab_size must be >= 4");
  if (c.layers < 1) throw usage_error("model.layers must be >= 1");
  if (c.heads < 1 || c.d_model < 1 || c.d_model % c.heads != 0)
    throw usage_error("model.d_model must be a positive multiple of model.heads");
  if (c.d_ff < 1) throw usage_error("model.d_ff must be >= 1");
  if (c.max_seq < 2) throw usage_error("model.max_seq must be >= 2");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw usage_error("model.dropout must be in [0, 1)");
}

struct LayerParams {
  Matrix wq, wk, wv, wo;       // d x d
  Matrix ln1_gain, ln1_bias;   // 1 x d
  Matrix ff_w1, ff_b1;         // d x ff, 1 x ff
  Matrix ff_w2, ff_b2;         // ff x d, 1 x d
  Matrix ln2_gain, ln2_bias;   // 1 x d
};

struct Parameters {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_seq x d
  std::vector<LayerParams> layers;
  Matrix head_weight;  // d x V; empty when tied to token_embedding
  Matrix head_bias;    // 1 x V

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding);
    f(std::string("position_embedding"), self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "attn.wq", L.wq);
      f(p + "attn.wk", L.wk);
      f(p + "attn.wv", L.wv);
      f(p + "attn.wo", L.wo);
      f(p + "ln1.gain", L.ln1_gain);
      f(p + "ln1.bias", L.ln1_bias);
      f(p + "ff.w1", L.ff_w1);
      f(p + "ff.b1", L.ff_b1);
      f(p + "ff.w2", L.ff_w2);
      f(p + "ff.b2", L.ff_b2);
      f(p + "ln2.gain", L.ln2_gain);
      f(p + "ln2.bias", L.ln2_bias);
    }
    if (self.head_weight.size() > 0) f(std::string("head.weight"), self.head_weight);
    f(std::string("head.bias"), self.head_bias);
  }
};

inline Parameters zeros_like(const Parameters& p) {
  Parameters z = p;
  z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

struct EncoderModel {
  ModelConfig config;
  Parameters params;
};

/// Normal(0, init_std) matrices, zero biases, unit layer-norm gains.
inline EncoderModel init_model(const ModelConfig& cfg, std::uint64_t seed, double init_std = 0.02) {
  check(cfg);
  const int d = cfg.d_model, V = cfg.vocab_size;
  EncoderModel m{cfg, {}};
  auto& p = m.params;
  p.token_embedding = Matrix(V, d);
  p.position_embedding = Matrix(cfg.max_seq, d);
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& L : p.layers) {
    L.wq = Matrix(d, d);
    L.wk = Matrix(d, d);
    L.wv = Matrix(d, d);
    L.wo = Matrix(d, d);
    L.ln1_gain = Matrix::Ones(1, d);
    L.ln1_bias = Matrix::Zero(1, d);
    L.ff_w1 = Matrix(d, cfg.d_ff);
    L.ff_b1 = Matrix::Zero(1, cfg.d_ff);
    L.ff_w2 = Matrix(cfg.d_ff, d);
    L.ff_b2 = Matrix::Zero(1, d);
    L.ln2_gain = Matrix::Ones(1, d);
    L.ln2_bias = Matrix::Zero(1, d);
  }
  if (!cfg.tie_head) p.head_weight = Matrix(d, V);
  p.head_bias = Matrix::Zero(1, V);

  Rng rng(seed);
  p.for_each([&](const std::string& name, Matrix& t) {
    const bool fixed = name.find("bias") != std::string::npos ||
                       name.find("gain") != std::string::npos ||
                       name.ends_with(".b1") || name.ends_with(".b2");
    if (fixed) return;
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = rng.normal(0.0, init_std);
  });
  return m;
}

namespace nn {

inline constexpr double kLayerNormEps = 1e-12;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LayerNormCache {
  Matrix xhat;            // L x d
  Eigen::VectorXd rstd;   // L
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                         LayerNormCache* cache) {
  const auto d = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().sum() / d;
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().sum() / d;
  Eigen::VectorXd rstd = (var.array() + kLayerNormEps).rsqrt();
  Matrix xhat = centered.array().colwise() * rstd.array();
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& c,
                                  Matrix& dgain, Matrix& dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Eigen::VectorXd mean_dxhat = dxhat.rowwise().sum() / d;
  Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum() / d;
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

/// Row-wise softmax over columns whose key flag is set; other entries are 0.
inline Matrix masked_softmax(const Matrix& scores, std::span<const std::uint8_t> key_flags) {
  Matrix a = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (key_flags[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(i, j));
    if (!std::isfinite(mx)) continue;  // no visible keys
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (!key_flags[static_cast<std::size_t>(j)]) continue;
      a(i, j) = std::exp(scores(i, j) - mx);
      sum += a(i, j);
    }
    a.row(i) /= sum;
  }
  return a;
}

}  // namespace nn

/// Activations kept by a forward pass for the backward pass.
struct LayerCache {
  Matrix x;                   // layer input
  Matrix q, k, v;
  std::vector<Matrix> attn;   // per head, L x L
  Matrix context;             // concatenated heads
  Matrix drop_attn;           // dropout mask (empty = none)
  nn::LayerNormCache ln1;
  Matrix y;                   // LN1 output
  Matrix ff_pre;              // y W1 + b1
  Matrix ff_act;              // gelu(ff_pre)
  Matrix drop_ff;
  nn::LayerNormCache ln2;
};

struct SequenceCache {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> flags;
  Matrix drop_embed;
  std::vector<LayerCache> layers;
  Matrix hidden;  // final encoder output, L x d
};

/// Source of dropout masks; absent means inference mode.
class Dropout {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  double rate() const { return rate_; }

  Matrix mask(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    const double keep = 1.0 / (1.0 - rate_);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng_.bernoulli(rate_) ? 0.0 : keep;
    return m;
  }

 private:
  double rate_;
  Rng rng_;
};

namespace detail {

inline const Matrix& head_matrix(const Parameters& p, Matrix& scratch) {
  if (p.head_weight.size() > 0) return p.head_weight;
  scratch = p.token_embedding.transpose();
  return scratch;
}

}  // namespace detail

/// Logits (L x V) for one sequence. Keys with flag 0 are invisible to attention.
inline Matrix forward_sequence(const EncoderModel& model, std::span<const TokenId> ids,
                               std::span<const std::uint8_t> flags, Dropout* dropout = nullptr,
                               SequenceCache* cache = nullptr) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const auto L = static_cast<Eigen::Index>(ids.size());
  if (ids.size() != flags.size())
    throw usage_error("forward: ids and attention flags differ in length");
  if (L < 1 || L > cfg.max_seq)
    throw usage_error("forward: sequence length " + std::to_string(L) + " outside [1, " +
                      std::to_string(cfg.max_seq) + "]");
  const int d = cfg.d_model;
  const int H = cfg.heads;
  const int dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool training = dropout && dropout->rate() > 0.0;

  Matrix x(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto tok = ids[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= cfg.vocab_size)
      throw usage_error("forward: token id " + std::to_string(tok) + " outside vocabulary");
    x.row(i) = p.token_embedding.row(tok) + p.position_embedding.row(i);
  }
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->flags.assign(flags.begin(), flags.end());
    cache->layers.assign(p.layers.size(), {});
    cache->drop_embed.resize(0, 0);
  }
  if (training) {
    Matrix m = dropout->mask(L, d);
    x.array() *= m.array();
    if (cache) cache->drop_embed = std::move(m);
  }

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& W = p.layers[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;
    c.x = x;
    c.q = x * W.wq;
    c.k = x * W.wk;
    c.v = x * W.wv;
    c.context.resize(L, d);
    c.attn.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      Matrix scores = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      c.attn[static_cast<std::size_t>(h)] = nn::masked_softmax(scores, flags);
      c.context.middleCols(h * dh, dh) = c.attn[static_cast<std::size_t>(h)] * c.v.middleCols(h * dh, dh);
    }
    Matrix attn_out = c.context * W.wo;
    if (training) {
      c.drop_attn = dropout->mask(L, d);
      attn_out.array() *= c.drop_attn.array();
    } else {
      c.drop_attn.resize(0, 0);
    }
    c.y = nn::layer_norm(x + attn_out, W.ln1_gain, W.ln1_bias, &c.ln1);

    c.ff_pre = (c.y * W.ff_w1).rowwise() + W.ff_b1.row(0);
    c.ff_act = c.ff_pre.unaryExpr([](double v) { return nn::gelu(v); });
    Matrix ff_out = (c.ff_act * W.ff_w2).rowwise() + W.ff_b2.row(0);
    if (training) {
      c.drop_ff = dropout->mask(L, d);
      ff_out.array() *= c.drop_ff.array();
    } else {
      c.drop_ff.resize(0, 0);
    }
    x = nn::layer_norm(c.y + ff_out, W.ln2_gain, W.ln2_bias, &c.ln2);
  }

  Matrix scratch;
  Matrix logits = (x * detail::head_matrix(p, scratch)).rowwise() + p.head_bias.row(0);
  if (cache) cache->hidden = std::move(x);
  return logits;
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
inline void backward_sequence(const EncoderModel& model, const SequenceCache& c,
                              const Matrix& dlogits, Parameters& grads) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const int d = cfg.d_model;
  const int H = cfg.heads;
  const int dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix scratch;
  const Matrix& head = detail::head_matrix(p, scratch);
  if (p.head_weight.size() > 0) {
    grads.head_weight += c.hidden.transpose() * dlogits;
  } else {
    grads.token_embedding += dlogits.transpose() * c.hidden;
  }
  grads.head_bias += dlogits.colwise().sum();
  Matrix dx = dlogits * head.transpose();

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& W = p.layers[li];
    auto& G = grads.layers[li];
    const auto& lc = c.layers[li];

    // z = LN2(y + drop(ff))
    Matrix dsum2 = nn::layer_norm_backward(dx, W.ln2_gain, lc.ln2, G.ln2_gain, G.ln2_bias);
    Matrix dff = dsum2;
    if (lc.drop_ff.size() > 0) dff.array() *= lc.drop_ff.array();
    G.ff_w2 += lc.ff_act.transpose() * dff;
    G.ff_b2 += dff.colwise().sum();
    Matrix dact = dff * W.ff_w2.transpose();
    Matrix dpre = dact.array() * lc.ff_pre.unaryExpr([](double v) { return nn::gelu_grad(v); }).array();
    G.ff_w1 += lc.y.transpose() * dpre;
    G.ff_b1 += dpre.colwise().sum();
    Matrix dy = dsum2 + dpre * W.ff_w1.transpose();

    // y = LN1(x + drop(attn))
    Matrix dsum1 = nn::layer_norm_backward(dy, W.ln1_gain, lc.ln1, G.ln1_gain, G.ln1_bias);
    Matrix dattn = dsum1;
    if (lc.drop_attn.size() > 0) dattn.array() *= lc.drop_attn.array();
    G.wo += lc.context.transpose() * dattn;
    Matrix dctx = dattn * W.wo.transpose();

    Matrix dq(dctx.rows(), d), dk(dctx.rows(), d), dv(dctx.rows(), d);
    for (int h = 0; h < H; ++h) {
      const auto& A = lc.attn[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      Matrix dA = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * dctx_h;
      Eigen::VectorXd row_dot = (dA.array() * A.array()).rowwise().sum();
      Matrix dS = A.array() * (dA.colwise() - row_dot).array();
      dq.middleCols(h * dh, dh) = dS * lc.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = dS.transpose() * lc.q.middleCols(h * dh, dh) * scale;
    }
    G.wq += lc.x.transpose() * dq;
    G.wk += lc.x.transpose() * dk;
    G.wv += lc.x.transpose() * dv;
    dx = dsum1 + dq * W.wq.transpose() + dk * W.wk.transpose() + dv * W.wv.transpose();
  }

  if (c.drop_embed.size() > 0) dx.array() *= c.drop_embed.array();
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    grads.token_embedding.row(c.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

/// Batched inference: one (seq x V) logits matrix per input row.
inline std::vector<Matrix> forward(const EncoderModel& model,
                                   const std::vector<std::vector<TokenId>>& input_ids,
                                   const std::vector<std::vector<std::uint8_t>>& attention) {
  if (input_ids.size() != attention.size())
    throw usage_error("forward: batch sizes of ids and attention flags differ");
  std::vector<Matrix> out;
  out.reserve(input_ids.size());
  for (std::size_t b = 0; b < input_ids.size(); ++b)
    out.push_back(forward_sequence(model, input_ids[b], attention[b]));
  return out;
}

struct LossResult {
  double loss = 0.0;          // mean over labelled positions
  std::size_t labelled = 0;
  bool no_labels = false;     // batch carried no labelled position; loss defined as 0
};

/// Mean cross-entropy over positions whose label is not kIgnore.
inline LossResult mlm_loss(const std::vector<Matrix>& logits,
                           const std::vector<std::vector<TokenId>>& labels,
                           std::vector<Matrix>* dlogits = nullptr) {
  if (logits.size() != labels.size()) throw usage_error("mlm_loss: batch size mismatch");
  LossResult r;
  for (const auto& row : labels)
    for (auto t : row) r.labelled += t != kIgnore;
  if (dlogits) {
    dlogits->clear();
    for (const auto& lg : logits) dlogits->push_back(Matrix::Zero(lg.rows(), lg.cols()));
  }
  if (r.labelled == 0) {
    r.no_labels = true;
    return r;
  }
  const double inv = 1.0 / static_cast<double>(r.labelled);
  double total = 0.0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    const auto& lg = logits[b];
    if (static_cast<std::size_t>(lg.rows()) < labels[b].size() &&
        std::any_of(labels[b].begin() + lg.rows(), labels[b].end(),
                    [](TokenId t) { return t != kIgnore; }))
      throw usage_error("mlm_loss: label beyond logits length");
    for (Eigen::Index i = 0; i < lg.rows() && static_cast<std::size_t>(i) < labels[b].size(); ++i) {
      const auto target = labels[b][static_cast<std::size_t>(i)];
      if (target == kIgnore) continue;
      if (target < 0 || target >= lg.cols()) throw usage_error("mlm_loss: label outside vocabulary");
      const double mx = lg.row(i).maxCoeff();
      Eigen::RowVectorXd e = (lg.row(i).array() - mx).exp();
      const double z = e.sum();
      total += -(lg(i, target) - mx - std::log(z));
      if (dlogits) {
        (*dlogits)[b].row(i) = e / z * inv;
        (*dlogits)[b](i, target) -= inv;
      }
    }
  }
  r.loss = total * inv;
  return r;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  bool linear_decay = false;  // scale the rate from 1 down to 1/steps over the whole run
  AdamConfig adam;
  std::uint64_t seed = 0;
  MaskConfig mask;
};

inline void check(const TrainConfig& tc) {
  if (tc.epochs < 1) throw usage_error("train.epochs must be >= 1");
  if (tc.batch_size < 1) throw usage_error("train.batch_size must be >= 1");
  if (!(tc.learning_rate > 0.0)) throw usage_error("train.learning_rate must be > 0");
  check(tc.mask);
}

/// Owns optimizer state and performs single-writer parameter updates.
class Trainer {
 public:
  Trainer(EncoderModel& model, const TrainConfig& tc)
      : model_(model),
        tc_(tc),
        m_(zeros_like(model.params)),
        v_(zeros_like(model.params)),
        dropout_(model.config.dropout, derive_seed(tc.seed, "dropout")),
        lr_(tc.learning_rate) {}

  void set_learning_rate(double lr) { lr_ = lr; }

  /// Gradients for a batch without touching parameters. Dropout is applied
  /// when `with_dropout` is set.
  LossResult gradients(std::span<const TrainSequence> batch, Parameters& grads,
                       bool with_dropout) {
    grads = zeros_like(model_.params);
    std::vector<Matrix> logits;
    std::vector<std::vector<TokenId>> labels;
    std::vector<SequenceCache> caches(batch.size());
    Dropout* drop = with_dropout ? &dropout_ : nullptr;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = batch[b];
      // Trailing padding changes nothing at real positions, so it is skipped.
      const auto n = std::max<std::size_t>(1, s.length());
      logits.push_back(forward_sequence(model_, std::span(s.input_ids).first(n),
                                        std::span(s.attention).first(n), drop, &caches[b]));
      labels.emplace_back(s.labels.begin(), s.labels.begin() + static_cast<long>(n));
    }
    std::vector<Matrix> dlogits;
    auto loss = mlm_loss(logits, labels, &dlogits);
    if (!loss.no_labels)
      for (std::size_t b = 0; b < batch.size(); ++b)
        backward_sequence(model_, caches[b], dlogits[b], grads);
    return loss;
  }

  /// One optimizer step on a masked batch. Throws if any gradient is non-finite.
  LossResult step(std::span<const TrainSequence> batch) {
    Parameters grads;
    auto loss = gradients(batch, grads, true);
    if (loss.no_labels) return loss;
    grads.for_each([](const std::string& name, const Matrix& g) {
      if (!g.allFinite()) throw internal_error("non-finite gradient in tensor '" + name + "'");
    });
    ++t_;
    const double b1 = tc_.adam.beta1, b2 = tc_.adam.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::vector<Matrix*> ps, gs, ms, vs;
    model_.params.for_each([&](const std::string&, Matrix& x) { ps.push_back(&x); });
    grads.for_each([&](const std::string&, Matrix& x) { gs.push_back(&x); });
    m_.for_each([&](const std::string&, Matrix& x) { ms.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix& x) { vs.push_back(&x); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& g = *gs[i];
      *ms[i] = b1 * *ms[i] + (1.0 - b1) * g;
      *vs[i] = b2 * *vs[i] + (1.0 - b2) * g.cwiseProduct(g);
      Matrix update = (ms[i]->array() / c1) / ((vs[i]->array() / c2).sqrt() + tc_.adam.epsilon);
      *ps[i] -= lr_ * update;
    }
    model_.params.for_each([](const std::string& name, const Matrix& x) {
      if (!x.allFinite()) throw internal_error("non-finite parameter in tensor '" + name + "'");
    });
    return loss;
  }

 private:
  EncoderModel& model_;
  TrainConfig tc_;
  Parameters m_, v_;
  Dropout dropout_;
  double lr_;
  long t_ = 0;
};

/// Loss over a masked corpus with dropout off.
inline LossResult evaluate_loss(const EncoderModel& model, std::span<const TrainSequence> corpus) {
  std::vector<Matrix> logits;
  std::vector<std::vector<TokenId>> labels;
  for (const auto& s : corpus) {
    const auto n = std::max<std::size_t>(1, s.length());
    logits.push_back(forward_sequence(model, std::span(s.input_ids).first(n),
                                      std::span(s.attention).first(n)));
    labels.emplace_back(s.labels.begin(), s.labels.begin() + static_cast<long>(n));
  }
  return mlm_loss(logits, labels);
}

struct TrainResult {
  double initial_loss = 0.0;         // before any update, first epoch's masking
  std::vector<double> history;       // per-epoch mean loss over labelled tokens
};

/// Trains on token windows, re-masking every epoch from the mask seed stream.
inline TrainResult train(EncoderModel& model, const std::vector<std::vector<TokenId>>& windows,
                         const MessageVocab& vocab, const TrainConfig& tc,
                         const std::function<void(int, double)>& on_epoch = {}) {
  check(tc);
  if (windows.empty()) throw usage_error("train: empty corpus");
  if (static_cast<int>(vocab.size()) != model.config.vocab_size)
    throw usage_error("train: vocabulary size does not match the model");
  Trainer trainer(model, tc);
  TrainResult result;
  const auto max_len = static_cast<std::size_t>(model.config.max_seq);
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  const double total_steps = static_cast<double>(tc.epochs) * static_cast<double>((windows.size() + bs - 1) / bs);
  double steps_done = 0.0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    MaskConfig mc = tc.mask;
    mc.seed = derive_seed(tc.mask.seed, static_cast<std::uint64_t>(epoch));
    const auto corpus = mask_batch(windows, vocab, mc, max_len);
    if (epoch == 0) result.initial_loss = evaluate_loss(model, corpus).loss;

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(derive_seed(tc.seed, "order"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double weighted = 0.0;
    std::size_t labelled = 0;
    std::vector<TrainSequence> batch;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      const auto end = std::min(order.size(), start + bs);
      for (auto i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
      if (tc.linear_decay) trainer.set_learning_rate(tc.learning_rate * (1.0 - steps_done / total_steps));
      steps_done += 1.0;
      const auto r = trainer.step(batch);
      weighted += r.loss * static_cast<double>(r.labelled);
      labelled += r.labelled;
    }
    const double mean = labelled ? weighted / static_cast<double>(labelled) : 0.0;
    result.history.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Next-message scoring

enum class ScoreMode {
  absolute,      // softmax probability over message tokens
  renormalized,  // probability divided by the best candidate's probability
};

/// Probability distribution over message tokens (index 0 = token 3) for the
/// position after `prefix`. Only the last max_seq-1 prefix tokens are used.
inline Eigen::VectorXd next_message_distribution(const EncoderModel& model,
                                                 std::span<const TokenId> prefix) {
  const auto keep = std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(model.config.max_seq - 1));
  std::vector<TokenId> ids(prefix.end() - static_cast<long>(keep), prefix.end());
  ids.push_back(kMask);
  std::vector<std::uint8_t> flags(ids.size(), 1);
  const Matrix logits = forward_sequence(model, ids, flags);
  const auto last = logits.rows() - 1;
  const auto n = model.config.vocab_size - kFirstMessageToken;
  Eigen::VectorXd row = logits.row(last).segment(kFirstMessageToken, n).transpose();
  Eigen::VectorXd e = (row.array() - row.maxCoeff()).exp();
  return e / e.sum();
}

/// Scores for `candidates` (message token ids) as the next message after `prefix`.
inline std::vector<double> score_next(const EncoderModel& model, const MessageVocab& vocab,
                                      std::span<const TokenId> prefix,
                                      std::span<const TokenId> candidates,
                                      ScoreMode mode = ScoreMode::renormalized) {
  if (candidates.empty()) throw usage_error("score_next: empty candidate list");
  if (static_cast<int>(vocab.size()) != model.config.vocab_size)
    throw usage_error("score_next: vocabulary size does not match the model");
  for (auto c : candidates)
    if (!vocab.is_message_token(c)) throw usage_error("score_next: candidate is not a message token");
  const auto dist = next_message_distribution(model, prefix);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (auto c : candidates) out.push_back(dist(c - kFirstMessageToken));
  if (mode == ScoreMode::renormalized) {
    const double best = *std::max_element(out.begin(), out.end());
    for (auto& s : out) s = best > 0.0 ? s / best : 0.0;
  }
  return out;
}

}  // namespace flowmine
