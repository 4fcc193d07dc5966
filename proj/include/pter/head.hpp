#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pter/embed.hpp"
#include "pter/errors.hpp"
#include "pter/labeling.hpp"
#include "pter/rng.hpp"

namespace pter {

struct HeadConfig {
  int hidden_size = 256;  // recurrent units per direction
  int dense_size = 512;
  double dropout_rate = 0.1;
  double l2_weight = 0.001;      // dense-layer kernel only
  double positive_weight = 2.0;  // 1's labels weight in the BCE loss
  double learning_rate = 3e-5;
  int batch_size = 16;
  double early_stop_delta = 0.01;
  int patience = 3;
  double threshold = 0.5;
  int output_size = 100;  // |active users|
  int max_epochs = 100;
  bool early_stopping = true;
  std::uint64_t seed = 0;

  // Head-level changes used for the benchmark triplet datasets: lower
  // learning rate, 500 output users, unweighted loss, a fixed four epochs.
  static HeadConfig extra_preset() {
    HeadConfig cfg;
    cfg.learning_rate = 2e-5;
    cfg.output_size = 500;
    cfg.positive_weight = 1.0;
    cfg.max_epochs = 4;
    cfg.early_stopping = false;
    return cfg;
  }

  void validate() const {
    if (hidden_size < 1 || dense_size < 1 || output_size < 1)
      throw ConfigError("layer sizes must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout rate must be in [0,1)");
    if (threshold <= 0.0 || threshold >= 1.0)
      throw ConfigError("classification threshold must be in (0,1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (l2_weight < 0.0 || positive_weight <= 0.0)
      throw ConfigError("loss weights must be non-negative");
  }
};

// Standard LSTM gating: input/forget/output gates with logistic activation,
// tanh candidate, zero initial states.
struct LstmCellParams {
  Eigen::MatrixXd Wi, Ui, Wf, Uf, Wo, Uo, Wg, Ug;  // W*: H x D, U*: H x H
  Eigen::VectorXd bi, bf, bo, bg;
};

struct HeadParams {
  LstmCellParams fwd, bwd;
  Eigen::MatrixXd dense_w;  // dense x 4H
  Eigen::VectorXd dense_b;
  Eigen::MatrixXd out_w;  // out x dense
  Eigen::VectorXd out_b;

  int input_dim() const { return static_cast<int>(fwd.Wi.cols()); }
  int hidden_size() const { return static_cast<int>(fwd.Wi.rows()); }
  int dense_size() const { return static_cast<int>(dense_w.rows()); }
  int output_size() const { return static_cast<int>(out_w.rows()); }
};

namespace detail {

struct TensorView {
  double* data;
  std::size_t size;
};

inline void collect_cell(LstmCellParams& c, std::vector<TensorView>& out) {
  for (Eigen::MatrixXd* m : {&c.Wi, &c.Ui, &c.Wf, &c.Uf, &c.Wo, &c.Uo, &c.Wg, &c.Ug})
    out.push_back({m->data(), static_cast<std::size_t>(m->size())});
  for (Eigen::VectorXd* v : {&c.bi, &c.bf, &c.bo, &c.bg})
    out.push_back({v->data(), static_cast<std::size_t>(v->size())});
}

}  // namespace detail

// Every trainable tensor, in a fixed order shared by the optimiser, the
// serialised format and the gradient checker.
inline std::vector<detail::TensorView> flat_tensors(HeadParams& p) {
  std::vector<detail::TensorView> out;
  detail::collect_cell(p.fwd, out);
  detail::collect_cell(p.bwd, out);
  out.push_back({p.dense_w.data(), static_cast<std::size_t>(p.dense_w.size())});
  out.push_back({p.dense_b.data(), static_cast<std::size_t>(p.dense_b.size())});
  out.push_back({p.out_w.data(), static_cast<std::size_t>(p.out_w.size())});
  out.push_back({p.out_b.data(), static_cast<std::size_t>(p.out_b.size())});
  return out;
}

inline std::size_t parameter_count(HeadParams& p) {
  std::size_t n = 0;
  for (const auto& t : flat_tensors(p)) n += t.size;
  return n;
}

namespace detail {

inline void glorot_fill(Eigen::MatrixXd& m, SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
}

inline void init_cell(LstmCellParams& c, int hidden, int input, SplitMix64& rng) {
  for (Eigen::MatrixXd* m : {&c.Wi, &c.Wf, &c.Wo, &c.Wg}) {
    m->resize(hidden, input);
    glorot_fill(*m, rng);
  }
  for (Eigen::MatrixXd* m : {&c.Ui, &c.Uf, &c.Uo, &c.Ug}) {
    m->resize(hidden, hidden);
    glorot_fill(*m, rng);
  }
  for (Eigen::VectorXd* v : {&c.bi, &c.bf, &c.bo, &c.bg}) v->setZero(hidden);
}

}  // namespace detail

inline HeadParams init_head_params(int input_dim, const HeadConfig& cfg) {
  cfg.validate();
  if (input_dim < 1) throw ConfigError("embedding dimension must be >= 1");
  SplitMix64 rng(fnv1a64_mix(0x48454144u, cfg.seed));
  HeadParams p;
  detail::init_cell(p.fwd, cfg.hidden_size, input_dim, rng);
  detail::init_cell(p.bwd, cfg.hidden_size, input_dim, rng);
  p.dense_w.resize(cfg.dense_size, 4 * cfg.hidden_size);
  detail::glorot_fill(p.dense_w, rng);
  p.dense_b.setZero(cfg.dense_size);
  p.out_w.resize(cfg.output_size, cfg.dense_size);
  detail::glorot_fill(p.out_w, rng);
  p.out_b.setZero(cfg.output_size);
  return p;
}

inline HeadParams zeros_like(const HeadParams& p) {
  HeadParams z = p;
  for (auto& t : flat_tensors(z)) std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

// --- recurrent cell ----------------------------------------------------------

namespace detail {

struct LstmStep {
  Eigen::VectorXd i, f, o, g, c, tanh_c, h;
};

struct LstmCache {
  std::vector<LstmStep> steps;  // indexed by processing step k
  bool reversed = false;
};

inline Eigen::VectorXd sigmoid_v(const Eigen::VectorXd& z) {
  return (1.0 / (1.0 + (-z.array().min(700.0).max(-700.0)).exp())).matrix();
}

// One direction over the sequence; output row t holds the state computed at
// original time index t regardless of direction.
inline Eigen::MatrixXd lstm_forward(const LstmCellParams& p, const Eigen::MatrixXd& input,
                                    bool reverse, LstmCache* cache) {
  const Eigen::Index t_count = input.rows();
  const Eigen::Index hidden = p.Wi.rows();
  if (input.cols() != p.Wi.cols())
    throw DataError("lstm input width " + std::to_string(input.cols()) +
                    " does not match cell input width " + std::to_string(p.Wi.cols()));
  Eigen::MatrixXd out(t_count, hidden);
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(hidden);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(hidden);
  if (cache) {
    cache->steps.resize(static_cast<std::size_t>(t_count));
    cache->reversed = reverse;
  }
  for (Eigen::Index k = 0; k < t_count; ++k) {
    const Eigen::Index t = reverse ? t_count - 1 - k : k;
    const Eigen::VectorXd x = input.row(t).transpose();
    LstmStep s;
    s.i = sigmoid_v(p.Wi * x + p.Ui * h_prev + p.bi);
    s.f = sigmoid_v(p.Wf * x + p.Uf * h_prev + p.bf);
    s.o = sigmoid_v(p.Wo * x + p.Uo * h_prev + p.bo);
    s.g = (p.Wg * x + p.Ug * h_prev + p.bg).array().tanh().matrix();
    s.c = (s.f.array() * c_prev.array() + s.i.array() * s.g.array()).matrix();
    s.tanh_c = s.c.array().tanh().matrix();
    s.h = (s.o.array() * s.tanh_c.array()).matrix();
    out.row(t) = s.h.transpose();
    h_prev = s.h;
    c_prev = s.c;
    if (cache) cache->steps[static_cast<std::size_t>(k)] = std::move(s);
  }
  return out;
}

// Backprop through time for one direction. d_out row t carries dL/dh(t) in
// original time order; cell gradients accumulate into `grads`.
inline void lstm_backward(const LstmCellParams& p, const Eigen::MatrixXd& input,
                          const LstmCache& cache, const Eigen::MatrixXd& d_out,
                          LstmCellParams& grads) {
  const Eigen::Index t_count = input.rows();
  const Eigen::Index hidden = p.Wi.rows();
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hidden);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(hidden);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(hidden);
  for (Eigen::Index k = t_count - 1; k >= 0; --k) {
    const Eigen::Index t = cache.reversed ? t_count - 1 - k : k;
    const LstmStep& s = cache.steps[static_cast<std::size_t>(k)];
    const Eigen::VectorXd& c_prev = k > 0 ? cache.steps[static_cast<std::size_t>(k - 1)].c : zero;
    const Eigen::VectorXd& h_prev = k > 0 ? cache.steps[static_cast<std::size_t>(k - 1)].h : zero;

    const Eigen::VectorXd dh = d_out.row(t).transpose() + dh_next;
    const Eigen::VectorXd dc =
        dc_next.array() + dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square());
    const Eigen::VectorXd da_o =
        dh.array() * s.tanh_c.array() * s.o.array() * (1.0 - s.o.array());
    const Eigen::VectorXd da_i = dc.array() * s.g.array() * s.i.array() * (1.0 - s.i.array());
    const Eigen::VectorXd da_f = dc.array() * c_prev.array() * s.f.array() * (1.0 - s.f.array());
    const Eigen::VectorXd da_g = dc.array() * s.i.array() * (1.0 - s.g.array().square());

    const Eigen::RowVectorXd x_row = input.row(t);
    grads.Wi.noalias() += da_i * x_row;
    grads.Wf.noalias() += da_f * x_row;
    grads.Wo.noalias() += da_o * x_row;
    grads.Wg.noalias() += da_g * x_row;
    const Eigen::RowVectorXd h_row = h_prev.transpose();
    grads.Ui.noalias() += da_i * h_row;
    grads.Uf.noalias() += da_f * h_row;
    grads.Uo.noalias() += da_o * h_row;
    grads.Ug.noalias() += da_g * h_row;
    grads.bi += da_i;
    grads.bf += da_f;
    grads.bo += da_o;
    grads.bg += da_g;

    dh_next = p.Ui.transpose() * da_i + p.Uf.transpose() * da_f + p.Uo.transpose() * da_o +
              p.Ug.transpose() * da_g;
    dc_next = (dc.array() * s.f.array()).matrix();
  }
}

}  // namespace detail

// Bi-directional sequence encoding: row t concatenates the forward state at t
// with the backward state at t (T x 2H).
inline Eigen::MatrixXd bilstm_forward(const HeadParams& p, const Eigen::MatrixXd& embed) {
  if (embed.rows() < 1) throw DataError("bilstm needs at least one time step");
  Eigen::MatrixXd out(embed.rows(), 2 * p.hidden_size());
  out.leftCols(p.hidden_size()) = detail::lstm_forward(p.fwd, embed, false, nullptr);
  out.rightCols(p.hidden_size()) = detail::lstm_forward(p.bwd, embed, true, nullptr);
  return out;
}

// First half column means, second half column maxima (length 4H).
inline Eigen::VectorXd pool_concat(const Eigen::MatrixXd& seq) {
  if (seq.rows() < 1) throw DataError("cannot pool an empty sequence");
  const Eigen::Index width = seq.cols();
  Eigen::VectorXd out(2 * width);
  out.head(width) = seq.colwise().mean().transpose();
  for (Eigen::Index c = 0; c < width; ++c) {
    double best = seq(0, c);
    for (Eigen::Index r = 1; r < seq.rows(); ++r)
      if (seq(r, c) > best) best = seq(r, c);
    out(width + c) = best;
  }
  return out;
}

namespace detail {

struct ForwardCache {
  LstmCache fwd, bwd;
  Eigen::MatrixXd seq;     // T x 2H
  Eigen::VectorXd pooled;  // 4H
  std::vector<Eigen::Index> argmax_row;
  Eigen::VectorXd mask;  // dropout multipliers; empty when inactive
  Eigen::VectorXd dropped, z1, a1, z2, probs;
};

inline void check_finite(const Eigen::MatrixXd& m, const char* layer) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite values produced by layer: ") + layer);
}

}  // namespace detail

// Full head pipeline: bilstm -> mean/max pooling -> dropout (training only,
// inverted scaling) -> dense ReLU -> output -> sigmoid.
inline Eigen::VectorXd head_forward(const HeadParams& p, const Eigen::MatrixXd& embed,
                                    bool training, double dropout_rate, std::uint64_t seed,
                                    detail::ForwardCache* cache = nullptr) {
  detail::ForwardCache local;
  detail::ForwardCache& c = cache ? *cache : local;

  c.seq.resize(embed.rows(), 2 * p.hidden_size());
  c.seq.leftCols(p.hidden_size()) =
      detail::lstm_forward(p.fwd, embed, false, cache ? &c.fwd : nullptr);
  c.seq.rightCols(p.hidden_size()) =
      detail::lstm_forward(p.bwd, embed, true, cache ? &c.bwd : nullptr);
  detail::check_finite(c.seq, "bilstm");

  const Eigen::Index width = c.seq.cols();
  c.pooled.resize(2 * width);
  c.pooled.head(width) = c.seq.colwise().mean().transpose();
  c.argmax_row.assign(static_cast<std::size_t>(width), 0);
  for (Eigen::Index col = 0; col < width; ++col) {
    Eigen::Index best_row = 0;
    for (Eigen::Index r = 1; r < c.seq.rows(); ++r)
      if (c.seq(r, col) > c.seq(best_row, col)) best_row = r;
    c.argmax_row[static_cast<std::size_t>(col)] = best_row;
    c.pooled(width + col) = c.seq(best_row, col);
  }
  detail::check_finite(c.pooled, "pooling");

  if (training && dropout_rate > 0.0) {
    SplitMix64 rng(seed);
    c.mask.resize(c.pooled.size());
    const double keep_scale = 1.0 / (1.0 - dropout_rate);
    for (Eigen::Index i = 0; i < c.mask.size(); ++i)
      c.mask(i) = rng.uniform01() < dropout_rate ? 0.0 : keep_scale;
    c.dropped = c.pooled.cwiseProduct(c.mask);
  } else {
    c.mask.resize(0);
    c.dropped = c.pooled;
  }

  c.z1 = p.dense_w * c.dropped + p.dense_b;
  c.a1 = c.z1.cwiseMax(0.0);
  detail::check_finite(c.a1, "dense");

  c.z2 = p.out_w * c.a1 + p.out_b;
  c.probs = detail::sigmoid_v(c.z2);
  detail::check_finite(c.probs, "output");
  return c.probs;
}

// Mean over labels of -[w*y*ln p + (1-y)*ln(1-p)], probabilities clamped
// to [eps, 1-eps] with eps = 1e-7.
inline double weighted_bce(const Eigen::VectorXd& probs, const std::vector<std::uint8_t>& target,
                           double positive_weight) {
  if (static_cast<std::size_t>(probs.size()) != target.size())
    throw DataError("prediction/target length mismatch");
  constexpr double eps = 1e-7;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const double pj = std::clamp(probs(j), eps, 1.0 - eps);
    const double y = target[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    sum -= positive_weight * y * std::log(pj) + (1.0 - y) * std::log(1.0 - pj);
  }
  return sum / static_cast<double>(probs.size());
}

// dL/dz for the weighted BCE composed with the sigmoid output.
inline Eigen::VectorXd weighted_bce_grad_logits(const Eigen::VectorXd& probs,
                                                const std::vector<std::uint8_t>& target,
                                                double positive_weight) {
  Eigen::VectorXd dz(probs.size());
  const double n = static_cast<double>(probs.size());
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const double pj = probs(j);
    const double y = target[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    dz(j) = ((1.0 - y) * pj - positive_weight * y * (1.0 - pj)) / n;
  }
  return dz;
}

// Accumulates parameter gradients for one sample given dL/dz at the output.
inline void head_backward(const HeadParams& p, const Eigen::MatrixXd& embed,
                          const detail::ForwardCache& c, const Eigen::VectorXd& d_logits,
                          HeadParams& grads) {
  grads.out_w.noalias() += d_logits * c.a1.transpose();
  grads.out_b += d_logits;
  Eigen::VectorXd da1 = p.out_w.transpose() * d_logits;
  Eigen::VectorXd dz1 = (c.z1.array() > 0.0).select(da1, 0.0);
  grads.dense_w.noalias() += dz1 * c.dropped.transpose();
  grads.dense_b += dz1;
  Eigen::VectorXd d_dropped = p.dense_w.transpose() * dz1;
  Eigen::VectorXd d_pooled =
      c.mask.size() > 0 ? Eigen::VectorXd(d_dropped.cwiseProduct(c.mask)) : d_dropped;

  const Eigen::Index width = c.seq.cols();
  const Eigen::Index t_count = c.seq.rows();
  Eigen::MatrixXd d_seq = Eigen::MatrixXd::Zero(t_count, width);
  for (Eigen::Index col = 0; col < width; ++col) {
    const double d_mean = d_pooled(col) / static_cast<double>(t_count);
    for (Eigen::Index r = 0; r < t_count; ++r) d_seq(r, col) += d_mean;
    d_seq(c.argmax_row[static_cast<std::size_t>(col)], col) += d_pooled(width + col);
  }

  const Eigen::Index hidden = p.fwd.Wi.rows();
  detail::lstm_backward(p.fwd, embed, c.fwd, d_seq.leftCols(hidden), grads.fwd);
  detail::lstm_backward(p.bwd, embed, c.bwd, d_seq.rightCols(hidden), grads.bwd);
}

// Scalar loss for one sample, including the dense-layer L2 penalty.
inline double head_loss(const HeadParams& p, const Eigen::MatrixXd& embed,
                        const std::vector<std::uint8_t>& target, double positive_weight,
                        double l2_weight) {
  Eigen::VectorXd probs = head_forward(p, embed, false, 0.0, 0);
  return weighted_bce(probs, target, positive_weight) + l2_weight * p.dense_w.squaredNorm();
}

// Analytic gradient of head_loss (dropout off); used by the checker and tests.
inline HeadParams head_loss_gradients(const HeadParams& p, const Eigen::MatrixXd& embed,
                                      const std::vector<std::uint8_t>& target,
                                      double positive_weight, double l2_weight) {
  detail::ForwardCache cache;
  Eigen::VectorXd probs = head_forward(p, embed, false, 0.0, 0, &cache);
  HeadParams grads = zeros_like(p);
  head_backward(p, embed, cache, weighted_bce_grad_logits(probs, target, positive_weight), grads);
  grads.dense_w += 2.0 * l2_weight * p.dense_w;
  return grads;
}

// --- training ----------------------------------------------------------------

struct TrainHistory {
  std::vector<double> train_loss;  // mean of batch losses per epoch
  std::vector<double> val_loss;    // mean weighted BCE per epoch
  int stopped_epoch = 0;
  int best_epoch = 0;  // 1-based epoch whose parameters are returned
  bool diverged = false;
  std::size_t skipped_empty = 0;  // samples whose text preprocessed to nothing
};

struct TrainResult {
  HeadParams params;
  TrainHistory history;
};

namespace detail {

struct AdamState {
  HeadParams m, v;
  long step = 0;
};

inline void adam_update(HeadParams& params, HeadParams& grads, AdamState& state, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto tp = flat_tensors(params);
  auto tg = flat_tensors(grads);
  auto tm = flat_tensors(state.m);
  auto tv = flat_tensors(state.v);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    for (std::size_t k = 0; k < tp[i].size; ++k) {
      double g = tg[i].data[k];
      double& m = tm[i].data[k];
      double& v = tv[i].data[k];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      tp[i].data[k] -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    }
  }
}

inline void scale_tensors(HeadParams& p, double s) {
  for (auto& t : flat_tensors(p))
    for (std::size_t k = 0; k < t.size; ++k) t.data[k] *= s;
}

struct EmbeddedSample {
  Eigen::MatrixXd embed;
  const std::vector<std::uint8_t>* target;
};

inline std::vector<EmbeddedSample> embed_samples(const std::vector<LabeledSample>& samples,
                                                 const EmbeddingProvider& provider,
                                                 const PreprocessConfig& pre,
                                                 std::size_t* skipped) {
  std::vector<EmbeddedSample> out;
  out.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    std::vector<std::string> tokens = preprocess(s.input_text, pre);
    if (tokens.empty()) {
      if (skipped) ++(*skipped);
      continue;
    }
    out.push_back({contextual_embed(provider, s.review_id, tokens), &s.target});
  }
  return out;
}

}  // namespace detail

// Mini-batch Adam over the training partition, monitoring the validation
// weighted BCE for early stopping. Returns the parameters of the best
// validation epoch. Fully deterministic under a fixed config seed.
inline TrainResult train(const Partitions& parts, const EmbeddingProvider& provider,
                         const PreprocessConfig& pre, const HeadConfig& cfg) {
  cfg.validate();
  if (parts.train.empty()) throw DataError("training partition is empty");
  if (static_cast<int>(parts.train.front().target.size()) != cfg.output_size)
    throw ConfigError("config output size " + std::to_string(cfg.output_size) +
                      " does not match target width " +
                      std::to_string(parts.train.front().target.size()));

  TrainResult result;
  TrainHistory& hist = result.history;
  std::vector<detail::EmbeddedSample> train_set =
      detail::embed_samples(parts.train, provider, pre, &hist.skipped_empty);
  std::vector<detail::EmbeddedSample> val_set =
      detail::embed_samples(parts.validation, provider, pre, &hist.skipped_empty);
  if (train_set.empty()) throw DataError("every training sample preprocessed to empty text");

  HeadParams params = init_head_params(provider.dim(), cfg);
  detail::AdamState adam{zeros_like(params), zeros_like(params), 0};

  double best_val = std::numeric_limits<double>::infinity();
  double monitor_best = std::numeric_limits<double>::infinity();
  int stall = 0;
  std::uint64_t dropout_counter = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 shuffler(fnv1a64_mix(cfg.seed, 0x53485546ULL + static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);

    double epoch_loss_sum = 0.0;
    std::size_t batch_count = 0;
    bool blew_up = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      HeadParams grads = zeros_like(params);
      double batch_bce = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const detail::EmbeddedSample& s = train_set[order[k]];
          detail::ForwardCache cache;
          const std::uint64_t mask_seed = fnv1a64_mix(cfg.seed, 0xD0D0ULL + ++dropout_counter);
          Eigen::VectorXd probs =
              head_forward(params, s.embed, true, cfg.dropout_rate, mask_seed, &cache);
          batch_bce += weighted_bce(probs, *s.target, cfg.positive_weight);
          head_backward(params, s.embed, cache,
                        weighted_bce_grad_logits(probs, *s.target, cfg.positive_weight), grads);
        }
      } catch (const NumericError&) {
        blew_up = true;
        break;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      detail::scale_tensors(grads, inv);
      grads.dense_w += 2.0 * cfg.l2_weight * params.dense_w;
      const double batch_loss = batch_bce * inv + cfg.l2_weight * params.dense_w.squaredNorm();
      if (!std::isfinite(batch_loss)) {
        blew_up = true;
        break;
      }
      detail::adam_update(params, grads, adam, cfg.learning_rate);
      epoch_loss_sum += batch_loss;
      ++batch_count;
    }
    if (blew_up) {
      hist.diverged = true;
      hist.stopped_epoch = epoch;
      break;
    }
    hist.train_loss.push_back(epoch_loss_sum / static_cast<double>(std::max<std::size_t>(1, batch_count)));

    double val = 0.0;
    if (!val_set.empty()) {
      for (const detail::EmbeddedSample& s : val_set)
        val += weighted_bce(head_forward(params, s.embed, false, 0.0, 0), *s.target,
                            cfg.positive_weight);
      val /= static_cast<double>(val_set.size());
    } else {
      val = hist.train_loss.back();
    }
    hist.val_loss.push_back(val);
    hist.stopped_epoch = epoch;

    if (val < best_val) {
      best_val = val;
      hist.best_epoch = epoch;
      result.params = params;
    }

    if (cfg.early_stopping) {
      if (epoch == 1) {
        monitor_best = val;
      } else if (monitor_best - val > cfg.early_stop_delta) {
        monitor_best = val;
        stall = 0;
      } else {
        ++stall;
        if (stall >= cfg.patience) break;
      }
    }
  }

  if (hist.best_epoch == 0) {
    result.params = params;  // divergence on the very first epoch
    hist.best_epoch = hist.stopped_epoch;
  }
  return result;
}

// Inference on one raw review text.
inline Eigen::VectorXd predict(const HeadParams& params, const EmbeddingProvider& provider,
                               const PreprocessConfig& pre, const ReviewId& id,
                               const std::string& text) {
  std::vector<std::string> tokens = preprocess(text, pre);
  if (tokens.empty())
    throw DataError("review '" + id + "' reduces to an empty token sequence");
  return head_forward(params, contextual_embed(provider, id, tokens), false, 0.0, 0);
}

// Label indices with probability strictly greater than the threshold.
inline std::vector<std::size_t> classify(const Eigen::VectorXd& probs, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("classification threshold must be in (0,1)");
  std::vector<std::size_t> active;
  for (Eigen::Index j = 0; j < probs.size(); ++j)
    if (probs(j) > threshold) active.push_back(static_cast<std::size_t>(j));
  return active;
}

// --- PTERHEAD1 ----------------------------------------------------------------
// Header "PTERHEAD1 <D> <H> <dense> <out>", then every tensor in flat_tensors
// order as float32 little-endian, matrices row-major.

inline void save_head_params(const HeadParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  const HeadParams& p = params;
  out << "PTERHEAD1 " << p.input_dim() << ' ' << p.hidden_size() << ' ' << p.dense_size() << ' '
      << p.output_size() << '\n';
  auto write_matrix = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::write_f32(out, m(r, c));
  };
  auto write_vector = [&](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::write_f32(out, v(i));
  };
  auto write_cell = [&](const LstmCellParams& c) {
    for (const Eigen::MatrixXd* m : {&c.Wi, &c.Ui, &c.Wf, &c.Uf, &c.Wo, &c.Uo, &c.Wg, &c.Ug})
      write_matrix(*m);
    for (const Eigen::VectorXd* v : {&c.bi, &c.bf, &c.bo, &c.bg}) write_vector(*v);
  };
  write_cell(p.fwd);
  write_cell(p.bwd);
  write_matrix(p.dense_w);
  write_vector(p.dense_b);
  write_matrix(p.out_w);
  write_vector(p.out_b);
}

inline HeadParams load_head_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::string magic;
  int input_dim = 0, hidden = 0, dense = 0, out_size = 0;
  in >> magic >> input_dim >> hidden >> dense >> out_size;
  if (!in || magic != "PTERHEAD1" || input_dim < 1 || hidden < 1 || dense < 1 || out_size < 1)
    throw DataError("corrupt file (bad header): " + path);
  in.ignore(1);

  HeadParams p;
  auto read_matrix = [&](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<double>(detail::read_f32(in, path));
  };
  auto read_vector = [&](Eigen::VectorXd& v, Eigen::Index n) {
    v.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<double>(detail::read_f32(in, path));
  };
  auto read_cell = [&](LstmCellParams& c) {
    read_matrix(c.Wi, hidden, input_dim);
    read_matrix(c.Ui, hidden, hidden);
    read_matrix(c.Wf, hidden, input_dim);
    read_matrix(c.Uf, hidden, hidden);
    read_matrix(c.Wo, hidden, input_dim);
    read_matrix(c.Uo, hidden, hidden);
    read_matrix(c.Wg, hidden, input_dim);
    read_matrix(c.Ug, hidden, hidden);
    read_vector(c.bi, hidden);
    read_vector(c.bf, hidden);
    read_vector(c.bo, hidden);
    read_vector(c.bg, hidden);
  };
  read_cell(p.fwd);
  read_cell(p.bwd);
  read_matrix(p.dense_w, dense, 4 * hidden);
  read_vector(p.dense_b, dense);
  read_matrix(p.out_w, out_size, dense);
  read_vector(p.out_b, out_size);
  return p;
}

}  // namespace pter
