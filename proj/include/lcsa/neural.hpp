#pragma once

// Recurrent sequence classifiers over occupancy grids: a forward LSTM and a
// bidirectional LSTM whose backward layer restarts from a zero state every
// T_B frames. Training is full backpropagation through time with Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lcsa/core.hpp"
#include "lcsa/grid.hpp"
#include "lcsa/idm.hpp"

namespace lcsa {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Gate rows are stacked input, forget, output, candidate.
struct LstmCellParams {
  MatrixXd W;  // 4H x I
  MatrixXd U;  // 4H x H
  VectorXd b;  // 4H

  Eigen::Index hidden() const { return U.cols(); }
  Eigen::Index input() const { return W.cols(); }

  static LstmCellParams zeros(Eigen::Index input_dim, Eigen::Index hidden_dim) {
    return {MatrixXd::Zero(4 * hidden_dim, input_dim), MatrixXd::Zero(4 * hidden_dim, hidden_dim),
            VectorXd::Zero(4 * hidden_dim)};
  }
};

struct ModelWeights {
  EmbeddingParams embedding;
  LstmCellParams forward;
  std::optional<LstmCellParams> backward;
  MatrixXd Wo;  // 2 x H or 2 x 2H
  VectorXd bo;  // 2

  bool bidirectional() const { return backward.has_value(); }
  Eigen::Index hidden() const { return forward.hidden(); }

  static ModelWeights zeros(int embed_dim, int hidden_dim, bool bidirectional) {
    ModelWeights w;
    w.embedding = {MatrixXd::Zero(embed_dim, kGridCells), VectorXd::Zero(embed_dim)};
    w.forward = LstmCellParams::zeros(kNumRoles * embed_dim, hidden_dim);
    if (bidirectional) w.backward = LstmCellParams::zeros(kNumRoles * embed_dim, hidden_dim);
    w.Wo = MatrixXd::Zero(2, bidirectional ? 2 * hidden_dim : hidden_dim);
    w.bo = VectorXd::Zero(2);
    return w;
  }

  void validate() const {
    const auto e = embedding.b.size();
    const auto h = forward.hidden();
    auto check_cell = [&](const LstmCellParams& c, const char* name) {
      if (c.W.rows() != 4 * h || c.W.cols() != kNumRoles * e || c.U.rows() != 4 * h || c.U.cols() != h ||
          c.b.size() != 4 * h)
        throw ContractError(std::string("inconsistent shapes in ") + name + " cell");
    };
    if (embedding.W.rows() != e || embedding.W.cols() != kGridCells) throw ContractError("bad embedding shape");
    check_cell(forward, "forward");
    if (backward) check_cell(*backward, "backward");
    if (Wo.rows() != 2 || Wo.cols() != (backward ? 2 * h : h) || bo.size() != 2)
      throw ContractError("output layer does not match the recurrent width");
  }
};

/// Named flat views of every parameter tensor, in a fixed order.
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index size;
  bool penalized;  // weight matrices carry the L2 penalty, biases do not
};

inline std::vector<TensorView> tensors(ModelWeights& w) {
  std::vector<TensorView> out{{"embedding.W", w.embedding.W.data(), w.embedding.W.size(), true},
                              {"embedding.b", w.embedding.b.data(), w.embedding.b.size(), false},
                              {"forward.W", w.forward.W.data(), w.forward.W.size(), true},
                              {"forward.U", w.forward.U.data(), w.forward.U.size(), true},
                              {"forward.b", w.forward.b.data(), w.forward.b.size(), false}};
  if (w.backward) {
    out.push_back({"backward.W", w.backward->W.data(), w.backward->W.size(), true});
    out.push_back({"backward.U", w.backward->U.data(), w.backward->U.size(), true});
    out.push_back({"backward.b", w.backward->b.data(), w.backward->b.size(), false});
  }
  out.push_back({"output.W", w.Wo.data(), w.Wo.size(), true});
  out.push_back({"output.b", w.bo.data(), w.bo.size(), false});
  return out;
}

struct TrainConfig {
  double T_F = 10.0;  // seconds, training window
  double T_B = 10.0;  // seconds, backward reset period
  double learning_rate = 1e-3;
  double l2 = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int hidden_dim = 128;
  int embed_dim = 16;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  bool class_weights = false;

  int window_frames() const { return seconds_to_frames(T_F); }
  int block_frames() const { return seconds_to_frames(T_B); }
  void validate() const {
    if (!(T_B <= T_F)) throw ContractError("T_B must not exceed T_F");
    if (!(l2 >= 0)) throw ContractError("l2 must be non-negative");
    if (hidden_dim <= 0 || embed_dim <= 0 || batch_size <= 0 || epochs < 0 || block_frames() <= 0)
      throw ContractError("training sizes must be positive");
  }
};

inline ModelWeights init_weights(const TrainConfig& cfg, bool bidirectional) {
  ModelWeights w = ModelWeights::zeros(cfg.embed_dim, cfg.hidden_dim, bidirectional);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-cfg.init_scale, cfg.init_scale);
  auto fill = [&](MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  };
  auto init_cell = [&](LstmCellParams& c) {
    fill(c.W);
    fill(c.U);
    c.b.setZero();
    c.b.segment(c.hidden(), c.hidden()).setOnes();  // forget gate
  };
  fill(w.embedding.W);
  init_cell(w.forward);
  if (w.backward) init_cell(*w.backward);
  return w;
}

// ---------------------------------------------------------------------------
// Single-step cell

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CellState {
  VectorXd h;
  VectorXd c;
};

inline CellState lstm_cell(const VectorXd& e, const VectorXd& h_prev, const VectorXd& c_prev, const LstmCellParams& p) {
  const auto H = p.hidden();
  if (e.size() != p.input() || h_prev.size() != H || c_prev.size() != H || p.W.rows() != 4 * H ||
      p.b.size() != 4 * H)
    throw ContractError("lstm_cell: shape mismatch");
  const VectorXd a = p.W * e + p.U * h_prev + p.b;
  const VectorXd i = a.segment(0, H).unaryExpr(&logistic);
  const VectorXd f = a.segment(H, H).unaryExpr(&logistic);
  const VectorXd o = a.segment(2 * H, H).unaryExpr(&logistic);
  const VectorXd g = a.segment(3 * H, H).array().tanh();
  CellState s;
  s.c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  s.h = o.cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

struct FrameOutput {
  double p = 0.5;  // probability of class 1
  int o = 0;
};

/// Two-class softmax; returns (p0, p1).
inline std::pair<double, double> softmax2(double z0, double z1) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m);
  const double e1 = std::exp(z1 - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

inline FrameOutput output_layer(const ModelWeights& w, const VectorXd& hidden) {
  const VectorXd z = w.Wo * hidden + w.bo;
  return {softmax2(z(0), z(1)).second, z(1) > z(0) ? 1 : 0};
}

// ---------------------------------------------------------------------------
// Batched sequence engine

/// A sequence as the network sees it: grids plus labels (ignore carries no
/// weight).
struct EncodedSequence {
  std::vector<OccupancyGrid> grids;
  std::vector<Label> labels;
};

inline EncodedSequence encode_sequence(const LabeledSequence& s) {
  EncodedSequence e;
  for (const auto& f : s.frames) {
    e.grids.push_back(encode_grid(f.ctx));
    e.labels.push_back(f.label);
  }
  return e;
}

/// Cut a sequence into consecutive windows of at most `window` frames.
inline std::vector<EncodedSequence> window_sequence(const EncodedSequence& s, int window) {
  std::vector<EncodedSequence> out;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t b = 0; b < s.grids.size(); b += w) {
    const std::size_t e = std::min(s.grids.size(), b + w);
    out.push_back({{s.grids.begin() + static_cast<std::ptrdiff_t>(b), s.grids.begin() + static_cast<std::ptrdiff_t>(e)},
                   {s.labels.begin() + static_cast<std::ptrdiff_t>(b), s.labels.begin() + static_cast<std::ptrdiff_t>(e)}});
  }
  return out;
}

struct LossOptions {
  int block_frames = 100;
  double l2 = 0.0;
  double weight_negative = 1.0;
  double weight_positive = 1.0;
};

namespace detail {

struct DirectionCache {
  std::vector<MatrixXd> gates;  // per t: 4H x n, activated
  std::vector<MatrixXd> c;      // per t: H x n
  std::vector<MatrixXd> h;      // per t: H x n
};

struct BatchView {
  std::vector<const EncodedSequence*> seqs;
  Eigen::Index n = 0;
  std::size_t length = 0;

  bool valid(std::size_t t, Eigen::Index j) const { return t < seqs[static_cast<std::size_t>(j)]->grids.size(); }
};

inline BatchView make_batch(std::span<const EncodedSequence* const> seqs) {
  BatchView b;
  b.seqs.assign(seqs.begin(), seqs.end());
  b.n = static_cast<Eigen::Index>(seqs.size());
  for (auto* s : seqs) b.length = std::max(b.length, s->grids.size());
  return b;
}

inline MatrixXd embed_batch(const BatchView& b, std::size_t t, const EmbeddingParams& p) {
  const Eigen::Index e = p.b.size();
  MatrixXd x(kNumRoles * e, b.n);
  for (Eigen::Index j = 0; j < b.n; ++j) {
    if (!b.valid(t, j)) {
      x.col(j).setZero();
      continue;
    }
    const auto& g = b.seqs[static_cast<std::size_t>(j)]->grids[t];
    for (int r = 0; r < kNumRoles; ++r) {
      auto seg = x.col(j).segment(r * e, e);
      seg = p.b;
      const int k = g.cell[static_cast<std::size_t>(r)];
      if (k >= 0) seg += p.W.col(k);
    }
  }
  return x;
}

inline void activate(MatrixXd& a, Eigen::Index H) {
  a.topRows(3 * H) = (1.0 + (-a.topRows(3 * H).array()).exp()).inverse().matrix();
  a.bottomRows(H) = a.bottomRows(H).array().tanh().matrix();
}

/// Runs one direction. The backward direction walks time in reverse, starts
/// from zero at every block end (and at each sequence end), and keeps padded
/// frames at zero state.
inline DirectionCache run_direction(const BatchView& b, const std::vector<MatrixXd>& xs, const LstmCellParams& p,
                                    bool reverse, int block_frames) {
  const Eigen::Index H = p.hidden();
  const std::size_t L = b.length;
  DirectionCache dc;
  dc.gates.resize(L);
  dc.c.resize(L);
  dc.h.resize(L);
  const MatrixXd zero = MatrixXd::Zero(H, b.n);
  const auto bl = static_cast<std::size_t>(block_frames);
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = reverse ? L - 1 - step : step;
    bool fresh;
    std::size_t prev = 0;
    if (reverse) {
      fresh = t + 1 == L || (t + 1) % bl == 0;
      prev = t + 1;
    } else {
      fresh = t == 0;
      prev = t - (t > 0 ? 1 : 0);
    }
    const MatrixXd& h_prev = fresh ? zero : dc.h[prev];
    const MatrixXd& c_prev = fresh ? zero : dc.c[prev];
    MatrixXd a = p.W * xs[t] + p.U * h_prev;
    a.colwise() += p.b;
    activate(a, H);
    MatrixXd c = a.middleRows(H, H).cwiseProduct(c_prev) + a.topRows(H).cwiseProduct(a.bottomRows(H));
    MatrixXd h = a.middleRows(2 * H, H).cwiseProduct(c.array().tanh().matrix());
    if (reverse) {
      for (Eigen::Index j = 0; j < b.n; ++j)
        if (!b.valid(t, j)) {
          c.col(j).setZero();
          h.col(j).setZero();
        }
    }
    dc.gates[t] = std::move(a);
    dc.c[t] = std::move(c);
    dc.h[t] = std::move(h);
  }
  return dc;
}

/// BPTT for one direction given dL/dh at every t; accumulates parameter
/// gradients into `g` and input gradients into `dxs`.
inline void backprop_direction(const BatchView& b, const std::vector<MatrixXd>& xs, const LstmCellParams& p,
                               const DirectionCache& dc, std::vector<MatrixXd>& dh_out, bool reverse, int block_frames,
                               LstmCellParams& g, std::vector<MatrixXd>& dxs) {
  const Eigen::Index H = p.hidden();
  const std::size_t L = b.length;
  const auto bl = static_cast<std::size_t>(block_frames);
  MatrixXd dh_carry = MatrixXd::Zero(H, b.n);
  MatrixXd dc_carry = MatrixXd::Zero(H, b.n);
  const MatrixXd zero = MatrixXd::Zero(H, b.n);
  // Visit in the reverse of processing order.
  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t t = reverse ? k : L - 1 - k;
    bool fresh;
    std::size_t prev = 0;
    if (reverse) {
      fresh = t + 1 == L || (t + 1) % bl == 0;
      prev = t + 1;
    } else {
      fresh = t == 0;
      prev = t - (t > 0 ? 1 : 0);
    }
    MatrixXd dh = dh_out[t] + dh_carry;
    MatrixXd dcell = dc_carry;
    if (reverse)
      for (Eigen::Index j = 0; j < b.n; ++j)
        if (!b.valid(t, j)) {
          dh.col(j).setZero();
          dcell.col(j).setZero();
        }
    const auto& a = dc.gates[t];
    const MatrixXd tc = dc.c[t].array().tanh().matrix();
    const MatrixXd& c_prev = fresh ? zero : dc.c[prev];
    const MatrixXd& h_prev = fresh ? zero : dc.h[prev];
    const auto gi = a.topRows(H).array();
    const auto gf = a.middleRows(H, H).array();
    const auto go = a.middleRows(2 * H, H).array();
    const auto gg = a.bottomRows(H).array();
    dcell.array() += dh.array() * go * (1.0 - tc.array().square());
    MatrixXd da(4 * H, b.n);
    da.topRows(H) = (dcell.array() * gg * gi * (1.0 - gi)).matrix();
    da.middleRows(H, H) = (dcell.array() * c_prev.array() * gf * (1.0 - gf)).matrix();
    da.middleRows(2 * H, H) = (dh.array() * tc.array() * go * (1.0 - go)).matrix();
    da.bottomRows(H) = (dcell.array() * gi * (1.0 - gg.square())).matrix();
    g.W.noalias() += da * xs[t].transpose();
    g.b += da.rowwise().sum();
    dxs[t].noalias() += p.W.transpose() * da;
    if (fresh) {
      dh_carry.setZero();
      dc_carry.setZero();
    } else {
      g.U.noalias() += da * h_prev.transpose();
      dh_carry.noalias() = p.U.transpose() * da;
      dc_carry = (dcell.array() * gf).matrix();
    }
  }
}

struct BatchForward {
  std::vector<MatrixXd> xs;
  DirectionCache fwd;
  std::optional<DirectionCache> bwd;
  std::vector<MatrixXd> probs;  // per t: 2 x n
};

inline BatchForward forward_batch(const ModelWeights& w, const BatchView& b, int block_frames) {
  BatchForward bf;
  bf.xs.reserve(b.length);
  for (std::size_t t = 0; t < b.length; ++t) bf.xs.push_back(embed_batch(b, t, w.embedding));
  bf.fwd = run_direction(b, bf.xs, w.forward, false, block_frames);
  if (w.backward) bf.bwd = run_direction(b, bf.xs, *w.backward, true, block_frames);
  const Eigen::Index H = w.hidden();
  bf.probs.resize(b.length);
  for (std::size_t t = 0; t < b.length; ++t) {
    MatrixXd z = w.Wo.leftCols(H) * bf.fwd.h[t];
    if (bf.bwd) z.noalias() += w.Wo.rightCols(H) * bf.bwd->h[t];
    z.colwise() += w.bo;
    MatrixXd p(2, b.n);
    for (Eigen::Index j = 0; j < b.n; ++j) {
      const auto [p0, p1] = softmax2(z(0, j), z(1, j));
      p(0, j) = p0;
      p(1, j) = p1;
    }
    bf.probs[t] = std::move(p);
  }
  return bf;
}

}  // namespace detail

/// l2 times the squared norm of all weight matrices (biases are not penalized).
inline double weight_penalty(const ModelWeights& w, double l2) {
  double s = w.embedding.W.squaredNorm() + w.forward.W.squaredNorm() + w.forward.U.squaredNorm() +
             w.Wo.squaredNorm();
  if (w.backward) s += w.backward->W.squaredNorm() + w.backward->U.squaredNorm();
  return l2 * s;
}

/// Weighted mean per-frame cross-entropy over labeled frames plus
/// l2 * (sum of squared weight-matrix entries). Fills `grad` when given.
inline double loss_and_gradient(const ModelWeights& w, std::span<const EncodedSequence* const> batch,
                                const LossOptions& opt, ModelWeights* grad) {
  const auto b = detail::make_batch(batch);
  const auto bf = detail::forward_batch(w, b, opt.block_frames);
  double total_weight = 0.0;
  for (auto* s : batch)
    for (auto l : s->labels)
      total_weight += l == Label::Positive ? opt.weight_positive : l == Label::Negative ? opt.weight_negative : 0.0;
  if (!(total_weight > 0)) throw TrainingError("batch has no labeled frame");

  double loss = 0.0;
  std::vector<MatrixXd> dz(b.length, MatrixXd::Zero(2, b.n));
  for (std::size_t t = 0; t < b.length; ++t)
    for (Eigen::Index j = 0; j < b.n; ++j) {
      if (!b.valid(t, j)) continue;
      const Label l = b.seqs[static_cast<std::size_t>(j)]->labels[t];
      if (l == Label::Ignore) continue;
      const int y = l == Label::Positive ? 1 : 0;
      const double wt = (y ? opt.weight_positive : opt.weight_negative) / total_weight;
      loss -= wt * std::log(std::max(bf.probs[t](y, j), 1e-300));
      dz[t](0, j) = wt * (bf.probs[t](0, j) - (y == 0));
      dz[t](1, j) = wt * (bf.probs[t](1, j) - (y == 1));
    }
  loss += weight_penalty(w, opt.l2);
  if (!grad) return loss;

  const Eigen::Index H = w.hidden();
  *grad = ModelWeights::zeros(static_cast<int>(w.embedding.b.size()), static_cast<int>(H), w.bidirectional());
  std::vector<MatrixXd> dh_f(b.length), dh_b;
  if (w.backward) dh_b.resize(b.length);
  for (std::size_t t = 0; t < b.length; ++t) {
    grad->Wo.leftCols(H).noalias() += dz[t] * bf.fwd.h[t].transpose();
    dh_f[t] = w.Wo.leftCols(H).transpose() * dz[t];
    if (w.backward) {
      grad->Wo.rightCols(H).noalias() += dz[t] * bf.bwd->h[t].transpose();
      dh_b[t] = w.Wo.rightCols(H).transpose() * dz[t];
    }
    grad->bo += dz[t].rowwise().sum();
  }
  std::vector<MatrixXd> dxs(b.length, MatrixXd::Zero(bf.xs.empty() ? 0 : bf.xs[0].rows(), b.n));
  detail::backprop_direction(b, bf.xs, w.forward, bf.fwd, dh_f, false, opt.block_frames, grad->forward, dxs);
  if (w.backward)
    detail::backprop_direction(b, bf.xs, *w.backward, *bf.bwd, dh_b, true, opt.block_frames, *grad->backward, dxs);
  const Eigen::Index e = w.embedding.b.size();
  for (std::size_t t = 0; t < b.length; ++t)
    for (Eigen::Index j = 0; j < b.n; ++j) {
      if (!b.valid(t, j)) continue;
      const auto& gcell = b.seqs[static_cast<std::size_t>(j)]->grids[t];
      for (int r = 0; r < kNumRoles; ++r) {
        const auto seg = dxs[t].col(j).segment(r * e, e);
        grad->embedding.b += seg;
        const int k = gcell.cell[static_cast<std::size_t>(r)];
        if (k >= 0) grad->embedding.W.col(k) += seg;
      }
    }
  const double k = 2.0 * opt.l2;
  grad->embedding.W += k * w.embedding.W;
  grad->forward.W += k * w.forward.W;
  grad->forward.U += k * w.forward.U;
  if (w.backward) {
    grad->backward->W += k * w.backward->W;
    grad->backward->U += k * w.backward->U;
  }
  grad->Wo += k * w.Wo;
  return loss;
}

// ---------------------------------------------------------------------------
// Inference

/// Outputs for many sequences at once; batching does not change results.
inline std::vector<std::vector<FrameOutput>> run_model_batch(const ModelWeights& w,
                                                             std::span<const EncodedSequence> seqs,
                                                             int block_frames, std::size_t batch_size = 64) {
  std::vector<std::vector<FrameOutput>> out(seqs.size());
  std::vector<const EncodedSequence*> ptrs;
  for (std::size_t k = 0; k < seqs.size(); k += batch_size) {
    ptrs.clear();
    for (std::size_t i = k; i < std::min(seqs.size(), k + batch_size); ++i)
      if (!seqs[i].grids.empty()) ptrs.push_back(&seqs[i]);
    if (ptrs.empty()) continue;
    const auto b = detail::make_batch(ptrs);
    const auto bf = detail::forward_batch(w, b, block_frames);
    for (std::size_t j = 0; j < ptrs.size(); ++j) {
      const auto idx = static_cast<std::size_t>(ptrs[j] - seqs.data());
      auto& o = out[idx];
      o.resize(ptrs[j]->grids.size());
      for (std::size_t t = 0; t < o.size(); ++t) {
        const auto col = static_cast<Eigen::Index>(j);
        o[t].p = bf.probs[t](1, col);
        o[t].o = bf.probs[t](1, col) > bf.probs[t](0, col) ? 1 : 0;
      }
    }
  }
  return out;
}

inline std::vector<FrameOutput> run_model(const ModelWeights& w, const std::vector<OccupancyGrid>& seq, int block_frames) {
  const EncodedSequence es{seq, std::vector<Label>(seq.size(), Label::Ignore)};
  return run_model_batch(w, std::span<const EncodedSequence>(&es, 1), block_frames).front();
}

inline std::vector<FrameOutput> forward_unidir(const std::vector<OccupancyGrid>& seq, const ModelWeights& w) {
  if (w.bidirectional()) throw ContractError("forward_unidir needs a unidirectional model");
  return run_model(w, seq, 1);
}

/// Backward state restarts at zero on every block of `block_frames` frames
/// aligned to the sequence start, so frame t never sees past its block end.
inline std::vector<FrameOutput> forward_bidir(const std::vector<OccupancyGrid>& seq, const ModelWeights& w,
                                              int block_frames) {
  if (!w.bidirectional()) throw ContractError("forward_bidir needs a bidirectional model");
  if (block_frames <= 0) throw ContractError("block size must be positive");
  return run_model(w, seq, block_frames);
}

/// Streaming bidirectional assessment. The forward state follows the real
/// history. For the frame at stream position t inside block [b, b + T_B) the
/// backward layer runs over the real current grid followed by predicted grids
/// up to the block end, so every frame sees the same horizon it saw in training.
class OnlineAssessor {
 public:
  OnlineAssessor(const ModelWeights& w, FuturePredictor predictor, int block_frames)
      : w_(w), predictor_(std::move(predictor)), block_(block_frames) {
    if (!w_.bidirectional()) throw ContractError("online assessment needs a bidirectional model");
    if (block_ <= 0) throw ContractError("block size must be positive");
    const auto H = w_.hidden();
    h_ = VectorXd::Zero(H);
    c_ = VectorXd::Zero(H);
  }

  FrameOutput push(const OnlineFrame& frame) {
    const int steps = block_ - 1 - static_cast<int>(t_ % static_cast<std::size_t>(block_));
    ++t_;
    const VectorXd x = embed(encode_grid(frame.ctx), w_.embedding);
    auto fs = lstm_cell(x, h_, c_, w_.forward);
    h_ = std::move(fs.h);
    c_ = std::move(fs.c);

    std::vector<NeighborContext> future;
    if (steps > 0) {
      future = predictor_(frame, steps);
      if (static_cast<int>(future.size()) != steps) throw ContractError("predictor returned the wrong horizon");
    }
    const auto H = w_.hidden();
    VectorXd hb = VectorXd::Zero(H);
    VectorXd cb = VectorXd::Zero(H);
    for (auto it = future.rbegin(); it != future.rend(); ++it) {
      auto s = lstm_cell(embed(encode_grid(*it), w_.embedding), hb, cb, *w_.backward);
      hb = std::move(s.h);
      cb = std::move(s.c);
    }
    auto s = lstm_cell(x, hb, cb, *w_.backward);
    VectorXd cat(2 * H);
    cat << h_, s.h;
    return output_layer(w_, cat);
  }

 private:
  const ModelWeights& w_;
  FuturePredictor predictor_;
  int block_;
  std::size_t t_ = 0;
  VectorXd h_;
  VectorXd c_;
};

inline std::vector<FrameOutput> predict_online(const ModelWeights& w, std::span<const OnlineFrame> history,
                                               const FuturePredictor& predictor, int block_frames) {
  OnlineAssessor assessor(w, predictor, block_frames);
  std::vector<FrameOutput> out;
  out.reserve(history.size());
  for (const auto& f : history) out.push_back(assessor.push(f));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  ModelWeights weights;
  std::vector<double> epoch_loss;       // mean data + penalty loss per epoch
  std::vector<double> epoch_data_loss;  // cross-entropy part only
  std::vector<double> validation_acc;   // average accuracy per epoch, if validated
  int best_epoch = -1;
};

/// Average accuracy of a model over labeled frames; nullopt if a class is
/// missing. Bidirectional models use real futures within each block.
inline std::optional<double> sequence_average_accuracy(const ModelWeights& w, std::span<const EncodedSequence> data,
                                                       int block_frames) {
  std::size_t tp = 0, np = 0, tn = 0, nn = 0;
  const auto outs = run_model_batch(w, data, w.bidirectional() ? block_frames : 1);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& s = data[k];
    const auto& out = outs[k];
    for (std::size_t t = 0; t < out.size(); ++t) {
      if (s.labels[t] == Label::Positive) {
        ++np;
        tp += out[t].o == 1;
      } else if (s.labels[t] == Label::Negative) {
        ++nn;
        tn += out[t].o == 0;
      }
    }
  }
  if (np == 0 || nn == 0) return std::nullopt;
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(np) + static_cast<double>(tn) / static_cast<double>(nn));
}

inline std::vector<EncodedSequence> prepare_training_windows(const std::vector<LabeledSequence>& data, int window) {
  std::vector<EncodedSequence> out;
  for (const auto& s : data)
    for (auto& w : window_sequence(encode_sequence(s), window))
      if (std::any_of(w.labels.begin(), w.labels.end(), [](Label l) { return l != Label::Ignore; }))
        out.push_back(std::move(w));
  return out;
}

struct AdamState {
  ModelWeights m, v;
  long step = 0;
};

inline void adam_update(ModelWeights& w, ModelWeights& grad, AdamState& st, const TrainConfig& cfg) {
  auto wt = tensors(w);
  auto gt = tensors(grad);
  auto mt = tensors(st.m);
  auto vt = tensors(st.v);
  double sq = 0.0;
  for (const auto& g : gt) sq += Eigen::Map<const VectorXd>(g.data, g.size).squaredNorm();
  const double norm = std::sqrt(sq);
  const double scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  ++st.step;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < wt.size(); ++i) {
    Eigen::Map<VectorXd> p(wt[i].data, wt[i].size), g(gt[i].data, gt[i].size), m(mt[i].data, mt[i].size),
        v(vt[i].data, vt[i].size);
    g *= scale;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    p.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

/// Train with minibatch Adam. When validation data is given, the weights with
/// the best validation average accuracy over all epochs are returned.
inline TrainResult train(const std::vector<LabeledSequence>& data, const TrainConfig& cfg, bool bidirectional,
                         const std::vector<LabeledSequence>& validation = {}) {
  cfg.validate();
  if (data.empty()) throw TrainingError("no training sequences");
  const auto windows = prepare_training_windows(data, cfg.window_frames());
  if (windows.empty()) throw TrainingError("every training frame is labeled ignore");
  std::vector<EncodedSequence> val;
  for (const auto& s : validation) val.push_back(encode_sequence(s));

  LossOptions opt;
  opt.block_frames = bidirectional ? cfg.block_frames() : 1;
  opt.l2 = cfg.l2;
  if (cfg.class_weights) {
    double npos = 0, nneg = 0;
    for (const auto& w : windows)
      for (auto l : w.labels) {
        npos += l == Label::Positive;
        nneg += l == Label::Negative;
      }
    if (npos > 0 && nneg > 0) {
      opt.weight_positive = (npos + nneg) / (2 * npos);
      opt.weight_negative = (npos + nneg) / (2 * nneg);
    }
  }

  TrainResult res;
  res.weights = init_weights(cfg, bidirectional);
  AdamState adam{ModelWeights::zeros(cfg.embed_dim, cfg.hidden_dim, bidirectional),
                 ModelWeights::zeros(cfg.embed_dim, cfg.hidden_dim, bidirectional), 0};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  double best = -1.0;
  ModelWeights best_w = res.weights;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, data_sum = 0.0;
    std::size_t batches = 0;
    std::vector<const EncodedSequence*> batch;
    for (std::size_t k = 0; k < order.size(); k += bs) {
      batch.clear();
      for (std::size_t i = k; i < std::min(order.size(), k + bs); ++i) batch.push_back(&windows[order[i]]);
      ModelWeights grad;
      const double penalty = weight_penalty(res.weights, opt.l2);
      const double loss = loss_and_gradient(res.weights, batch, opt, &grad);
      loss_sum += loss;
      data_sum += loss - penalty;
      ++batches;
      adam_update(res.weights, grad, adam, cfg);
    }
    res.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    res.epoch_data_loss.push_back(batches ? data_sum / static_cast<double>(batches) : 0.0);
    if (!val.empty()) {
      const auto acc = sequence_average_accuracy(res.weights, val, cfg.block_frames());
      const double a = acc.value_or(-1.0);
      res.validation_acc.push_back(a);
      if (a > best) {
        best = a;
        best_w = res.weights;
        res.best_epoch = epoch;
      }
    }
  }
  if (!val.empty() && res.best_epoch >= 0) res.weights = std::move(best_w);
  else res.best_epoch = cfg.epochs - 1;
  return res;
}

}  // namespace lcsa
