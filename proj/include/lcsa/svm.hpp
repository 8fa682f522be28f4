#pragma once

// Baselines: an RBF-kernel support vector machine trained by sequential
// minimal optimization (plain and with real future contexts), and the
// IDM-only labeler.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lcsa/core.hpp"
#include "lcsa/idm.hpp"
#include "lcsa/labeling.hpp"
#include "lcsa/ngsim.hpp"

namespace lcsa {

inline constexpr double kSvmDistanceCap = 200.0;
inline constexpr int kSvmBaseFeatures = 8;

/// d_pv, d_rv, d_plv, d_pfv, v_pv, v_rv, v_plv, v_pfv for the current context,
/// optionally followed by the same block for the contexts 5 s and 10 s later.
inline Eigen::VectorXd build_svm_features(const NeighborContext& ctx, std::span<const NeighborContext> future = {}) {
  if (!future.empty() && future.size() != 2)
    throw ContractError("SVM features take either no future or exactly two future contexts");
  Eigen::VectorXd x(kSvmBaseFeatures * static_cast<Eigen::Index>(1 + future.size()));
  auto put = [&](Eigen::Index off, const NeighborContext& c) {
    for (int r = 0; r < kNumRoles; ++r) {
      x(off + r) = std::min(c.d[r], kSvmDistanceCap);
      x(off + kNumRoles + r) = c.d[r] == kInf ? 0.0 : c.v[r];
    }
  };
  put(0, ctx);
  for (std::size_t k = 0; k < future.size(); ++k) put(kSvmBaseFeatures * static_cast<Eigen::Index>(k + 1), future[k]);
  return x;
}

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // standard deviation, 1 for constant dimensions

  static Standardizer fit(std::span<const Eigen::VectorXd> xs) {
    if (xs.empty()) throw ContractError("cannot standardize an empty sample");
    const auto d = xs.front().size();
    Standardizer s{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    for (const auto& x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (const auto& x : xs) s.scale += (x - s.mean).cwiseAbs2();
    s.scale = (s.scale / static_cast<double>(xs.size())).cwiseSqrt();
    for (Eigen::Index i = 0; i < d; ++i)
      if (!(s.scale(i) > 1e-12)) s.scale(i) = 1.0;
    return s;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size()) throw ContractError("feature width does not match the standardizer");
    return (x - mean).cwiseQuotient(scale);
  }
};

inline double rbf_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double gamma) {
  return std::exp(-gamma * (a - b).squaredNorm());
}

struct SvmModel {
  std::vector<Eigen::VectorXd> support;  // standardized
  std::vector<double> coef;              // y_i * alpha_i
  double bias = 0.0;
  double gamma = 1.0;
  double C = 1.0;
  Standardizer standardizer;
};

struct SvmSample {
  Eigen::VectorXd x;
  int y = 1;  // +1 or -1
};

struct SvmTrainResult {
  SvmModel model;
  std::vector<double> alpha;  // per training sample
  std::size_t iterations = 0;
  double kkt_gap = 0.0;       // max violating-pair gap at exit
};

namespace detail {

inline Eigen::MatrixXd kernel_matrix(std::span<const Eigen::VectorXd> xs, double gamma) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) K(i, j) = K(j, i) = rbf_kernel(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)], gamma);
  }
  return K;
}

}  // namespace detail

/// Largest KKT violation of a dual solution: max over the "up" set minus min
/// over the "low" set of -y_i * grad_i. Zero or negative at optimality.
inline double kkt_violation(const Eigen::MatrixXd& K, std::span<const int> y, std::span<const double> alpha, double C) {
  const auto n = y.size();
  double gmax = -kInf, gmin = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    double g = -1.0;
    for (std::size_t j = 0; j < n; ++j)
      g += static_cast<double>(y[i] * y[j]) * K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * alpha[j];
    const double v = -static_cast<double>(y[i]) * g;
    const bool up = (y[i] == 1 && alpha[i] < C) || (y[i] == -1 && alpha[i] > 0);
    const bool low = (y[i] == -1 && alpha[i] < C) || (y[i] == 1 && alpha[i] > 0);
    if (up) gmax = std::max(gmax, v);
    if (low) gmin = std::min(gmin, v);
  }
  return gmax - gmin;
}

/// Soft-margin dual solved by SMO with second-order working-set selection,
/// stopping once the maximal violating pair is within `tolerance`.
inline SvmTrainResult svm_train(std::span<const SvmSample> samples, double C, double gamma, double tolerance = 1e-3) {
  if (samples.empty()) throw TrainingError("svm_train: no samples");
  if (!(C > 0 && gamma > 0)) throw ContractError("svm_train: C and gamma must be positive");
  bool pos = false, neg = false;
  for (const auto& s : samples) {
    if (s.y != 1 && s.y != -1) throw ContractError("svm_train: labels must be +1 or -1");
    pos |= s.y == 1;
    neg |= s.y == -1;
  }
  if (!pos || !neg) throw TrainingError("svm_train: both classes must be present");

  std::vector<Eigen::VectorXd> raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back(s.x);
  SvmTrainResult res;
  res.model.standardizer = Standardizer::fit(raw);
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(raw.size());
  for (const auto& x : raw) xs.push_back(res.model.standardizer.apply(x));

  const std::size_t n = samples.size();
  const Eigen::MatrixXd K = detail::kernel_matrix(xs, gamma);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = samples[i].y;
  std::vector<double> alpha(n, 0.0), G(n, -1.0);
  constexpr double tau = 1e-12;
  const std::size_t max_iter = std::max<std::size_t>(10'000'000, 100 * n);
  auto Q = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(y[i] * y[j]) * K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  auto in_up = [&](std::size_t t) { return (y[t] == 1 && alpha[t] < C) || (y[t] == -1 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (y[t] == -1 && alpha[t] < C) || (y[t] == 1 && alpha[t] > 0); };

  std::size_t iter = 0;
  double gap = 0.0;
  for (; iter < max_iter; ++iter) {
    double gmax = -kInf;
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t)
      if (in_up(t) && -y[t] * G[t] >= gmax) {
        gmax = -y[t] * G[t];
        i = t;
      }
    double gmin = kInf, best = kInf;
    std::size_t j = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[t] * G[t];
      gmin = std::min(gmin, v);
      if (i == n) continue;
      const double b = gmax - v;
      if (b > 0) {
        double a = K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) +
                   K(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t)) -
                   2.0 * K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
        if (a <= 0) a = tau;
        const double obj = -(b * b) / a;
        if (obj <= best) {
          best = obj;
          j = t;
        }
      }
    }
    gap = gmax - gmin;
    if (i == n || j == n || gap < tolerance) break;

    const double ai = alpha[i], aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - ai, dj = alpha[j] - aj;
    for (std::size_t t = 0; t < n; ++t) G[t] += Q(i, t) * di + Q(j, t) * dj;
  }

  // Offset from free vectors, or the midpoint of the feasible interval.
  double ub = kInf, lb = -kInf, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (alpha[t] >= C) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);

  res.model.bias = -rho;
  res.model.gamma = gamma;
  res.model.C = C;
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0) {
      res.model.support.push_back(xs[t]);
      res.model.coef.push_back(y[t] * alpha[t]);
    }
  res.alpha = std::move(alpha);
  res.iterations = iter;
  res.kkt_gap = gap;
  return res;
}

/// Kernel expansion plus bias on already standardized features.
inline double decision_value_standardized(const SvmModel& m, const Eigen::VectorXd& z) {
  double f = m.bias;
  for (std::size_t i = 0; i < m.support.size(); ++i) f += m.coef[i] * rbf_kernel(m.support[i], z, m.gamma);
  return f;
}

inline double decision_value(const SvmModel& m, const Eigen::VectorXd& x) {
  return decision_value_standardized(m, m.standardizer.apply(x));
}

/// Class 1 iff the decision value is strictly positive; ties go to class 0.
inline int svm_predict(const SvmModel& m, const Eigen::VectorXd& x) { return decision_value(m, x) > 0.0 ? 1 : 0; }

// ---------------------------------------------------------------------------
// Checkpoint: textual, one keyword per line.

inline void write_svm(std::ostream& out, const SvmModel& m) {
  const auto d = m.standardizer.mean.size();
  out << "lcsa-svm v1\n";
  out << "kernel rbf " << format_double(m.gamma) << "\n";
  out << "C " << format_double(m.C) << "\n";
  out << "bias " << format_double(m.bias) << "\n";
  out << "dim " << d << "\n";
  out << "mean";
  for (Eigen::Index i = 0; i < d; ++i) out << ' ' << format_double(m.standardizer.mean(i));
  out << "\nscale";
  for (Eigen::Index i = 0; i < d; ++i) out << ' ' << format_double(m.standardizer.scale(i));
  out << "\nsupport " << m.support.size() << "\n";
  for (std::size_t k = 0; k < m.support.size(); ++k) {
    out << format_double(m.coef[k]);
    for (Eigen::Index i = 0; i < d; ++i) out << ' ' << format_double(m.support[k](i));
    out << '\n';
  }
}

inline SvmModel read_svm(std::istream& in) {
  std::string tag, kernel;
  auto expect = [&](const char* want) {
    if (!(in >> tag) || tag != want) throw ParseError(std::string("svm checkpoint: expected '") + want + "'");
  };
  auto num = [&] {
    std::string s;
    double v = 0;
    if (!(in >> s) || !detail::parse_double(s, v)) throw ParseError("svm checkpoint: bad number");
    return v;
  };
  expect("lcsa-svm");
  expect("v1");
  SvmModel m;
  expect("kernel");
  if (!(in >> kernel) || kernel != "rbf") throw ParseError("svm checkpoint: only the rbf kernel is supported");
  m.gamma = num();
  expect("C");
  m.C = num();
  expect("bias");
  m.bias = num();
  expect("dim");
  const auto d = static_cast<Eigen::Index>(num());
  m.standardizer.mean.resize(d);
  m.standardizer.scale.resize(d);
  expect("mean");
  for (Eigen::Index i = 0; i < d; ++i) m.standardizer.mean(i) = num();
  expect("scale");
  for (Eigen::Index i = 0; i < d; ++i) m.standardizer.scale(i) = num();
  expect("support");
  const auto n = static_cast<std::size_t>(num());
  for (std::size_t k = 0; k < n; ++k) {
    m.coef.push_back(num());
    Eigen::VectorXd sv(d);
    for (Eigen::Index i = 0; i < d; ++i) sv(i) = num();
    m.support.push_back(std::move(sv));
  }
  return m;
}

// ---------------------------------------------------------------------------
// IDM-only baseline

/// Predict the next `horizon_frames` contexts and apply the automatic-label
/// rule to them: 1 iff every predicted target-lane closing time meets the gap.
inline int idm_baseline_label(const OnlineFrame& frame, const FuturePredictor& predictor, int horizon_frames = 30,
                              double min_time_gap = 1.0) {
  const auto future = predictor(frame, horizon_frames);
  for (const auto& c : future)
    if (!target_gaps_ok(c, min_time_gap)) return 0;
  return 1;
}

}  // namespace lcsa
