#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

#include "metreg/errors.hpp"
#include "metreg/linalg.hpp"
#include "metreg/matrix.hpp"

namespace metreg {

// Pairwise metric loss for regression. A batch of embeddings F and labels
// Y is turned into per-pair residuals
//
//   D[i][j] = | s * ||f_i - f_j|| - ||y_i - y_j|| |
//
// weighted by a Gaussian in label distance,
//
//   W[i][j] = exp(-||y_i - y_j||^2 / (2 sigma^2)) + alpha,
//
// and reduced to a weighted mean over the pairs kept by a hard-pair mask.
// Driving D to zero makes the embedding isometric to the label space up
// to the learnable scale s.

struct LossConfig {
  double sigma = 0.5;   // weight bandwidth in label units; +inf turns weights constant
  double alpha = 0.1;   // weight floor added to every pair
  double ema_decay = 0.9;
  bool mining_enabled = true;
};

struct LossState {
  double log_s = 0.0;      // scale kept in log space so s stays positive
  double ema_lbar = 0.0;   // running mean of weighted residuals (mining threshold)
  bool ema_initialized = false;
  std::uint64_t iteration = 0;

  double scale() const { return std::exp(log_s); }
};

struct PairBatch {
  Matrix embed_dist;  // ||f_i - f_j||
  Matrix label_dist;  // ||y_i - y_j||
  Matrix residual;    // D
  Matrix weight;      // W
  Matrix mask;        // 0/1 selection; diagonal always 0
  double mean_weighted_residual = 0.0;  // E(W*D) over off-diagonal pairs
  double loss = 0.0;
  std::size_t pair_count_selected = 0;  // ordered off-diagonal pairs kept
  bool fallback_unmasked = false;       // mask kept nothing; loss fell back to the
                                        // plain weighted mean
};

// Fills D and W. Self-pairs sit on the diagonal and are excluded from
// every reduction downstream.
inline PairBatch pair_terms(const Matrix& f, const Matrix& y, const LossState& state,
                            const LossConfig& cfg) {
  if (f.rows() < 2) throw InvalidInputError("pair_terms: need at least two samples");
  if (f.rows() != y.rows()) throw InvalidInputError("pair_terms: row count mismatch");
  if (cfg.sigma <= 0.0) throw InvalidInputError("pair_terms: sigma must be positive");

  PairBatch b;
  b.embed_dist = pairwise_euclidean(f);
  b.label_dist = pairwise_euclidean(y);

  const std::size_t n = f.rows();
  const double s = state.scale();
  const double inv_two_sigma_sq =
      std::isinf(cfg.sigma) ? 0.0 : 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  b.residual = Matrix(n, n);
  b.weight = Matrix(n, n);
  b.mask = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    b.weight(i, i) = 1.0 + cfg.alpha;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dy = b.label_dist(i, j);
      const double d = std::abs(s * b.embed_dist(i, j) - dy);
      const double w = std::exp(-dy * dy * inv_two_sigma_sq) + cfg.alpha;
      b.residual(i, j) = d;
      b.residual(j, i) = d;
      b.weight(i, j) = w;
      b.weight(j, i) = w;
    }
  }
  return b;
}

// Updates the running batch-mean threshold, then keeps the pairs whose
// weighted residual strictly exceeds it. The first batch initializes the
// threshold to its own mean. With mining disabled every off-diagonal pair
// is kept; the threshold is still tracked so logs stay comparable.
inline void mine_mask(PairBatch& b, LossState& state, const LossConfig& cfg) {
  const std::size_t n = b.residual.rows();
  if (n < 2 || b.weight.rows() != n) throw InvalidStateError("mine_mask: batch not filled");

  double sum_wd = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) sum_wd += b.weight(i, j) * b.residual(i, j);
  const double mean_wd = sum_wd / static_cast<double>(n * n - n);
  b.mean_weighted_residual = mean_wd;

  state.iteration += 1;
  if (!state.ema_initialized) {
    state.ema_lbar = mean_wd;
    state.ema_initialized = true;
  } else {
    state.ema_lbar = cfg.ema_decay * state.ema_lbar + (1.0 - cfg.ema_decay) * mean_wd;
  }

  b.pair_count_selected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        b.mask(i, j) = 0.0;
        continue;
      }
      const bool keep =
          !cfg.mining_enabled || b.weight(i, j) * b.residual(i, j) > state.ema_lbar;
      b.mask(i, j) = keep ? 1.0 : 0.0;
      if (keep) ++b.pair_count_selected;
    }
  }
}

// Masked weighted mean of the residuals. When the mask keeps nothing the
// loss falls back to the unmasked weighted mean so a training step never
// sees 0/0.
inline double rm_loss(PairBatch& b) {
  const std::size_t n = b.residual.rows();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double mw = b.mask(i, j) * b.weight(i, j);
      num += mw * b.residual(i, j);
      den += mw;
    }
  if (den == 0.0) {
    b.fallback_unmasked = true;
    num = den = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        num += b.weight(i, j) * b.residual(i, j);
        den += b.weight(i, j);
      }
  } else {
    b.fallback_unmasked = false;
  }
  b.loss = num / den;
  return b.loss;
}

struct RmLossGrads {
  Matrix embeddings;   // dL/dF
  double log_scale = 0.0;  // dL/d log_s
};

// Analytic gradient of rm_loss with the mask, the threshold, and the
// label-only weights treated as constants. Per selected pair,
//
//   dD/df_i     = s * sign(s*d_f - d_y) * (f_i - f_j) / d_f
//   dD/d log_s  = sign(s*d_f - d_y) * s * d_f
//
// with sign(0) = 0 and a zero contribution to f when d_f = 0.
inline RmLossGrads rm_loss_backward(const PairBatch& b, const Matrix& f,
                                    const LossState& state) {
  const std::size_t n = f.rows();
  RmLossGrads g;
  g.embeddings = Matrix(n, f.cols());

  double coeff_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      coeff_sum += b.fallback_unmasked ? b.weight(i, j) : b.mask(i, j) * b.weight(i, j);
    }
  if (coeff_sum == 0.0) return g;  // fully degenerate batch; loss was not finite

  const double s = state.scale();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double c =
          (b.fallback_unmasked ? b.weight(i, j) : b.mask(i, j) * b.weight(i, j)) / coeff_sum;
      if (c == 0.0) continue;
      const double df = b.embed_dist(i, j);
      const double r = s * df - b.label_dist(i, j);
      const double sg = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      if (sg == 0.0) continue;
      g.log_scale += c * sg * s * df;
      if (df > 0.0) {
        const double k = c * sg * s / df;
        for (std::size_t d = 0; d < f.cols(); ++d) {
          const double diff = f(i, d) - f(j, d);
          g.embeddings(i, d) += k * diff;
          g.embeddings(j, d) -= k * diff;
        }
      }
    }
  }
  return g;
}

struct ScalarLossGrad {
  double loss = 0.0;
  Matrix grad;  // dL/d prediction
};

// Mean squared error over all B*d_y entries.
inline ScalarLossGrad mse_loss(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInputError("mse_loss: shape mismatch");
  ScalarLossGrad out;
  out.grad = Matrix(pred.rows(), pred.cols());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      const double r = pred(i, j) - truth(i, j);
      out.loss += r * r * inv_n;
      out.grad(i, j) = 2.0 * r * inv_n;
    }
  return out;
}

// Mean absolute error over all B*d_y entries; the subgradient at an exact
// zero residual is 0.
inline ScalarLossGrad l1_loss(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInputError("l1_loss: shape mismatch");
  ScalarLossGrad out;
  out.grad = Matrix(pred.rows(), pred.cols());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      const double r = pred(i, j) - truth(i, j);
      out.loss += std::abs(r) * inv_n;
      out.grad(i, j) = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv_n;
    }
  return out;
}

}  // namespace metreg
