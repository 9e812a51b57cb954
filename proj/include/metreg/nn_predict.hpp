#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "metreg/errors.hpp"
#include "metreg/matrix.hpp"

namespace metreg {

// Training embeddings with their labels plus the neighborhood radius.
// Immutable after construction; predictions are pure reads.
struct EmbeddingIndex {
  Matrix embeddings;  // N x d_f
  Matrix labels;      // N x d_y
  double radius = 0.0;

  EmbeddingIndex(Matrix f, Matrix y, double r)
      : embeddings(std::move(f)), labels(std::move(y)), radius(r) {
    if (embeddings.rows() == 0) throw InvalidStateError("EmbeddingIndex: empty index");
    if (embeddings.rows() != labels.rows())
      throw InvalidInputError("EmbeddingIndex: row count mismatch");
    if (!(radius > 0.0)) throw InvalidInputError("EmbeddingIndex: radius must be positive");
  }
};

struct Prediction {
  std::vector<double> label;
  bool extrapolated = false;  // neighborhood was empty; nearest point used instead
};

// Gaussian distance-weighted average of the labels within the radius,
// bandwidth radius/3:
//
//   y_hat = sum(a_i * y_i) / sum(a_i),  a_i = exp(-d_i^2 / (2 (r/3)^2)).
//
// An empty neighborhood falls back to the single nearest training label
// and flags the prediction as extrapolated.
inline Prediction predict(const EmbeddingIndex& index, std::span<const double> query) {
  if (query.size() != index.embeddings.cols())
    throw InvalidInputError("predict: query width mismatch");

  const std::size_t n = index.embeddings.rows();
  const std::size_t d_y = index.labels.cols();
  const double r = index.radius;
  const double inv_two_bw_sq = 1.0 / (2.0 * (r / 3.0) * (r / 3.0));

  Prediction out;
  out.label.assign(d_y, 0.0);
  double weight_sum = 0.0;
  double best_sq = std::numeric_limits<double>::infinity();
  std::size_t best_row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sq = squared_distance(index.embeddings.row(i), query);
    if (sq < best_sq) {
      best_sq = sq;
      best_row = i;
    }
    if (sq <= r * r) {
      const double a = std::exp(-sq * inv_two_bw_sq);
      weight_sum += a;
      for (std::size_t d = 0; d < d_y; ++d) out.label[d] += a * index.labels(i, d);
    }
  }

  if (weight_sum > 0.0) {
    for (double& v : out.label) v /= weight_sum;
    return out;
  }
  out.extrapolated = true;
  for (std::size_t d = 0; d < d_y; ++d) out.label[d] = index.labels(best_row, d);
  return out;
}

struct BatchPrediction {
  Matrix labels;                          // T x d_y
  std::vector<std::uint8_t> extrapolated; // per row
};

inline BatchPrediction predict_batch(const EmbeddingIndex& index, const Matrix& queries) {
  BatchPrediction out;
  out.labels = Matrix(queries.rows(), index.labels.cols());
  out.extrapolated.assign(queries.rows(), 0);
  for (std::size_t t = 0; t < queries.rows(); ++t) {
    const Prediction p = predict(index, queries.row(t));
    for (std::size_t d = 0; d < p.label.size(); ++d) out.labels(t, d) = p.label[d];
    out.extrapolated[t] = p.extrapolated ? 1 : 0;
  }
  return out;
}

// Radius search grid. With no explicit values the grid is `points`
// log-spaced radii between the lo_percentile-th and hi_percentile-th
// percentile of all train-validation pairwise distances.
struct RadiusGrid {
  std::size_t points = 32;
  double lo_percentile = 1.0;
  double hi_percentile = 50.0;
  std::vector<double> explicit_values;  // overrides the percentile grid when non-empty
};

struct RadiusChoice {
  double radius = 0.0;
  double val_mae = std::numeric_limits<double>::infinity();
  bool degenerate = false;  // all embeddings coincide; radius is arbitrary
};

namespace detail {

// Linear-interpolation percentile of a sorted vector, p in [0, 100].
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double mean_abs_error(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) acc += std::abs(a(i, j) - b(i, j));
  return acc / static_cast<double>(a.size());
}

}  // namespace detail

// Picks the radius minimizing validation MAE over the grid, scanning
// ascending with strict improvement so ties resolve to the smaller value.
inline RadiusChoice tune_radius(const Matrix& f_train, const Matrix& y_train,
                                const Matrix& f_val, const Matrix& y_val,
                                const RadiusGrid& grid = {}) {
  if (f_train.rows() == 0 || f_val.rows() == 0)
    throw InvalidInputError("tune_radius: empty train or validation embeddings");

  std::vector<double> candidates;
  bool degenerate = false;
  if (!grid.explicit_values.empty()) {
    candidates = grid.explicit_values;
    std::sort(candidates.begin(), candidates.end());
    std::erase_if(candidates, [](double r) { return !(r > 0.0); });
    if (candidates.empty())
      throw InvalidInputError("tune_radius: explicit grid has no positive radius");
  } else {
    std::vector<double> dists;
    dists.reserve(f_train.rows() * f_val.rows());
    for (std::size_t i = 0; i < f_train.rows(); ++i)
      for (std::size_t j = 0; j < f_val.rows(); ++j)
        dists.push_back(euclidean_distance(f_train.row(i), f_val.row(j)));
    std::sort(dists.begin(), dists.end());

    if (dists.back() == 0.0) {
      // Every embedding coincides: any radius behaves identically.
      degenerate = true;
      candidates.push_back(1.0);
    } else {
      double lo = detail::percentile_sorted(dists, grid.lo_percentile);
      double hi = detail::percentile_sorted(dists, grid.hi_percentile);
      if (lo <= 0.0)
        lo = *std::find_if(dists.begin(), dists.end(), [](double d) { return d > 0.0; });
      if (hi < lo) hi = lo;
      const std::size_t n = std::max<std::size_t>(grid.points, 1);
      if (n == 1 || hi == lo) {
        candidates.push_back(lo);
      } else {
        const double ratio = hi / lo;
        for (std::size_t t = 0; t < n; ++t)
          candidates.push_back(
              lo * std::pow(ratio, static_cast<double>(t) / static_cast<double>(n - 1)));
      }
    }
  }

  // Explicit grids may also face coincident embeddings; flag them.
  if (!degenerate && !grid.explicit_values.empty()) {
    bool any_positive = false;
    for (std::size_t i = 0; i < f_train.rows() && !any_positive; ++i)
      for (std::size_t j = 0; j < f_val.rows() && !any_positive; ++j)
        if (squared_distance(f_train.row(i), f_val.row(j)) > 0.0) any_positive = true;
    if (!any_positive) {
      RadiusChoice c;
      c.degenerate = true;
      c.radius = candidates.front();
      EmbeddingIndex idx(f_train, y_train, c.radius);
      c.val_mae = detail::mean_abs_error(predict_batch(idx, f_val).labels, y_val);
      return c;
    }
  }

  RadiusChoice choice;
  choice.degenerate = degenerate;
  for (double r : candidates) {
    EmbeddingIndex idx(f_train, y_train, r);
    const double mae = detail::mean_abs_error(predict_batch(idx, f_val).labels, y_val);
    if (mae < choice.val_mae) {
      choice.val_mae = mae;
      choice.radius = r;
    }
  }
  return choice;
}

}  // namespace metreg
