#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "metreg/errors.hpp"
#include "metreg/matrix.hpp"

namespace metreg {

// All pairwise Euclidean distances between the rows of A.
// Each entry is accumulated as sum((a-b)^2) per pair rather than through
// the Gram-matrix expansion, so no cancellation can drive a squared
// distance negative; the clamp below is a pure safety net.
inline Matrix pairwise_euclidean(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0)
    throw InvalidInputError("pairwise_euclidean: empty matrix");
  const std::size_t n = a.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = squared_distance(a.row(i), a.row(j));
      if (sq < 0.0) sq = 0.0;
      const double dist = std::sqrt(sq);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

// Pearson correlation coefficient, clamped into [-1, 1].
inline double pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InvalidInputError("pearson: length mismatch");
  const std::size_t n = u.size();
  if (n < 2) throw InvalidInputError("pearson: need at least two samples");
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suu = 0.0, svv = 0.0, suv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double du = u[i] - mu;
    const double dv = v[i] - mv;
    suu += du * du;
    svv += dv * dv;
    suv += du * dv;
  }
  if (suu == 0.0 || svv == 0.0)
    throw DegenerateInputError("pearson: zero variance input");
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

struct PcaResult {
  Matrix projected;                        // N x out_dims
  Matrix components;                       // out_dims x d, rows are unit axes
  std::vector<double> component_variances; // descending
  std::vector<double> column_means;        // length d
  bool rank_deficient = false;             // some requested column had ~zero variance
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic
// sweep order; plenty for the small covariance matrices used here.
inline void jacobi_eigen_symmetric(Matrix a, std::vector<double>& eigenvalues,
                                   Matrix& eigenvectors) {
  const std::size_t n = a.rows();
  eigenvectors = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) eigenvectors(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigenvectors(k, p), vkq = eigenvectors(k, q);
          eigenvectors(k, p) = c * vkp - s * vkq;
          eigenvectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);
}

}  // namespace detail

// Projects the rows of A onto the top principal components of the
// mean-centered data. Components are ordered by descending variance and
// sign-fixed so the largest-magnitude loading of each axis is positive.
// Requested dimensions beyond the numerical rank come back as zero
// columns with rank_deficient set.
inline PcaResult pca_project(const Matrix& a, std::size_t out_dims) {
  const std::size_t n = a.rows(), d = a.cols();
  if (n == 0 || d == 0) throw InvalidInputError("pca_project: empty matrix");
  if (out_dims < 1 || out_dims > std::min(n, d))
    throw InvalidInputError("pca_project: out_dims must be in [1, min(rows, cols)]");

  PcaResult res;
  res.column_means.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) res.column_means[j] += a(i, j);
  for (std::size_t j = 0; j < d; ++j) res.column_means[j] /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = a(i, j) - res.column_means[j];

  // Sample covariance (d x d); d is small by construction.
  Matrix cov(d, d);
  if (n > 1) {
    cov = matmul_atb(centered, centered);
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (double& v : cov.flat()) v *= inv;
  }

  std::vector<double> eigenvalues;
  Matrix eigenvectors;
  detail::jacobi_eigen_symmetric(cov, eigenvalues, eigenvectors);

  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (eigenvalues[x] != eigenvalues[y]) return eigenvalues[x] > eigenvalues[y];
    return x < y;
  });

  const double max_eig = std::max(eigenvalues[order[0]], 0.0);
  const double rank_tol = max_eig * 1e-10;

  res.components = Matrix(out_dims, d);
  res.component_variances.assign(out_dims, 0.0);
  for (std::size_t c = 0; c < out_dims; ++c) {
    const std::size_t src = order[c];
    if (eigenvalues[src] <= rank_tol) {
      res.rank_deficient = true;  // leave the axis, projection stays zero
      continue;
    }
    res.component_variances[c] = eigenvalues[src];
    std::size_t peak = 0;
    double peak_mag = -1.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double mag = std::abs(eigenvectors(j, src));
      if (mag > peak_mag) {
        peak_mag = mag;
        peak = j;
      }
    }
    const double flip = eigenvectors(peak, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) res.components(c, j) = flip * eigenvectors(j, src);
  }

  // Zeroed axes project to zero columns automatically.
  res.projected = matmul_abt(centered, res.components);
  return res;
}

}  // namespace metreg
