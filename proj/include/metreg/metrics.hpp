#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <vector>

#include "metreg/errors.hpp"
#include "metreg/linalg.hpp"
#include "metreg/matrix.hpp"

namespace metreg {

struct MetricsReport {
  double mae = 0.0;
  double r2 = 0.0;
  double d5 = 0.0;
  double rv = 0.0;
  std::size_t rv_best_k = 0;
  double rv_excluded_fraction = 0.0;  // pairs dropped as unreachable at the best k
  std::size_t n_test = 0;
  double extrapolated_fraction = 0.0;
};

inline double mae(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInputError("mae: shape mismatch");
  if (pred.size() == 0) throw InvalidInputError("mae: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t j = 0; j < pred.cols(); ++j) acc += std::abs(pred(i, j) - truth(i, j));
  return acc / static_cast<double>(pred.size());
}

// Coefficient of determination about the test-label mean, computed per
// label dimension and averaged.
inline double r2(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw InvalidInputError("r2: shape mismatch");
  const std::size_t n = truth.rows();
  if (n < 2) throw InvalidInputError("r2: need at least two samples");

  double acc = 0.0;
  for (std::size_t j = 0; j < truth.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += truth(i, j);
    mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = truth(i, j) - pred(i, j);
      const double t = truth(i, j) - mean;
      ss_res += r * r;
      ss_tot += t * t;
    }
    if (ss_tot == 0.0) throw DegenerateInputError("r2: zero label variance");
    acc += 1.0 - ss_res / ss_tot;
  }
  return acc / static_cast<double>(truth.cols());
}

// Mean label distance between each test sample and its 5 nearest training
// embeddings. Neighbor ties resolve to the smaller training index.
inline double d5(const Matrix& f_test, const Matrix& y_test, const Matrix& f_train,
                 const Matrix& y_train) {
  constexpr std::size_t kNeighbors = 5;
  if (f_train.rows() < kNeighbors)
    throw InvalidInputError("d5: need at least 5 training points");
  if (f_test.rows() != y_test.rows() || f_train.rows() != y_train.rows())
    throw InvalidInputError("d5: row count mismatch");
  if (f_test.rows() == 0) throw InvalidInputError("d5: empty test set");

  double total = 0.0;
  std::vector<std::pair<double, std::size_t>> order(f_train.rows());
  for (std::size_t t = 0; t < f_test.rows(); ++t) {
    for (std::size_t i = 0; i < f_train.rows(); ++i)
      order[i] = {squared_distance(f_test.row(t), f_train.row(i)), i};
    std::partial_sort(order.begin(), order.begin() + kNeighbors, order.end());
    double gap = 0.0;
    for (std::size_t r = 0; r < kNeighbors; ++r)
      gap += euclidean_distance(y_test.row(t), y_train.row(order[r].second));
    total += gap / static_cast<double>(kNeighbors);
  }
  return total / static_cast<double>(f_test.rows());
}

// Undirected k-nearest-neighbor graph with union symmetrization: an edge
// exists when either endpoint lists the other among its k nearest. Edge
// weight is the Euclidean distance. Ties resolve to the smaller index.
struct KnnGraph {
  std::size_t node_count = 0;
  std::size_t k = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;
};

inline KnnGraph knn_graph(const Matrix& points, std::size_t k) {
  const std::size_t n = points.rows();
  if (n < 2 || k < 1 || k >= n) throw InvalidInputError("knn_graph: need 1 <= k < n");

  const Matrix dist = pairwise_euclidean(points);
  std::vector<std::vector<std::uint8_t>> linked(n, std::vector<std::uint8_t>(n, 0));
  std::vector<std::pair<double, std::size_t>> order(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order[m++] = {dist(i, j), j};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = order[r].second;
      linked[i][j] = 1;
      linked[j][i] = 1;
    }
  }

  KnnGraph g;
  g.node_count = n;
  g.k = k;
  g.adjacency.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (linked[i][j]) g.adjacency[i].emplace_back(j, dist(i, j));
  return g;
}

struct GeodesicResult {
  Matrix distances;  // +inf where unreachable
  std::size_t k_used = 0;
  bool connected = false;
};

// All-pairs shortest paths, one Dijkstra run per source.
inline GeodesicResult geodesic_distances(const KnnGraph& graph) {
  const std::size_t n = graph.node_count;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  GeodesicResult res;
  res.k_used = graph.k;
  res.distances = Matrix(n, n, kInf);
  res.connected = true;

  using Item = std::pair<double, std::size_t>;
  for (std::size_t src = 0; src < n; ++src) {
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    auto row = res.distances.row(src);
    row[src] = 0.0;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > row[u]) continue;
      for (const auto& [v, w] : graph.adjacency[u]) {
        const double nd = d + w;
        if (nd < row[v]) {
          row[v] = nd;
          heap.emplace(nd, v);
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j)
      if (row[j] == kInf) res.connected = false;
  }
  return res;
}

struct ResidualVariance {
  double rv = 0.0;
  std::size_t best_k = 0;
  double excluded_fraction = 0.0;  // unreachable pairs at the best k
};

inline std::vector<std::size_t> default_k_candidates(std::size_t n_test) {
  std::vector<std::size_t> ks;
  for (std::size_t k : {5u, 10u, 15u, 20u, 25u}) {
    const std::size_t clipped = std::min<std::size_t>(k, n_test - 1);
    if (clipped >= 1 && (ks.empty() || ks.back() != clipped)) ks.push_back(clipped);
  }
  return ks;
}

// One minus the correlation between graph geodesics in embedding space
// and Euclidean label distances, minimized over the neighborhood sizes.
// Unreachable pairs are excluded from the correlation; a candidate k that
// loses more than half of all pairs is discarded outright.
inline ResidualVariance residual_variance(const Matrix& f_test, const Matrix& y_test,
                                          std::vector<std::size_t> k_candidates = {}) {
  const std::size_t n = f_test.rows();
  if (n < 3) throw InvalidInputError("residual_variance: need at least 3 samples");
  if (y_test.rows() != n) throw InvalidInputError("residual_variance: row count mismatch");

  if (k_candidates.empty()) k_candidates = default_k_candidates(n);
  std::sort(k_candidates.begin(), k_candidates.end());
  k_candidates.erase(std::unique(k_candidates.begin(), k_candidates.end()),
                     k_candidates.end());
  for (std::size_t k : k_candidates)
    if (k < 1 || k >= n)
      throw InvalidInputError("residual_variance: k candidates must lie in [1, n-1]");

  const Matrix label_dist = pairwise_euclidean(y_test);
  const std::size_t total_pairs = n * (n - 1) / 2;

  ResidualVariance best;
  bool found = false;
  std::vector<double> geo, lab;
  for (std::size_t k : k_candidates) {
    const GeodesicResult geod = geodesic_distances(knn_graph(f_test, k));
    geo.clear();
    lab.clear();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::isfinite(geod.distances(i, j))) {
          geo.push_back(geod.distances(i, j));
          lab.push_back(label_dist(i, j));
        }
    const double excluded =
        1.0 - static_cast<double>(geo.size()) / static_cast<double>(total_pairs);
    if (excluded > 0.5) continue;

    const double rv = 1.0 - pearson(geo, lab);
    if (!found || rv < best.rv) {
      found = true;
      best.rv = rv;
      best.best_k = k;
      best.excluded_fraction = excluded;
    }
  }
  if (!found)
    throw GraphDegeneracyError(
        "residual_variance: every k left most point pairs unreachable");
  return best;
}

}  // namespace metreg
