#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metreg/errors.hpp"
#include "metreg/matrix.hpp"
#include "metreg/rng.hpp"

namespace metreg {

enum class SplitTag { train, val, test };
enum class DatasetKind { curve1d, surface2d };

inline std::string split_name(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    default: return "test";
  }
}

inline SplitTag split_from_name(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  throw InvalidInputError("unknown split tag: " + s);
}

inline std::string kind_name(DatasetKind k) {
  return k == DatasetKind::curve1d ? "curve1d" : "surface2d";
}

inline DatasetKind kind_from_name(const std::string& s) {
  if (s == "curve1d") return DatasetKind::curve1d;
  if (s == "surface2d") return DatasetKind::surface2d;
  throw InvalidInputError("unknown dataset kind: " + s);
}

// Per-dimension invertible label transform: normalized = (raw - mean) / scale.
struct NormParams {
  std::string mode = "none";  // none | zscore | affine
  std::vector<double> mean;
  std::vector<double> scale;
};

struct NormalizeSpec {
  enum class Mode { zscore, affine } mode = Mode::zscore;
  double center = 0.0;      // affine only
  double half_range = 1.0;  // affine only
};

struct Dataset {
  Matrix features;    // X: N x d_x
  Matrix labels_raw;  // Y_raw: N x d_y
  Matrix labels;      // normalized labels used for training
  std::vector<SplitTag> split;
  NormParams norm;
  DatasetKind kind = DatasetKind::curve1d;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
  std::size_t label_dim() const { return labels_raw.cols(); }

  std::vector<std::size_t> indices_of(SplitTag tag) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == tag) idx.push_back(i);
    return idx;
  }

  Matrix gather_features(const std::vector<std::size_t>& idx) const {
    return gather(features, idx);
  }
  Matrix gather_labels(const std::vector<std::size_t>& idx) const {
    return gather(labels, idx);
  }
  Matrix gather_labels_raw(const std::vector<std::size_t>& idx) const {
    return gather(labels_raw, idx);
  }

private:
  static Matrix gather(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(idx[r], c);
    return out;
  }
};

namespace detail {

// Fixed smooth embedding curves. The leading coordinates are strictly
// increasing in each label component, which makes both maps injective on
// the label domain; the remaining coordinates are low-frequency sinusoids.
//
//   curve1d   : g_0(y) = y + 0.25 y^2
//               g_j(y) = sin((1 + 0.61803 j) y + 0.7 j),            j >= 1
//   surface2d : g_0(u,v) = u + 0.25 u^2
//               g_1(u,v) = v + 0.25 v^2
//               g_j(u,v) = sin((1 + 0.618 i) u + (1.2 + 0.414 i) v + 0.7 i),
//               with i = j - 2,                                      j >= 2
inline void curve1d_point(double y, std::span<double> x) {
  x[0] = y + 0.25 * y * y;
  for (std::size_t j = 1; j < x.size(); ++j) {
    const double fj = static_cast<double>(j);
    x[j] = std::sin((1.0 + 0.61803 * fj) * y + 0.7 * fj);
  }
}

inline void surface2d_point(double u, double v, std::span<double> x) {
  x[0] = u + 0.25 * u * u;
  x[1] = v + 0.25 * v * v;
  for (std::size_t j = 2; j < x.size(); ++j) {
    const double i = static_cast<double>(j - 2);
    x[j] = std::sin((1.0 + 0.618 * i) * u + (1.2 + 0.414 * i) * v + 0.7 * i);
  }
}

inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw InvalidInputError("malformed float: '" + s + "'");
  return v;
}

}  // namespace detail

// Samples labels uniformly from the label domain and lifts them through
// the fixed embedding curve, adding isotropic Gaussian feature noise.
// Labels and noise are drawn from separate derived streams so the label
// sequence does not depend on d_x. Everything is pinned by the seed.
inline Dataset generate(DatasetKind kind, std::size_t n, std::size_t d_x, double noise_sd,
                        std::uint64_t seed) {
  if (n < 10) throw InvalidInputError("generate: need n >= 10");
  if (noise_sd < 0.0) throw InvalidInputError("generate: negative noise_sd");
  const std::size_t d_y = kind == DatasetKind::curve1d ? 1 : 2;
  if (d_x < d_y)
    throw InvalidInputError("generate: d_x must be at least the label dimension");

  Dataset ds;
  ds.kind = kind;
  ds.noise_sd = noise_sd;
  ds.seed = seed;
  ds.features = Matrix(n, d_x);
  ds.labels_raw = Matrix(n, d_y);

  Rng label_rng(derive_seed(seed, 1));
  Rng noise_rng(derive_seed(seed, 2));
  for (std::size_t i = 0; i < n; ++i) {
    if (kind == DatasetKind::curve1d) {
      const double y = label_rng.uniform();
      ds.labels_raw(i, 0) = y;
      detail::curve1d_point(y, ds.features.row(i));
    } else {
      const double u = label_rng.uniform();
      const double v = label_rng.uniform();
      ds.labels_raw(i, 0) = u;
      ds.labels_raw(i, 1) = v;
      detail::surface2d_point(u, v, ds.features.row(i));
    }
    if (noise_sd > 0.0)
      for (std::size_t j = 0; j < d_x; ++j)
        ds.features(i, j) += noise_sd * noise_rng.normal();
  }

  ds.labels = ds.labels_raw;
  ds.norm.mode = "none";
  ds.norm.mean.assign(d_y, 0.0);
  ds.norm.scale.assign(d_y, 1.0);
  ds.split.assign(n, SplitTag::train);
  return ds;
}

inline std::pair<Matrix, NormParams> normalize_labels(const Matrix& raw,
                                                      const NormalizeSpec& spec) {
  if (raw.rows() == 0) throw InvalidInputError("normalize_labels: empty labels");
  NormParams p;
  const std::size_t d = raw.cols();
  p.mean.assign(d, 0.0);
  p.scale.assign(d, 1.0);

  if (spec.mode == NormalizeSpec::Mode::zscore) {
    p.mode = "zscore";
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < raw.rows(); ++i) mean += raw(i, j);
      mean /= static_cast<double>(raw.rows());
      double var = 0.0;
      for (std::size_t i = 0; i < raw.rows(); ++i) {
        const double c = raw(i, j) - mean;
        var += c * c;
      }
      var /= static_cast<double>(raw.rows());
      if (var == 0.0)
        throw DegenerateInputError("normalize_labels: zero variance in dimension " +
                                   std::to_string(j));
      p.mean[j] = mean;
      p.scale[j] = std::sqrt(var);
    }
  } else {
    if (!(spec.half_range > 0.0))
      throw InvalidInputError("normalize_labels: half_range must be positive");
    p.mode = "affine";
    p.mean.assign(d, spec.center);
    p.scale.assign(d, spec.half_range);
  }

  Matrix out(raw.rows(), d);
  for (std::size_t i = 0; i < raw.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = (raw(i, j) - p.mean[j]) / p.scale[j];
  return {std::move(out), std::move(p)};
}

inline Matrix denormalize_labels(const Matrix& normalized, const NormParams& p) {
  Matrix out(normalized.rows(), normalized.cols());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = normalized(i, j) * p.scale[j] + p.mean[j];
  return out;
}

inline void apply_normalization(Dataset& ds, const NormalizeSpec& spec) {
  auto [labels, params] = normalize_labels(ds.labels_raw, spec);
  ds.labels = std::move(labels);
  ds.norm = std::move(params);
}

// Deterministic shuffled split. Counts come from the largest-remainder
// rounding of n * fraction, so stated proportions are met exactly when
// they divide n.
inline void assign_splits(Dataset& ds, const std::array<double, 3>& fractions,
                          std::uint64_t seed) {
  const std::size_t n = ds.size();
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw InvalidInputError("assign_splits: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidInputError("assign_splits: fractions must sum to 1");

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = fractions[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(exact);
    remainders[s] = exact - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  while (assigned < n) {
    std::size_t pick = 0;
    for (std::size_t s = 1; s < 3; ++s)
      if (remainders[s] > remainders[pick]) pick = s;
    ++counts[pick];
    remainders[pick] = -1.0;
    ++assigned;
  }
  for (std::size_t s = 0; s < 3; ++s)
    if (counts[s] == 0)
      throw InvalidInputError("assign_splits: split " + std::to_string(s) +
                              " empty at n = " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  ds.split.assign(n, SplitTag::test);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) ds.split[order[pos++]] = SplitTag::train;
  for (std::size_t i = 0; i < counts[1]; ++i) ds.split[order[pos++]] = SplitTag::val;
  for (std::size_t i = 0; i < counts[2]; ++i) ds.split[order[pos++]] = SplitTag::test;
}

// Epoch-wise shuffled batches without replacement; a trailing batch with
// fewer than two indices is dropped for that epoch (the loss needs pairs).
class BatchIterator {
public:
  BatchIterator(std::vector<std::size_t> indices, std::size_t batch_size,
                std::uint64_t seed)
      : indices_(std::move(indices)), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ < 2) throw InvalidInputError("BatchIterator: batch_size must be >= 2");
    if (indices_.size() < 2)
      throw InvalidInputError("BatchIterator: need at least two indices");
    rng_.shuffle(indices_);
  }

  std::vector<std::size_t> next() {
    if (indices_.size() - cursor_ < 2) {
      rng_.shuffle(indices_);
      cursor_ = 0;
    }
    const std::size_t take = std::min(batch_size_, indices_.size() - cursor_);
    std::vector<std::size_t> batch(indices_.begin() + cursor_,
                                   indices_.begin() + cursor_ + take);
    cursor_ += take;
    return batch;
  }

  std::size_t batches_per_epoch() const {
    const std::size_t full = indices_.size() / batch_size_;
    const std::size_t rest = indices_.size() % batch_size_;
    return full + (rest >= 2 ? 1 : 0);
  }

private:
  std::vector<std::size_t> indices_;
  std::size_t batch_size_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

// CSV layout: x0..x{d_x-1}, y0..y{d_y-1}, split — raw labels, 17
// significant digits so every double round-trips exactly. The sidecar
// JSON holds kind, seed, noise_sd, and the normalization parameters.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                         const std::filesystem::path& meta_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw InvalidInputError("save_dataset: cannot open " + csv_path.string());
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) csv << 'x' << j << ',';
  for (std::size_t j = 0; j < ds.label_dim(); ++j) csv << 'y' << j << ',';
  csv << "split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.feature_dim(); ++j)
      csv << detail::format_double(ds.features(i, j)) << ',';
    for (std::size_t j = 0; j < ds.label_dim(); ++j)
      csv << detail::format_double(ds.labels_raw(i, j)) << ',';
    csv << split_name(ds.split[i]) << '\n';
  }
  csv.close();

  nlohmann::json meta{
      {"format_version", 1},
      {"kind", kind_name(ds.kind)},
      {"seed", ds.seed},
      {"noise_sd", ds.noise_sd},
      {"n", ds.size()},
      {"d_x", ds.feature_dim()},
      {"d_y", ds.label_dim()},
      {"norm",
       {{"mode", ds.norm.mode}, {"mean", ds.norm.mean}, {"scale", ds.norm.scale}}},
  };
  std::ofstream mf(meta_path);
  if (!mf) throw InvalidInputError("save_dataset: cannot open " + meta_path.string());
  mf << meta.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& csv_path,
                            const std::filesystem::path& meta_path) {
  std::ifstream mf(meta_path);
  if (!mf) throw InvalidInputError("load_dataset: cannot open " + meta_path.string());
  nlohmann::json meta = nlohmann::json::parse(mf);

  Dataset ds;
  ds.kind = kind_from_name(meta.at("kind").get<std::string>());
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.noise_sd = meta.at("noise_sd").get<double>();
  const std::size_t n = meta.at("n").get<std::size_t>();
  const std::size_t d_x = meta.at("d_x").get<std::size_t>();
  const std::size_t d_y = meta.at("d_y").get<std::size_t>();
  ds.norm.mode = meta.at("norm").at("mode").get<std::string>();
  ds.norm.mean = meta.at("norm").at("mean").get<std::vector<double>>();
  ds.norm.scale = meta.at("norm").at("scale").get<std::vector<double>>();
  if (ds.norm.mean.size() != d_y || ds.norm.scale.size() != d_y)
    throw InvalidInputError("load_dataset: norm parameter arity mismatch");
  for (double s : ds.norm.scale)
    if (!(s > 0.0)) throw InvalidInputError("load_dataset: non-positive norm scale");

  std::ifstream csv(csv_path);
  if (!csv) throw InvalidInputError("load_dataset: cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(csv, line))
    throw InvalidInputError("load_dataset: missing CSV header");

  ds.features = Matrix(n, d_x);
  ds.labels_raw = Matrix(n, d_y);
  ds.split.assign(n, SplitTag::train);
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    if (row >= n) throw InvalidInputError("load_dataset: more rows than metadata n");
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t j = 0; j < d_x; ++j) {
      if (!std::getline(ss, cell, ',')) throw InvalidInputError("load_dataset: short row");
      ds.features(row, j) = detail::parse_double(cell);
    }
    for (std::size_t j = 0; j < d_y; ++j) {
      if (!std::getline(ss, cell, ',')) throw InvalidInputError("load_dataset: short row");
      ds.labels_raw(row, j) = detail::parse_double(cell);
    }
    if (!std::getline(ss, cell, ',')) throw InvalidInputError("load_dataset: short row");
    ds.split[row] = split_from_name(cell);
    ++row;
  }
  if (row != n) throw InvalidInputError("load_dataset: fewer rows than metadata n");
  if (!ds.features.all_finite() || !ds.labels_raw.all_finite())
    throw InvalidInputError("load_dataset: non-finite values in dataset");

  ds.labels = Matrix(n, d_y);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d_y; ++j)
      ds.labels(i, j) = (ds.labels_raw(i, j) - ds.norm.mean[j]) / ds.norm.scale[j];
  return ds;
}

}  // namespace metreg
