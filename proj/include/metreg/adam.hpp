#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metreg/errors.hpp"

namespace metreg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a list of parameter blocks. Blocks mirror
// whatever layout the caller optimizes (per-layer weights, biases, the
// loss scale) so a NaN can be reported against a specific block.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;  // first moments, one vector per block
  std::vector<std::vector<double>> v;  // second moments
  std::uint64_t step = 0;
};

inline AdamState make_adam_state(const std::vector<std::size_t>& block_sizes,
                                 const AdamConfig& config = {}) {
  AdamState s;
  s.config = config;
  for (std::size_t n : block_sizes) {
    s.m.emplace_back(n, 0.0);
    s.v.emplace_back(n, 0.0);
  }
  return s;
}

// One optimizer step. Every gradient block is scanned before any
// parameter is touched; a NaN aborts the whole update and names the
// offending block.
inline void adam_step(std::vector<std::span<double>> params,
                      std::vector<std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw InvalidInputError("adam_step: block count mismatch");
  for (std::size_t b = 0; b < grads.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.m[b].size())
      throw InvalidInputError("adam_step: block size mismatch");
    for (double g : grads[b])
      if (std::isnan(g))
        throw NanGradientError(b, "adam_step: NaN gradient in block " + std::to_string(b));
  }

  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[b][i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace metreg
