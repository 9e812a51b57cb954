#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "metreg/errors.hpp"
#include "metreg/matrix.hpp"
#include "metreg/rng.hpp"

namespace metreg {

enum class Activation { tanh, relu };

inline std::string activation_name(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw InvalidInputError("unknown activation: " + name);
}

// A small fully connected encoder x -> f. weights[l] has shape
// sizes[l+1] x sizes[l]; hidden layers share one activation, the output
// layer is linear.
struct EncoderParams {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  Activation activation = Activation::tanh;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

// Linear readout used by the mean-squared / absolute-error baselines.
struct HeadParams {
  Matrix weight;             // d_y x d_f
  std::vector<double> bias;  // d_y
};

// Uniform initialization in +-sqrt(6 / (fan_in + fan_out)) per layer,
// zero biases. Entries are drawn row-major, layer by layer, from one
// mt19937_64 stream, so a seed pins every parameter bit.
inline EncoderParams init_encoder(const std::vector<std::size_t>& layer_sizes,
                                  Activation activation, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw InvalidInputError("init_encoder: need input and output sizes");
  for (std::size_t s : layer_sizes)
    if (s == 0) throw InvalidInputError("init_encoder: zero-width layer");

  EncoderParams p;
  p.layer_sizes = layer_sizes;
  p.activation = activation;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (double& v : w.flat()) v = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

inline HeadParams init_head(std::size_t label_dim, std::size_t embed_dim,
                            std::uint64_t seed) {
  HeadParams h;
  h.weight = Matrix(label_dim, embed_dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(label_dim + embed_dim));
  Rng rng(seed);
  for (double& v : h.weight.flat()) v = rng.uniform(-bound, bound);
  h.bias.assign(label_dim, 0.0);
  return h;
}

struct ForwardCache {
  Matrix input;                    // B x d_x
  std::vector<Matrix> pre;         // pre-activations per layer
  std::vector<Matrix> post;        // activations per layer; back() is the output
};

namespace detail {

inline double activate(double z, Activation a) {
  return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// relu derivative at exactly 0 is taken as 0.
inline double activate_grad(double pre, double post, Activation a) {
  return a == Activation::tanh ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}

}  // namespace detail

// Returns the B x d_f embedding; fills `cache` for a later backward pass
// when given.
inline Matrix encoder_forward(const EncoderParams& p, const Matrix& x,
                              ForwardCache* cache = nullptr) {
  if (x.cols() != p.input_dim())
    throw InvalidInputError("encoder_forward: input width mismatch");
  if (cache) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
  }

  Matrix act = x;
  const std::size_t layers = p.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = matmul_abt(act, p.weights[l]);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += p.biases[l][j];

    Matrix out = z;
    if (l + 1 < layers)
      for (double& v : out.flat()) v = detail::activate(v, p.activation);

    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(out);
    }
    act = std::move(out);
  }
  return act;
}

struct EncoderGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

// Backpropagates dL/dF through the cached forward pass.
inline EncoderGrads encoder_backward(const EncoderParams& p, const ForwardCache& cache,
                                     const Matrix& dl_df) {
  const std::size_t layers = p.layer_count();
  if (cache.pre.size() != layers || cache.post.size() != layers)
    throw InvalidStateError("encoder_backward: cache does not match parameters");
  if (dl_df.rows() != cache.input.rows() || dl_df.cols() != p.output_dim())
    throw InvalidStateError("encoder_backward: gradient shape does not match cache");

  EncoderGrads g;
  g.weights.resize(layers);
  g.biases.resize(layers);

  Matrix delta = dl_df;  // output layer is linear
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& below = l == 0 ? cache.input : cache.post[l - 1];
    g.weights[l] = matmul_atb(delta, below);
    g.biases[l].assign(p.biases[l].size(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t j = 0; j < delta.cols(); ++j) g.biases[l][j] += delta(i, j);

    if (l == 0) break;
    Matrix next = matmul(delta, p.weights[l]);
    const Matrix& pre = cache.pre[l - 1];
    const Matrix& post = cache.post[l - 1];
    for (std::size_t i = 0; i < next.rows(); ++i)
      for (std::size_t j = 0; j < next.cols(); ++j)
        next(i, j) *= detail::activate_grad(pre(i, j), post(i, j), p.activation);
    delta = std::move(next);
  }
  return g;
}

inline Matrix head_forward(const HeadParams& h, const Matrix& f) {
  if (f.cols() != h.weight.cols())
    throw InvalidInputError("head_forward: embedding width mismatch");
  Matrix y = matmul_abt(f, h.weight);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += h.bias[j];
  return y;
}

struct HeadGrads {
  Matrix weight;
  std::vector<double> bias;
  Matrix input;  // dL/dF, to keep propagating into the encoder
};

inline HeadGrads head_backward(const HeadParams& h, const Matrix& f,
                               const Matrix& dl_dy) {
  if (dl_dy.rows() != f.rows() || dl_dy.cols() != h.weight.rows())
    throw InvalidStateError("head_backward: gradient shape mismatch");
  HeadGrads g;
  g.weight = matmul_atb(dl_dy, f);
  g.bias.assign(h.bias.size(), 0.0);
  for (std::size_t i = 0; i < dl_dy.rows(); ++i)
    for (std::size_t j = 0; j < dl_dy.cols(); ++j) g.bias[j] += dl_dy(i, j);
  g.input = matmul(dl_dy, h.weight);
  return g;
}

}  // namespace metreg
