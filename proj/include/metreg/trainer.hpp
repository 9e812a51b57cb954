#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metreg/adam.hpp"
#include "metreg/dataset.hpp"
#include "metreg/encoder.hpp"
#include "metreg/errors.hpp"
#include "metreg/matrix.hpp"
#include "metreg/metrics.hpp"
#include "metreg/nn_predict.hpp"
#include "metreg/rm_loss.hpp"
#include "metreg/rng.hpp"

namespace metreg {

enum class TrainMode { rm, mse, l1 };

inline std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::rm: return "rm";
    case TrainMode::mse: return "mse";
    default: return "l1";
  }
}

inline TrainMode mode_from_name(const std::string& s) {
  if (s == "rm") return TrainMode::rm;
  if (s == "mse") return TrainMode::mse;
  if (s == "l1") return TrainMode::l1;
  throw InvalidInputError("unknown train mode: " + s);
}

struct ArchSpec {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embed_dim = 8;
  Activation activation = Activation::tanh;
};

struct TrainConfig {
  TrainMode mode = TrainMode::rm;
  std::uint64_t iterations = 15000;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  LossConfig loss;
  std::uint64_t eval_every = 500;
  std::uint64_t seed = 0;
  ArchSpec arch;
};

struct TrainLogRecord {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  // rm-mode diagnostics
  std::optional<double> lbar;
  std::optional<double> scale_s;
  std::optional<double> selected_fraction;  // mask mean over off-diagonal pairs
  std::optional<double> batch_mean_wd;      // E(W*D) of this batch
  // present on evaluation steps
  std::optional<double> val_mae;
  std::optional<double> tuned_radius;
};

struct TrainResult {
  EncoderParams encoder;
  std::optional<HeadParams> head;
  LossState loss_state;
  AdamState adam;
  std::vector<TrainLogRecord> log;
  std::optional<double> tuned_radius;  // rm mode: re-tuned on the selected model
  double best_val_mae = 0.0;
  std::uint64_t best_iteration = 0;
  TrainConfig config;
};

inline Matrix embed(const EncoderParams& params, const Matrix& x) {
  return encoder_forward(params, x);
}

namespace detail {

// Parameter/gradient block views in the fixed checkpoint order:
// [W0, b0, W1, b1, ...] plus log_s (rm) or the head (baselines).
inline std::vector<std::span<double>> param_blocks(EncoderParams& enc, HeadParams* head,
                                                   double* log_s) {
  std::vector<std::span<double>> blocks;
  for (std::size_t l = 0; l < enc.layer_count(); ++l) {
    blocks.push_back(enc.weights[l].flat());
    blocks.push_back(std::span<double>(enc.biases[l]));
  }
  if (head) {
    blocks.push_back(head->weight.flat());
    blocks.push_back(std::span<double>(head->bias));
  }
  if (log_s) blocks.push_back(std::span<double>(log_s, 1));
  return blocks;
}

inline std::vector<std::span<const double>> grad_blocks(EncoderGrads& eg, HeadGrads* hg,
                                                        const double* dlog_s) {
  std::vector<std::span<const double>> blocks;
  for (std::size_t l = 0; l < eg.weights.size(); ++l) {
    blocks.push_back(eg.weights[l].flat());
    blocks.push_back(std::span<const double>(eg.biases[l]));
  }
  if (hg) {
    blocks.push_back(hg->weight.flat());
    blocks.push_back(std::span<const double>(hg->bias));
  }
  if (dlog_s) blocks.push_back(std::span<const double>(dlog_s, 1));
  return blocks;
}

}  // namespace detail

// Single-threaded training loop; every random draw derives from
// config.seed, so a (dataset, config) pair pins the whole run bit for bit.
// The returned model is the snapshot with the best validation MAE.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.iterations == 0) throw InvalidInputError("train: iterations must be > 0");
  if (cfg.batch_size < 2) throw InvalidInputError("train: batch_size must be >= 2");
  const auto train_idx = ds.indices_of(SplitTag::train);
  const auto val_idx = ds.indices_of(SplitTag::val);
  if (train_idx.empty() || val_idx.empty())
    throw InvalidInputError("train: dataset needs nonempty train and val splits");

  std::vector<std::size_t> layer_sizes;
  layer_sizes.push_back(ds.feature_dim());
  layer_sizes.insert(layer_sizes.end(), cfg.arch.hidden.begin(), cfg.arch.hidden.end());
  layer_sizes.push_back(cfg.arch.embed_dim);

  TrainResult res;
  res.config = cfg;
  res.encoder = init_encoder(layer_sizes, cfg.arch.activation, derive_seed(cfg.seed, 11));
  const bool use_head = cfg.mode != TrainMode::rm;
  if (use_head)
    res.head = init_head(ds.label_dim(), cfg.arch.embed_dim, derive_seed(cfg.seed, 12));

  std::vector<std::size_t> block_sizes;
  for (std::size_t l = 0; l < res.encoder.layer_count(); ++l) {
    block_sizes.push_back(res.encoder.weights[l].size());
    block_sizes.push_back(res.encoder.biases[l].size());
  }
  if (use_head) {
    block_sizes.push_back(res.head->weight.size());
    block_sizes.push_back(res.head->bias.size());
  } else {
    block_sizes.push_back(1);  // log_s
  }
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  res.adam = make_adam_state(block_sizes, adam_cfg);

  BatchIterator batches(train_idx, std::min(cfg.batch_size, train_idx.size()),
                        derive_seed(cfg.seed, 13));

  const Matrix f_train_inputs = ds.gather_features(train_idx);
  const Matrix y_train_norm = ds.gather_labels(train_idx);
  const Matrix f_val_inputs = ds.gather_features(val_idx);
  const Matrix y_val_norm = ds.gather_labels(val_idx);

  struct Snapshot {
    EncoderParams encoder;
    std::optional<HeadParams> head;
    LossState loss_state;
    AdamState adam;
    double val_mae;
    std::uint64_t iteration;
  };
  std::optional<Snapshot> best;

  for (std::uint64_t it = 1; it <= cfg.iterations; ++it) {
    const std::vector<std::size_t> batch = batches.next();
    const Matrix xb = ds.gather_features(batch);
    const Matrix yb = ds.gather_labels(batch);

    TrainLogRecord rec;
    rec.iteration = it;

    ForwardCache cache;
    const Matrix fb = encoder_forward(res.encoder, xb, &cache);

    if (cfg.mode == TrainMode::rm) {
      PairBatch pb = pair_terms(fb, yb, res.loss_state, cfg.loss);
      mine_mask(pb, res.loss_state, cfg.loss);
      const double loss = rm_loss(pb);
      if (!std::isfinite(loss))
        throw TrainAbortError(it, batch,
                              "train: non-finite loss at iteration " + std::to_string(it));
      RmLossGrads lg = rm_loss_backward(pb, fb, res.loss_state);
      EncoderGrads eg = encoder_backward(res.encoder, cache, lg.embeddings);
      auto params = detail::param_blocks(res.encoder, nullptr, &res.loss_state.log_s);
      auto grads = detail::grad_blocks(eg, nullptr, &lg.log_scale);
      adam_step(params, grads, res.adam);

      const std::size_t b = batch.size();
      rec.loss = loss;
      rec.lbar = res.loss_state.ema_lbar;
      rec.scale_s = res.loss_state.scale();
      rec.selected_fraction = static_cast<double>(pb.pair_count_selected) /
                              static_cast<double>(b * b - b);
      rec.batch_mean_wd = pb.mean_weighted_residual;
    } else {
      const Matrix pred = head_forward(*res.head, fb);
      const ScalarLossGrad sl =
          cfg.mode == TrainMode::mse ? mse_loss(pred, yb) : l1_loss(pred, yb);
      if (!std::isfinite(sl.loss))
        throw TrainAbortError(it, batch,
                              "train: non-finite loss at iteration " + std::to_string(it));
      HeadGrads hg = head_backward(*res.head, fb, sl.grad);
      EncoderGrads eg = encoder_backward(res.encoder, cache, hg.input);
      auto params = detail::param_blocks(res.encoder, &*res.head, nullptr);
      auto grads = detail::grad_blocks(eg, &hg, nullptr);
      adam_step(params, grads, res.adam);
      rec.loss = sl.loss;
    }

    if (it % cfg.eval_every == 0 || it == cfg.iterations) {
      const Matrix f_train = embed(res.encoder, f_train_inputs);
      const Matrix f_val = embed(res.encoder, f_val_inputs);
      double val_mae = 0.0;
      if (cfg.mode == TrainMode::rm) {
        const RadiusChoice rc = tune_radius(f_train, y_train_norm, f_val, y_val_norm);
        val_mae = rc.val_mae;
        rec.tuned_radius = rc.radius;
      } else {
        val_mae = mae(head_forward(*res.head, f_val), y_val_norm);
      }
      rec.val_mae = val_mae;
      if (!best || val_mae < best->val_mae)
        best = Snapshot{res.encoder, res.head, res.loss_state, res.adam, val_mae, it};
    }
    res.log.push_back(std::move(rec));
  }

  res.encoder = best->encoder;
  res.head = best->head;
  res.loss_state = best->loss_state;
  res.adam = best->adam;
  res.best_val_mae = best->val_mae;
  res.best_iteration = best->iteration;

  if (cfg.mode == TrainMode::rm) {
    const Matrix f_train = embed(res.encoder, f_train_inputs);
    const Matrix f_val = embed(res.encoder, f_val_inputs);
    res.tuned_radius = tune_radius(f_train, y_train_norm, f_val, y_val_norm).radius;
  }
  return res;
}

}  // namespace metreg
