#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "metreg/adam.hpp"
#include "metreg/encoder.hpp"
#include "metreg/errors.hpp"
#include "metreg/rm_loss.hpp"
#include "metreg/trainer.hpp"

namespace metreg {

// JSON is the container for checkpoints: text doubles round-trip exactly
// through nlohmann::json, the layout is versioned, and diffing two runs
// stays trivial.

inline nlohmann::json sigma_to_json(double sigma) {
  if (std::isinf(sigma)) return "inf";
  return sigma;
}

inline double sigma_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw InvalidInputError("sigma: expected a number or \"inf\"");
  }
  return j.get<double>();
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"mode", mode_name(cfg.mode)},
      {"iterations", cfg.iterations},
      {"batch_size", cfg.batch_size},
      {"lr", cfg.lr},
      {"eval_every", cfg.eval_every},
      {"seed", cfg.seed},
      {"loss",
       {{"sigma", sigma_to_json(cfg.loss.sigma)},
        {"alpha", cfg.loss.alpha},
        {"ema_decay", cfg.loss.ema_decay},
        {"mining", cfg.loss.mining_enabled}}},
      {"arch",
       {{"hidden", cfg.arch.hidden},
        {"embed_dim", cfg.arch.embed_dim},
        {"activation", activation_name(cfg.arch.activation)}}},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.mode = mode_from_name(j.at("mode").get<std::string>());
  cfg.iterations = j.at("iterations").get<std::uint64_t>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.lr = j.at("lr").get<double>();
  cfg.eval_every = j.at("eval_every").get<std::uint64_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const auto& loss = j.at("loss");
  cfg.loss.sigma = sigma_from_json(loss.at("sigma"));
  cfg.loss.alpha = loss.at("alpha").get<double>();
  cfg.loss.ema_decay = loss.at("ema_decay").get<double>();
  cfg.loss.mining_enabled = loss.at("mining").get<bool>();
  const auto& arch = j.at("arch");
  cfg.arch.hidden = arch.at("hidden").get<std::vector<std::size_t>>();
  cfg.arch.embed_dim = arch.at("embed_dim").get<std::size_t>();
  cfg.arch.activation = activation_from_name(arch.at("activation").get<std::string>());
  return cfg;
}

struct Checkpoint {
  TrainMode mode = TrainMode::rm;
  EncoderParams encoder;
  std::optional<HeadParams> head;
  LossState loss_state;
  AdamState adam;
  std::optional<double> tuned_radius;
  double best_val_mae = 0.0;
  std::uint64_t best_iteration = 0;
  TrainConfig train_config;
};

inline Checkpoint checkpoint_from_result(const TrainResult& r) {
  Checkpoint c;
  c.mode = r.config.mode;
  c.encoder = r.encoder;
  c.head = r.head;
  c.loss_state = r.loss_state;
  c.adam = r.adam;
  c.tuned_radius = r.tuned_radius;
  c.best_val_mae = r.best_val_mae;
  c.best_iteration = r.best_iteration;
  c.train_config = r.config;
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["mode"] = mode_name(c.mode);
  j["activation"] = activation_name(c.encoder.activation);
  j["layer_sizes"] = c.encoder.layer_sizes;
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (std::size_t l = 0; l < c.encoder.layer_count(); ++l) {
    weights.push_back(std::vector<double>(c.encoder.weights[l].flat().begin(),
                                          c.encoder.weights[l].flat().end()));
    biases.push_back(c.encoder.biases[l]);
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  if (c.head) {
    j["head"] = {
        {"label_dim", c.head->weight.rows()},
        {"weight",
         std::vector<double>(c.head->weight.flat().begin(), c.head->weight.flat().end())},
        {"bias", c.head->bias}};
  } else {
    j["head"] = nullptr;
  }
  j["loss_state"] = {{"log_s", c.loss_state.log_s},
                     {"ema_lbar", c.loss_state.ema_lbar},
                     {"ema_initialized", c.loss_state.ema_initialized},
                     {"iteration", c.loss_state.iteration}};
  j["adam"] = {{"lr", c.adam.config.lr},     {"beta1", c.adam.config.beta1},
               {"beta2", c.adam.config.beta2}, {"eps", c.adam.config.eps},
               {"step", c.adam.step},          {"m", c.adam.m},
               {"v", c.adam.v}};
  if (c.tuned_radius)
    j["tuned_radius"] = *c.tuned_radius;
  else
    j["tuned_radius"] = nullptr;
  j["best_val_mae"] = c.best_val_mae;
  j["best_iteration"] = c.best_iteration;
  j["train_config"] = train_config_to_json(c.train_config);

  std::ofstream out(path);
  if (!out) throw InvalidInputError("save_checkpoint: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("load_checkpoint: cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("format_version").get<int>() != 1)
    throw InvalidInputError("load_checkpoint: unsupported format version");

  Checkpoint c;
  c.mode = mode_from_name(j.at("mode").get<std::string>());
  c.encoder.activation = activation_from_name(j.at("activation").get<std::string>());
  c.encoder.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() + 1 != c.encoder.layer_sizes.size())
    throw InvalidInputError("load_checkpoint: layer count mismatch");
  for (std::size_t l = 0; l + 1 < c.encoder.layer_sizes.size(); ++l) {
    const std::size_t rows = c.encoder.layer_sizes[l + 1];
    const std::size_t cols = c.encoder.layer_sizes[l];
    const auto flat = weights.at(l).get<std::vector<double>>();
    if (flat.size() != rows * cols)
      throw InvalidInputError("load_checkpoint: weight size mismatch");
    Matrix w(rows, cols);
    std::copy(flat.begin(), flat.end(), w.data());
    c.encoder.weights.push_back(std::move(w));
    c.encoder.biases.push_back(biases.at(l).get<std::vector<double>>());
    if (c.encoder.biases.back().size() != rows)
      throw InvalidInputError("load_checkpoint: bias size mismatch");
  }
  if (!j.at("head").is_null()) {
    HeadParams h;
    const std::size_t d_y = j.at("head").at("label_dim").get<std::size_t>();
    const auto flat = j.at("head").at("weight").get<std::vector<double>>();
    const std::size_t d_f = c.encoder.layer_sizes.back();
    if (flat.size() != d_y * d_f)
      throw InvalidInputError("load_checkpoint: head weight size mismatch");
    h.weight = Matrix(d_y, d_f);
    std::copy(flat.begin(), flat.end(), h.weight.data());
    h.bias = j.at("head").at("bias").get<std::vector<double>>();
    c.head = std::move(h);
  }
  const auto& ls = j.at("loss_state");
  c.loss_state.log_s = ls.at("log_s").get<double>();
  c.loss_state.ema_lbar = ls.at("ema_lbar").get<double>();
  c.loss_state.ema_initialized = ls.at("ema_initialized").get<bool>();
  c.loss_state.iteration = ls.at("iteration").get<std::uint64_t>();
  const auto& ad = j.at("adam");
  c.adam.config.lr = ad.at("lr").get<double>();
  c.adam.config.beta1 = ad.at("beta1").get<double>();
  c.adam.config.beta2 = ad.at("beta2").get<double>();
  c.adam.config.eps = ad.at("eps").get<double>();
  c.adam.step = ad.at("step").get<std::uint64_t>();
  c.adam.m = ad.at("m").get<std::vector<std::vector<double>>>();
  c.adam.v = ad.at("v").get<std::vector<std::vector<double>>>();
  if (!j.at("tuned_radius").is_null()) c.tuned_radius = j.at("tuned_radius").get<double>();
  c.best_val_mae = j.at("best_val_mae").get<double>();
  c.best_iteration = j.at("best_iteration").get<std::uint64_t>();
  c.train_config = train_config_from_json(j.at("train_config"));
  return c;
}

}  // namespace metreg
