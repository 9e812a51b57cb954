#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "metreg/checkpoint.hpp"
#include "metreg/dataset.hpp"
#include "metreg/trainer.hpp"

using metreg::Dataset;
using metreg::DatasetKind;
using metreg::Matrix;
using metreg::TrainConfig;
using metreg::TrainMode;

namespace {

Dataset demo_dataset(std::size_t n, std::size_t d_x, double noise, std::uint64_t seed) {
  Dataset ds = metreg::generate(DatasetKind::curve1d, n, d_x, noise, seed);
  metreg::apply_normalization(ds, {});
  metreg::assign_splits(ds, {0.7, 0.1, 0.2}, metreg::derive_seed(seed, 99));
  return ds;
}

bool logs_equal(const std::vector<metreg::TrainLogRecord>& a,
                const std::vector<metreg::TrainLogRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iteration != b[i].iteration || a[i].loss != b[i].loss) return false;
    if (a[i].lbar != b[i].lbar || a[i].scale_s != b[i].scale_s) return false;
    if (a[i].selected_fraction != b[i].selected_fraction) return false;
    if (a[i].val_mae != b[i].val_mae || a[i].tuned_radius != b[i].tuned_radius)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config invariants are enforced") {
  const Dataset ds = demo_dataset(30, 3, 0.0, 1);
  TrainConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(metreg::train(ds, cfg), metreg::InvalidInputError);
  cfg.iterations = 10;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(metreg::train(ds, cfg), metreg::InvalidInputError);

  Dataset no_val = ds;
  for (auto& tag : no_val.split)
    if (tag == metreg::SplitTag::val) tag = metreg::SplitTag::train;
  cfg.batch_size = 8;
  CHECK_THROWS_AS(metreg::train(no_val, cfg), metreg::InvalidInputError);
}

TEST_CASE("rm training on a clean curve drives the loss far down") {
  const Dataset ds = demo_dataset(500, 5, 0.0, 11);
  TrainConfig cfg;
  cfg.mode = TrainMode::rm;
  cfg.iterations = 3000;
  cfg.batch_size = 64;
  cfg.eval_every = 500;
  cfg.seed = 4;
  cfg.arch.hidden = {64, 64};
  cfg.arch.embed_dim = 2;

  const auto res = metreg::train(ds, cfg);
  const double first = res.log.front().loss;
  const double last = res.log.back().loss;
  CHECK(last < 0.05 * first);

  // the scale parameter never leaves the positive axis
  for (const auto& rec : res.log) {
    REQUIRE(rec.scale_s.has_value());
    CHECK(*rec.scale_s > 0.0);
    REQUIRE(rec.selected_fraction.has_value());
    CHECK(*rec.selected_fraction >= 0.0);
    CHECK(*rec.selected_fraction <= 1.0);
  }
  CHECK(res.tuned_radius.has_value());
  CHECK(*res.tuned_radius > 0.0);

  // best model selection picks the smallest recorded validation MAE
  double best = 1e300;
  for (const auto& rec : res.log)
    if (rec.val_mae) best = std::min(best, *rec.val_mae);
  CHECK(res.best_val_mae == best);
}

TEST_CASE("identical seeds reproduce the training log bitwise") {
  const Dataset ds = demo_dataset(60, 4, 0.01, 21);
  TrainConfig cfg;
  cfg.mode = TrainMode::rm;
  cfg.iterations = 40;
  cfg.batch_size = 16;
  cfg.eval_every = 10;
  cfg.seed = 5;
  cfg.arch.hidden = {16};
  cfg.arch.embed_dim = 3;

  const auto a = metreg::train(ds, cfg);
  const auto b = metreg::train(ds, cfg);
  CHECK(logs_equal(a.log, b.log));
  CHECK(a.encoder.weights[0] == b.encoder.weights[0]);
  CHECK(a.loss_state.log_s == b.loss_state.log_s);

  cfg.seed = 6;
  const auto c = metreg::train(ds, cfg);
  CHECK_FALSE(logs_equal(a.log, c.log));
}

TEST_CASE("baseline modes train the encoder with a head") {
  const Dataset ds = demo_dataset(80, 4, 0.01, 31);
  for (auto mode : {TrainMode::mse, TrainMode::l1}) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.iterations = 300;
    cfg.batch_size = 16;
    cfg.eval_every = 100;
    cfg.seed = 7;
    cfg.lr = 1e-3;
    cfg.arch.hidden = {16};
    cfg.arch.embed_dim = 3;
    const auto res = metreg::train(ds, cfg);
    REQUIRE(res.head.has_value());
    CHECK(res.log.back().loss < res.log.front().loss);
    CHECK_FALSE(res.log.back().lbar.has_value());
    CHECK_FALSE(res.tuned_radius.has_value());
  }
}

TEST_CASE("embed matches the forward pass and zero parameters embed to zero") {
  const auto params = metreg::init_encoder({4, 8, 2}, metreg::Activation::tanh, 3);
  Matrix x(6, 4);
  metreg::Rng rng(12);
  for (double& v : x.flat()) v = rng.uniform(-1, 1);
  CHECK(metreg::embed(params, x) == metreg::encoder_forward(params, x));

  auto zero = params;
  for (auto& w : zero.weights)
    for (double& v : w.flat()) v = 0.0;
  const Matrix embedded = metreg::embed(zero, x);
  for (double v : embedded.flat()) CHECK(v == 0.0);
}

TEST_CASE("checkpoints round-trip bitwise and reproduce embeddings") {
  const Dataset ds = demo_dataset(60, 4, 0.01, 41);
  TrainConfig cfg;
  cfg.mode = TrainMode::rm;
  cfg.iterations = 30;
  cfg.batch_size = 16;
  cfg.eval_every = 10;
  cfg.seed = 9;
  cfg.arch.hidden = {12};
  cfg.arch.embed_dim = 3;
  const auto res = metreg::train(ds, cfg);

  const auto dir = std::filesystem::temp_directory_path() / "metreg_trainer_tests";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ckpt.json";
  metreg::save_checkpoint(metreg::checkpoint_from_result(res), path);
  const auto back = metreg::load_checkpoint(path);

  for (std::size_t l = 0; l < res.encoder.layer_count(); ++l) {
    CHECK(back.encoder.weights[l] == res.encoder.weights[l]);
    CHECK(back.encoder.biases[l] == res.encoder.biases[l]);
  }
  CHECK(back.loss_state.log_s == res.loss_state.log_s);
  CHECK(back.loss_state.ema_lbar == res.loss_state.ema_lbar);
  CHECK(back.adam.step == res.adam.step);
  CHECK(back.adam.m == res.adam.m);
  CHECK(back.adam.v == res.adam.v);
  CHECK(back.tuned_radius == res.tuned_radius);

  const Matrix x = ds.gather_features(ds.indices_of(metreg::SplitTag::test));
  CHECK(metreg::embed(back.encoder, x) == metreg::embed(res.encoder, x));
}

TEST_CASE("smoke property: repeated fixed batch descends without mining") {
  // train split of exactly one batch so every iteration sees the same data
  int monotone = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Dataset ds = metreg::generate(DatasetKind::curve1d, 20, 3, 0.0,
                                  1000 + static_cast<std::uint64_t>(trial));
    metreg::apply_normalization(ds, {});
    // 16 train, 2 val, 2 test
    metreg::assign_splits(ds, {0.8, 0.1, 0.1}, 3);

    TrainConfig cfg;
    cfg.mode = TrainMode::rm;
    cfg.loss.mining_enabled = false;
    cfg.iterations = 100;
    cfg.batch_size = 16;
    cfg.eval_every = 100;
    cfg.seed = static_cast<std::uint64_t>(trial);
    cfg.arch.hidden = {16, 16};
    cfg.arch.embed_dim = 2;

    const auto res = metreg::train(ds, cfg);
    bool ok = true;
    for (std::size_t i = 1; i < res.log.size(); ++i)
      if (res.log[i].loss > res.log[i - 1].loss + 1e-12) ok = false;
    if (ok) ++monotone;
  }
  CHECK(monotone >= 19);
}

TEST_CASE("a collapsed weight function aborts with a diagnosable record") {
  // alpha = 0 with a microscopic sigma underflows every pair weight, which
  // turns the unmasked fallback into 0/0 on the very first batch
  const Dataset ds = demo_dataset(40, 3, 0.0, 51);
  TrainConfig cfg;
  cfg.mode = TrainMode::rm;
  cfg.iterations = 10;
  cfg.batch_size = 16;
  cfg.seed = 2;
  cfg.loss.sigma = 1e-4;
  cfg.loss.alpha = 0.0;
  try {
    metreg::train(ds, cfg);
    FAIL("expected TrainAbortError");
  } catch (const metreg::TrainAbortError& e) {
    CHECK(e.iteration() == 1);
    CHECK(e.batch_indices().size() == 16);
  }
}
