#include <doctest.h>

#include <cmath>
#include <vector>

#include "shotfree/losses.hpp"
#include "shotfree/training.hpp"

using namespace shotfree;

namespace {

SplitDataset toy_data(std::uint64_t seed, double spread = 0.05) {
  return gen_synthetic(/*num_classes=*/20, /*dim=*/8, /*samples_per_class=*/12, spread, seed);
}

TrainConfig toy_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.ways = 5;
  cfg.per_class = 12;
  cfg.episodes_per_iteration = 4;
  cfg.max_iterations = 300;
  cfg.validation_interval = 50;
  cfg.val_episodes = 60;
  cfg.val_queries = 8;
  cfg.hidden_sizes = {32};
  cfg.embed_dim = 4;
  // At this width a dropout mask kills a whole embedding row about once per
  // 10^4 samples, which the chi normalizer rejects by contract; the toy runs
  // train without dropout so they exercise the optimizer, not that guard.
  cfg.dropout_rate = 0.0;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("meta-training separates an easy synthetic task") {
  SplitDataset ds = toy_data(3);
  TrainConfig cfg = toy_config(3);
  TrainResult result = meta_train(ds, cfg);
  CHECK(result.best.validation_score > 0.9);
  CHECK(result.best.model_kind == "shotfree");
  CHECK(result.final_state.iteration == cfg.max_iterations);

  // the log carries one row per iteration with the lr actually used
  REQUIRE(result.log.rows.size() == cfg.max_iterations);
  CHECK(result.log.rows.front().lr == cfg.resolved_lr());
  std::size_t val_rows = 0;
  for (const TrainLogRow& row : result.log.rows) {
    CHECK(row.loss == doctest::Approx(row.cross_entropy + cfg.lambda * row.entropy).epsilon(1e-12));
    val_rows += !std::isnan(row.validation_accuracy);
  }
  CHECK(val_rows >= cfg.max_iterations / cfg.validation_interval);
}

TEST_CASE("the entropy term keeps training away from the degenerate optimum") {
  SplitDataset ds = toy_data(5);
  TrainConfig cfg = toy_config(5);
  cfg.max_iterations = 200;
  TrainResult result = meta_train(ds, cfg);
  const double ceiling = 0.9 * std::log(static_cast<double>(cfg.ways));
  for (std::size_t i = result.log.rows.size() / 2; i < result.log.rows.size(); ++i) {
    CHECK(result.log.rows[i].entropy < ceiling);
  }
}

TEST_CASE("training is bitwise deterministic in the config seed") {
  SplitDataset ds = toy_data(11);
  TrainConfig cfg = toy_config(11);
  cfg.max_iterations = 40;
  cfg.validation_interval = 20;
  TrainResult a = meta_train(ds, cfg);
  TrainResult b = meta_train(ds, cfg);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    CHECK(a.log.rows[i].loss == b.log.rows[i].loss);
    CHECK(a.log.rows[i].cross_entropy == b.log.rows[i].cross_entropy);
    CHECK(a.log.rows[i].entropy == b.log.rows[i].entropy);
    CHECK(a.log.rows[i].lr == b.log.rows[i].lr);
    const bool na = std::isnan(a.log.rows[i].validation_accuracy);
    const bool nb = std::isnan(b.log.rows[i].validation_accuracy);
    CHECK(na == nb);
    if (!na) CHECK(a.log.rows[i].validation_accuracy == b.log.rows[i].validation_accuracy);
  }
  for (std::size_t i = 0; i < a.final_state.map.W.size(); ++i) {
    CHECK(a.final_state.map.W.values()[i] == b.final_state.map.W.values()[i]);
  }
}

TEST_CASE("prototypes of classes outside the iteration's episodes never move") {
  SplitDataset ds = toy_data(7);
  TrainConfig cfg = toy_config(7);
  cfg.ways = 2;
  cfg.episodes_per_iteration = 1;
  cfg.validation_interval = 1000;  // no validation interference

  cfg.max_iterations = 0;  // init state only
  TrainResult before = meta_train(ds, cfg);
  cfg.max_iterations = 1;
  TrainResult after = meta_train(ds, cfg);

  const Tensor& p0 = before.final_state.prototypes.vectors;
  const Tensor& p1 = after.final_state.prototypes.vectors;
  REQUIRE(p0.rows() == p1.rows());
  std::size_t changed = 0;
  for (std::size_t r = 0; r < p0.rows(); ++r) {
    bool moved = false;
    for (std::size_t c = 0; c < p0.cols(); ++c) moved |= p0.at(r, c) != p1.at(r, c);
    changed += moved;
    if (!moved) {
      for (std::size_t c = 0; c < p0.cols(); ++c) CHECK(p0.at(r, c) == p1.at(r, c));
    }
  }
  // one 2-way episode touches exactly two classes
  CHECK(changed == 2);
}

TEST_CASE("prototype rows stay on the sphere throughout training") {
  SplitDataset ds = toy_data(13);
  TrainConfig cfg = toy_config(13);
  cfg.max_iterations = 60;
  TrainResult result = meta_train(ds, cfg);
  for (const Checkpoint* ckpt : {&result.best, &result.final_state}) {
    const Tensor& v = ckpt->prototypes.vectors;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      double n = 0.0;
      for (std::size_t c = 0; c < v.cols(); ++c) n += v.at(r, c) * v.at(r, c);
      CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("the averaged multi-episode gradient is the average of episode gradients") {
  // two episodes over shared parameters, differentiated two ways
  const std::size_t d = 3, mu = 6, k = 2, n = 4;
  Rng rng = make_rng(17);
  auto gauss_rows = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = gaussian(rng);
    return Tensor(Shape{r, c}, std::move(v));
  };
  Tensor W = gauss_rows(mu, d);
  W.set_requires_grad(true);
  Tensor protos = l2_normalize_rows(gauss_rows(k, mu));
  Tensor pr(Shape{k, mu}, std::vector<double>(protos.values().begin(), protos.values().end()),
            true);
  Tensor s = Tensor::scalar(3.0, true);
  Tensor z1 = l2_normalize_rows(gauss_rows(n, d));
  Tensor z2 = l2_normalize_rows(gauss_rows(n, d));
  Tensor z1v(Shape{n, d}, std::vector<double>(z1.values().begin(), z1.values().end()));
  Tensor z2v(Shape{n, d}, std::vector<double>(z2.values().begin(), z2.values().end()));
  const std::vector<std::size_t> pos = {0, 1, 0, 1};
  MetricMap map{W, mu, d};

  // joint pass on the mean of the two episode losses
  std::vector<double> joint_w, joint_p, joint_s;
  {
    Tape tape;
    Tensor l1 = episode_loss_graph(z1v, pos, pr, map, s, 1.0);
    Tensor l2 = episode_loss_graph(z2v, pos, pr, map, s, 1.0);
    Tensor avg = scale(add(l1, l2), 0.5);
    tape.backward(avg);
    joint_w.assign(W.grad().begin(), W.grad().end());
    joint_p.assign(pr.grad().begin(), pr.grad().end());
    joint_s.assign(s.grad().begin(), s.grad().end());
  }

  // separate passes, averaged by hand
  W.zero_grad();
  pr.zero_grad();
  s.zero_grad();
  std::vector<double> sep_w(joint_w.size(), 0.0), sep_p(joint_p.size(), 0.0), sep_s(1, 0.0);
  for (const Tensor* z : {&z1v, &z2v}) {
    W.zero_grad();
    pr.zero_grad();
    s.zero_grad();
    Tape tape;
    Tensor l = episode_loss_graph(*z, pos, pr, map, s, 1.0);
    tape.backward(l);
    for (std::size_t i = 0; i < sep_w.size(); ++i) sep_w[i] += 0.5 * W.grad()[i];
    for (std::size_t i = 0; i < sep_p.size(); ++i) sep_p[i] += 0.5 * pr.grad()[i];
    sep_s[0] += 0.5 * s.grad()[0];
  }
  for (std::size_t i = 0; i < joint_w.size(); ++i) {
    CHECK(std::abs(joint_w[i] - sep_w[i]) <= 1e-10);
  }
  for (std::size_t i = 0; i < joint_p.size(); ++i) {
    CHECK(std::abs(joint_p[i] - sep_p[i]) <= 1e-10);
  }
  CHECK(std::abs(joint_s[0] - sep_s[0]) <= 1e-10);
}

TEST_CASE("training loss trends downward on separable data") {
  std::size_t downward = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SplitDataset ds = toy_data(100 + seed);
    TrainConfig cfg = toy_config(100 + seed);
    cfg.max_iterations = 50;
    cfg.validation_interval = 1000;
    TrainResult result = meta_train(ds, cfg);
    // least-squares slope of loss against iteration
    const std::size_t n = result.log.rows.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i), y = result.log.rows[i].loss;
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double slope = (static_cast<double>(n) * sxy - sx * sy) /
                         (static_cast<double>(n) * sxx - sx * sx);
    downward += slope < 0.0;
  }
  CHECK(downward >= 9);
}

TEST_CASE("divergence aborts loudly instead of training on garbage") {
  SplitDataset ds = toy_data(19);
  TrainConfig cfg = toy_config(19);
  cfg.optimizer = OptimizerRecipe::kSgd;
  cfg.initial_lr = 1e8;
  cfg.max_iterations = 30;
  cfg.validation_interval = 1000;
  CHECK_THROWS_AS(meta_train(ds, cfg), Error);
}

TEST_CASE("sgd recipe runs end to end") {
  SplitDataset ds = toy_data(23);
  TrainConfig cfg = toy_config(23);
  cfg.optimizer = OptimizerRecipe::kSgd;
  cfg.max_iterations = 60;
  cfg.validation_interval = 30;
  TrainResult result = meta_train(ds, cfg);
  CHECK(result.log.rows.size() == 60);
  CHECK(result.best.validation_score > 0.5);  // well above 3-way chance
  CHECK(result.log.rows.front().lr == cfg.resolved_lr());
}

TEST_CASE("an all-dropped embedding row aborts training as degenerate") {
  // dropout acts on the normalized output, so a tiny embedding dimension with
  // heavy dropout zeroes whole rows often; the metric map must refuse them
  // rather than normalize garbage
  SplitDataset ds = toy_data(31);
  TrainConfig cfg = toy_config(31);
  cfg.embed_dim = 2;
  cfg.dropout_rate = 0.5;
  cfg.max_iterations = 50;
  cfg.validation_interval = 1000;
  CHECK_THROWS_AS(meta_train(ds, cfg), DegenerateInputError);
}

TEST_CASE("clone_checkpoint detaches tensor storage") {
  SplitDataset ds = toy_data(29);
  TrainConfig cfg = toy_config(29);
  cfg.max_iterations = 2;
  cfg.validation_interval = 1;
  TrainResult result = meta_train(ds, cfg);
  Checkpoint copy = clone_checkpoint(result.final_state);
  const double before = copy.map.W.at(0, 0);
  result.final_state.map.W.values_mut()[0] = before + 1.0;
  CHECK(copy.map.W.at(0, 0) == before);
  CHECK(result.final_state.map.W.at(0, 0) == before + 1.0);
}
