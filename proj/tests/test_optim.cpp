#include <doctest.h>

#include <cmath>
#include <vector>

#include "shotfree/optim.hpp"

using namespace shotfree;

namespace {

Tensor param(std::vector<double> v) {
  Tensor t = Tensor::vector(std::move(v), true);
  t.zero_grad();
  return t;
}

void set_grad(const Tensor& t, const std::vector<double>& g) {
  t.zero_grad();
  t.accumulate_grad(std::span<const double>(g.data(), g.size()));
}

}  // namespace

TEST_CASE("plain sgd takes the textbook step on a quadratic") {
  // f(x) = x^2/2, grad = x; lr 0.1 from x=1 lands at 0.9
  std::vector<Tensor> params = {param({1.0})};
  set_grad(params[0], {1.0});
  SgdState state;
  SgdHyper hyper;
  hyper.lr = 0.1;
  hyper.momentum = 0.0;
  hyper.weight_decay = 0.0;
  hyper.nesterov = false;
  sgd_nesterov_step(params, state, hyper);
  CHECK(params[0].at(0) == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("adam's first step has magnitude near lr for any gradient scale") {
  AdamHyper hyper;
  hyper.lr = 1e-3;
  for (double g : {1e-6, 1.0, 1e6}) {
    std::vector<Tensor> params = {param({0.0})};
    set_grad(params[0], {g});
    AdamState state;
    state.ensure(params);
    adam_step(params, state, hyper);
    CHECK(std::abs(params[0].at(0)) == doctest::Approx(hyper.lr).epsilon(0.02));
    CHECK(params[0].at(0) < 0.0);  // moves against the gradient
  }
}

TEST_CASE("weight decay shrinks a zero-gradient parameter geometrically") {
  std::vector<Tensor> params = {param({2.0})};
  SgdState state;
  SgdHyper hyper;
  hyper.lr = 0.1;
  hyper.momentum = 0.0;
  hyper.weight_decay = 5e-4;
  hyper.nesterov = false;
  double expect = 2.0;
  for (int step = 0; step < 5; ++step) {
    set_grad(params[0], {0.0});
    sgd_nesterov_step(params, state, hyper);
    expect *= 1.0 - hyper.lr * hyper.weight_decay;
    CHECK(params[0].at(0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("nesterov momentum accelerates along a constant gradient") {
  std::vector<Tensor> params = {param({0.0})};
  SgdState state;
  SgdHyper hyper;
  hyper.lr = 0.1;
  hyper.momentum = 0.9;
  hyper.weight_decay = 0.0;
  hyper.nesterov = true;
  // v1 = g; step1 = lr*(g + mu*v1) = 0.1*1.9
  set_grad(params[0], {1.0});
  sgd_nesterov_step(params, state, hyper);
  CHECK(params[0].at(0) == doctest::Approx(-0.19).epsilon(1e-12));
  // v2 = mu*v1 + g = 1.9; step2 = lr*(g + mu*v2) = 0.1*2.71
  set_grad(params[0], {1.0});
  sgd_nesterov_step(params, state, hyper);
  CHECK(params[0].at(0) == doctest::Approx(-0.19 - 0.271).epsilon(1e-12));
}

TEST_CASE("params without a gradient this step stay untouched") {
  std::vector<Tensor> params = {param({1.0}), Tensor::vector({3.0}, true)};
  set_grad(params[0], {1.0});
  // params[1] never had a grad buffer allocated
  AdamState state;
  state.ensure(params);
  AdamHyper hyper;
  adam_step(params, state, hyper);
  CHECK(params[0].at(0) != 1.0);
  CHECK(params[1].at(0) == 3.0);
}

TEST_CASE("row-wise steps advance only the listed rows") {
  Tensor table = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}, true);
  table.zero_grad();
  std::vector<double> g(6, 1.0);
  table.accumulate_grad(std::span<const double>(g.data(), g.size()));

  SUBCASE("adam rows") {
    std::vector<std::vector<double>> m, v;
    std::vector<std::uint64_t> t;
    AdamHyper hyper;
    adam_step_rows(table, {0, 2}, m, v, t, hyper);
    CHECK(table.at(0, 0) != 1.0);
    CHECK(table.at(1, 0) == 3.0);
    CHECK(table.at(1, 1) == 4.0);
    CHECK(table.at(2, 0) != 5.0);
  }

  SUBCASE("sgd rows") {
    std::vector<std::vector<double>> velocity;
    SgdHyper hyper;
    sgd_step_rows(table, {1}, velocity, hyper);
    CHECK(table.at(0, 0) == 1.0);
    CHECK(table.at(1, 0) != 3.0);
    CHECK(table.at(2, 1) == 6.0);
  }
}

TEST_CASE("adam recipe halves the rate on the decay period") {
  LrScheduleConfig cfg;
  cfg.recipe = OptimizerRecipe::kAdam;
  cfg.initial_lr = 1e-3;
  cfg.decay_every = 2000;
  CHECK(lr_schedule(cfg, 0) == 1e-3);
  CHECK(lr_schedule(cfg, 1999) == 1e-3);
  CHECK(lr_schedule(cfg, 2000) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 3999) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 4000) == doctest::Approx(2.5e-4).epsilon(1e-15));
}

TEST_CASE("sgd recipe halves once per flat validation window") {
  LrScheduleConfig cfg;
  cfg.recipe = OptimizerRecipe::kSgd;
  cfg.initial_lr = 0.1;
  cfg.patience = 1000;
  std::vector<std::pair<std::size_t, double>> hist = {
      {0, 0.50}, {500, 0.60}, {1500, 0.60}, {2000, 0.60}, {2500, 0.60}};
  CHECK(lr_schedule(cfg, 0, hist) == 0.1);
  CHECK(lr_schedule(cfg, 1400, hist) == 0.1);            // within patience of the best
  CHECK(lr_schedule(cfg, 1500, hist) == doctest::Approx(0.05));   // 1000 flat iterations
  CHECK(lr_schedule(cfg, 2400, hist) == doctest::Approx(0.05));   // window restarts at 1500
  CHECK(lr_schedule(cfg, 2500, hist) == doctest::Approx(0.025));  // second flat window

  // an improvement resets the window instead
  std::vector<std::pair<std::size_t, double>> improving = {
      {0, 0.50}, {900, 0.55}, {1800, 0.60}, {2700, 0.65}};
  CHECK(lr_schedule(cfg, 2700, improving) == 0.1);
}

TEST_CASE("iteration zero always sees the initial rate") {
  for (OptimizerRecipe r : {OptimizerRecipe::kAdam, OptimizerRecipe::kSgd}) {
    LrScheduleConfig cfg;
    cfg.recipe = r;
    cfg.initial_lr = 0.25;
    CHECK(lr_schedule(cfg, 0) == 0.25);
  }
}

TEST_CASE("recipe names round trip") {
  CHECK(parse_recipe("adam") == OptimizerRecipe::kAdam);
  CHECK(parse_recipe("sgd") == OptimizerRecipe::kSgd);
  CHECK(std::string(recipe_name(OptimizerRecipe::kAdam)) == "adam");
  CHECK(std::string(recipe_name(OptimizerRecipe::kSgd)) == "sgd");
  CHECK_THROWS_AS(parse_recipe("adamw"), ConfigError);
}
