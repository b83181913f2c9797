#include <doctest.h>

#include <cmath>
#include <vector>

#include "shotfree/embedding.hpp"
#include "shotfree/errors.hpp"
#include "shotfree/gradcheck.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/ops.hpp"
#include "shotfree/rng.hpp"
#include "shotfree/tensor.hpp"

using namespace shotfree;

TEST_CASE("tensor shape and values agree") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), ShapeError);
}

TEST_CASE("constructors") {
  CHECK(Tensor::zeros({3}).at(2) == 0.0);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  Tensor v = Tensor::vector({1, 2, 3});
  CHECK(v.size() == 3);
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(m.at(1, 0) == 3.0);
}

TEST_CASE("backward: sum gives ones") {
  Tensor x = Tensor::vector({1.0, -2.0, 3.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("backward: squared norm gives 2x") {
  Tensor x = Tensor::vector({1.5, -0.5, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.at(i)));
}

TEST_CASE("backward accumulates across calls") {
  Tensor x = Tensor::vector({2.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(8.0));  // 2 * (2x)
  x.zero_grad();
  Tape tape2;
  Tensor loss2 = sum(mul(x, x));
  tape2.backward(loss2);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("operations guard against non-finite results") {
  Tensor x = Tensor::vector({-1.0});
  CHECK_THROWS_AS(log(x), NumericError);
}

TEST_CASE("tape replay is deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng = make_rng(seed, 5);
    std::vector<double> vals(12);
    for (double& v : vals) v = gaussian(rng);
    Tensor x(Shape{3, 4}, std::vector<double>(vals));
    Tensor w({2, 4}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8});
    w.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(relu(linear(x, w, Tensor())));
    tape.backward(loss);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto a = run(42), b = run(42);
  CHECK(a == b);  // bitwise identical
}

TEST_CASE("finite_diff_check: x squared") {
  auto f = [](const std::vector<Tensor>& p) { return sum(mul(p[0], p[1])); };
  // f(x) = x^2 via x*x
  auto g = [](const std::vector<Tensor>& p) { return sum(mul(p[0], p[0])); };
  (void)f;
  GradCheckReport r = finite_diff_check(g, {Tensor::vector({3.0})}, {"x"});
  CHECK(r.max_rel_err <= 1e-8);
}

TEST_CASE("finite_diff_check: log-sum-exp of 5 random values") {
  Rng rng = make_rng(7, 1);
  std::vector<double> v(5);
  for (double& x : v) x = gaussian(rng);
  auto f = [](const std::vector<Tensor>& p) { return log_sum_exp(p[0]); };
  GradCheckReport r = finite_diff_check(f, {Tensor::vector(v)}, {"v"});
  CHECK(r.max_rel_err <= 1e-7);
}

TEST_CASE("finite_diff_check: episode loss on a 2-way 2-sample toy") {
  const std::size_t d = 2, mu = 4;
  EmbeddingParams emb = init_embedding({3, 5, d}, 11, 0.0);
  Rng rng = make_rng(3, 2);
  std::vector<double> xv(4 * 3);
  for (double& x : xv) x = gaussian(rng);
  Tensor x({4, 3}, std::move(xv));
  std::vector<double> pv(2 * mu);
  for (double& p : pv) p = gaussian(rng);
  Tensor protos = l2_normalize_rows(Tensor({2, mu}, std::move(pv)));
  std::vector<double> wv(mu * d);
  for (double& w : wv) w = gaussian(rng, 0.0, 0.5);
  Tensor W({mu, d}, std::move(wv));
  const std::vector<std::size_t> pos = {0, 0, 1, 1};

  std::vector<Tensor> params = emb.trainable();
  params.push_back(W);
  params.push_back(protos);
  std::vector<std::string> names(params.size());
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = "p" + std::to_string(i);

  EmbeddingParams shared = emb;
  auto f = [&, shared](const std::vector<Tensor>& p) {
    Rng r2 = make_rng(0, 0);
    Tensor z = embed(shared, x, EmbedMode::kTrain, r2);
    MetricMap map{p[p.size() - 2], mu, d};
    return episode_loss_graph(z, pos, p.back(), map, shared.scale_s, 1.0);
  };
  GradCheckReport r = finite_diff_check(f, params, names);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("finite_diff_check rejects a nondeterministic objective") {
  int calls = 0;
  auto f = [&calls](const std::vector<Tensor>& p) {
    ++calls;
    return scale(sum(p[0]), 1.0 + 0.5 * calls);
  };
  CHECK_THROWS_AS(finite_diff_check(f, {Tensor::vector({1.0})}, {"x"}), OracleError);
}
