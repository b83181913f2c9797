#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "shotfree/errors.hpp"
#include "shotfree/gradcheck.hpp"
#include "shotfree/ops.hpp"
#include "shotfree/rng.hpp"

using namespace shotfree;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = gaussian(rng);
  return Tensor(shape, std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor I = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor v = Tensor::matrix({{3}, {4}});
  Tensor out = matmul(I, v);
  CHECK(out.at(0, 0) == 3.0);
  CHECK(out.at(1, 0) == 4.0);

  Tensor row = Tensor::matrix({{1, 2}});
  CHECK(matmul(row, v).at(0, 0) == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng = make_rng(1, 0);
  Tensor A = random_tensor({3, 4}, rng);
  Tensor B = random_tensor({4, 2}, rng);
  auto f = [](const std::vector<Tensor>& p) { return sum(matmul(p[0], p[1])); };
  GradCheckReport r = finite_diff_check(f, {A, B}, {"A", "B"});
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("relu basics") {
  Tensor x = Tensor::vector({-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 2.0);

  Tensor neg = Tensor::vector({-3, -0.5, -10});
  Tensor z = relu(neg);
  for (std::size_t i = 0; i < 3; ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("relu gradient is the positive-part mask") {
  Tensor x = Tensor::vector({-1.0, 0.5, 2.0, -0.25});
  auto f = [](const std::vector<Tensor>& p) { return sum(relu(p[0])); };
  GradCheckReport r = finite_diff_check(f, {x}, {"x"});
  CHECK(r.max_rel_err <= 1e-6);

  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  tape.backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("l2_normalize_rows basics") {
  Tensor x = Tensor::matrix({{3, 4}});
  Tensor y = l2_normalize_rows(x);
  CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

  Tensor u = Tensor::matrix({{0.0, 1.0}});
  Tensor yu = l2_normalize_rows(u);
  CHECK(yu.at(0, 0) == 0.0);
  CHECK(yu.at(0, 1) == 1.0);

  CHECK_THROWS_AS(l2_normalize_rows(Tensor::matrix({{0.0, 0.0}})), DegenerateInputError);
}

TEST_CASE("l2_normalize_rows output norms and Jacobian") {
  Rng rng = make_rng(2, 0);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor y = l2_normalize_rows(x);
  for (std::size_t i = 0; i < 5; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 3; ++j) n += y.at(i, j) * y.at(i, j);
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
  }
  Tensor w = random_tensor({5, 3}, rng);
  auto f = [&](const std::vector<Tensor>& p) { return sum(mul(l2_normalize_rows(p[0]), w)); };
  GradCheckReport r = finite_diff_check(f, {x}, {"x"});
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("log_sum_exp values") {
  CHECK(log_sum_exp(Tensor::vector({0, 0})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(log_sum_exp(Tensor::vector({3.25})).item() == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(log_sum_exp(Tensor::vector({1000, 1000})).item() ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(log_sum_exp(Tensor(Shape{0}, {})), ShapeError);
}

TEST_CASE("log_sum_exp shift invariance") {
  Rng rng = make_rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(6);
    for (double& x : v) x = gaussian(rng, 0.0, 3.0);
    const double c = gaussian(rng, 0.0, 50.0);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    const double lhs = log_sum_exp(Tensor::vector(shifted)).item();
    const double rhs = log_sum_exp(Tensor::vector(v)).item() + c;
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("every primitive matches finite differences over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GradCheckReport r = gradcheck_suite(seed);
    CAPTURE(seed);
    REQUIRE(r.ok(1e-4));
  }
}

TEST_CASE("dropout zeros and rescales with a reproducible mask") {
  Tensor x({2, 500}, std::vector<double>(1000, 1.0));
  Rng r1 = make_rng(9, 1);
  Tensor y1 = dropout(x, 0.5, r1);
  Rng r2 = make_rng(9, 1);
  Tensor y2 = dropout(x, 0.5, r2);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    CHECK(y1.at(i) == y2.at(i));  // bitwise reproducible
    if (y1.at(i) == 0.0) {
      ++zeros;
    } else {
      CHECK(y1.at(i) == doctest::Approx(2.0));  // survivors scaled by 1/(1-rate)
    }
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}

TEST_CASE("select_rows accumulates gradient over repeated rows") {
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = select_rows(x, {2, 0, 2});
  tape.backward(sum(y));
  CHECK(x.grad()[0] == 1.0);  // row 0 once
  CHECK(x.grad()[2] == 0.0);  // row 1 never
  CHECK(x.grad()[4] == 2.0);  // row 2 twice
}
