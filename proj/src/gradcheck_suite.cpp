#include <cmath>
#include <string>
#include <vector>

#include "shotfree/class_model.hpp"
#include "shotfree/embedding.hpp"
#include "shotfree/gradcheck.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/ops.hpp"
#include "shotfree/rng.hpp"

namespace shotfree {

namespace {

Tensor gauss_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = gaussian(rng, 0.0, stddev);
  return Tensor(shape, std::move(v));
}

// Keeps relu/abs-style kinks out of the finite-difference window.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = gauss_tensor(shape, rng);
  auto v = t.values_mut();
  for (double& x : v) {
    if (std::abs(x) < 0.05) x = (x < 0.0 ? -0.1 : 0.1) + x;
  }
  return t;
}

Tensor positive_tensor(const Shape& shape, Rng& rng) {
  Tensor t = gauss_tensor(shape, rng);
  auto v = t.values_mut();
  for (double& x : v) x = std::abs(x) + 0.5;
  return t;
}

struct SuiteRunner {
  std::uint64_t seed;
  double h;
  GradCheckReport report;

  void run(const std::string& op_name, const std::function<Tensor(const std::vector<Tensor>&)>& f,
           std::vector<Tensor> params, const std::vector<std::string>& names) {
    GradCheckReport r = finite_diff_check(f, std::move(params), names, h);
    for (GradCheckEntry& e : r.entries) {
      e.name = op_name + "/" + e.name;
      report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
      report.entries.push_back(std::move(e));
    }
  }
};

}  // namespace

GradCheckReport gradcheck_suite(std::uint64_t seed, double h) {
  SuiteRunner s{seed, h, {}};
  Rng rng = make_rng(seed, 7001);

  {
    Tensor a = gauss_tensor({2, 3}, rng), b = gauss_tensor({2, 3}, rng);
    Tensor w = gauss_tensor({2, 3}, rng);
    s.run("add", [&](const std::vector<Tensor>& p) { return sum(mul(add(p[0], p[1]), w)); },
          {a, b}, {"a", "b"});
    s.run("sub", [&](const std::vector<Tensor>& p) { return sum(mul(sub(p[0], p[1]), w)); },
          {a, b}, {"a", "b"});
    s.run("mul", [&](const std::vector<Tensor>& p) { return sum(mul(mul(p[0], p[1]), w)); },
          {a, b}, {"a", "b"});
    s.run("scale", [&](const std::vector<Tensor>& p) { return sum(mul(scale(p[0], 1.7), w)); },
          {a}, {"x"});
    s.run("add_const",
          [&](const std::vector<Tensor>& p) { return sum(mul(add_const(p[0], 0.3), w)); }, {a},
          {"x"});
    s.run("neg", [&](const std::vector<Tensor>& p) { return sum(mul(neg(p[0]), w)); }, {a}, {"x"});
    Tensor sc = Tensor::scalar(1.3);
    s.run("mul_scalar",
          [&](const std::vector<Tensor>& p) { return sum(mul(mul_scalar(p[0], p[1]), w)); },
          {a, sc}, {"x", "s"});
  }
  {
    Tensor A = gauss_tensor({2, 3}, rng), B = gauss_tensor({3, 4}, rng);
    Tensor w = gauss_tensor({2, 4}, rng);
    s.run("matmul", [&](const std::vector<Tensor>& p) { return sum(mul(matmul(p[0], p[1]), w)); },
          {A, B}, {"a", "b"});
    Tensor wt = gauss_tensor({3, 2}, rng);
    s.run("transpose",
          [&](const std::vector<Tensor>& p) { return sum(mul(transpose(p[0]), wt)); }, {A}, {"x"});
  }
  {
    Tensor x = gauss_tensor({4, 3}, rng), W = gauss_tensor({2, 3}, rng), b = gauss_tensor({2}, rng);
    Tensor w = gauss_tensor({4, 2}, rng);
    s.run("linear",
          [&](const std::vector<Tensor>& p) { return sum(mul(linear(p[0], p[1], p[2]), w)); },
          {x, W, b}, {"x", "weight", "bias"});
    s.run("linear_nobias",
          [&](const std::vector<Tensor>& p) { return sum(mul(linear(p[0], p[1], Tensor()), w)); },
          {x, W}, {"x", "weight"});
  }
  {
    Tensor w = gauss_tensor({3, 4}, rng);
    Tensor xr = away_from_zero({3, 4}, rng);
    s.run("relu", [&](const std::vector<Tensor>& p) { return sum(mul(relu(p[0]), w)); }, {xr},
          {"x"});
    Tensor xe = gauss_tensor({3, 4}, rng, 0.5);
    s.run("exp", [&](const std::vector<Tensor>& p) { return sum(mul(exp(p[0]), w)); }, {xe},
          {"x"});
    Tensor xl = positive_tensor({3, 4}, rng);
    s.run("log", [&](const std::vector<Tensor>& p) { return sum(mul(log(p[0]), w)); }, {xl},
          {"x"});
  }
  {
    Tensor x = gauss_tensor({3, 4}, rng);
    s.run("sum", [&](const std::vector<Tensor>& p) { return scale(sum(p[0]), 1.9); }, {x}, {"x"});
    s.run("mean", [&](const std::vector<Tensor>& p) { return scale(mean(p[0]), -0.7); }, {x},
          {"x"});
    Tensor wc = gauss_tensor({3, 1}, rng);
    s.run("sum_rows", [&](const std::vector<Tensor>& p) { return sum(mul(sum_rows(p[0]), wc)); },
          {x}, {"x"});
  }
  {
    Tensor x = gauss_tensor({3, 4}, rng);
    Tensor r = gauss_tensor({4}, rng);
    Tensor c = gauss_tensor({3, 1}, rng);
    Tensor w = gauss_tensor({3, 4}, rng);
    s.run("add_rowvec",
          [&](const std::vector<Tensor>& p) { return sum(mul(add_rowvec(p[0], p[1]), w)); },
          {x, r}, {"x", "row"});
    s.run("add_colvec",
          [&](const std::vector<Tensor>& p) { return sum(mul(add_colvec(p[0], p[1]), w)); },
          {x, c}, {"x", "col"});
    s.run("sub_colvec",
          [&](const std::vector<Tensor>& p) { return sum(mul(sub_colvec(p[0], p[1]), w)); },
          {x, c}, {"x", "col"});
  }
  {
    Tensor x = gauss_tensor({3, 4}, rng);
    Tensor w = gauss_tensor({3, 4}, rng);
    s.run("l2_normalize_rows",
          [&](const std::vector<Tensor>& p) { return sum(mul(l2_normalize_rows(p[0]), w)); }, {x},
          {"x"});
    Tensor wc = gauss_tensor({3, 1}, rng);
    s.run("log_sum_exp_rows",
          [&](const std::vector<Tensor>& p) { return sum(mul(log_sum_exp_rows(p[0]), wc)); }, {x},
          {"x"});
    Tensor v = gauss_tensor({7}, rng);
    s.run("log_sum_exp", [&](const std::vector<Tensor>& p) { return log_sum_exp(p[0]); }, {v},
          {"v"});
  }
  {
    Tensor x = gauss_tensor({5, 4}, rng);
    const std::vector<std::size_t> idx = {3, 0, 3, 1, 2};  // one column per row
    Tensor wg = gauss_tensor({5, 1}, rng);
    s.run("gather_rows",
          [&](const std::vector<Tensor>& p) { return sum(mul(gather_rows(p[0], idx), wg)); }, {x},
          {"x"});
    const std::vector<std::size_t> sel = {4, 1, 4, 0};
    Tensor ws = gauss_tensor({4, 4}, rng);
    s.run("select_rows",
          [&](const std::vector<Tensor>& p) { return sum(mul(select_rows(p[0], sel), ws)); }, {x},
          {"x"});
  }
  {
    Tensor a = gauss_tensor({2, 3}, rng), b = gauss_tensor({1, 3}, rng),
           c = gauss_tensor({3, 3}, rng);
    Tensor w = gauss_tensor({6, 3}, rng);
    s.run("concat_rows",
          [&](const std::vector<Tensor>& p) {
            return sum(mul(concat_rows({p[0], p[1], p[2]}), w));
          },
          {a, b, c}, {"a", "b", "c"});
  }
  {
    Tensor x = gauss_tensor({4, 5}, rng);
    Tensor w = gauss_tensor({4, 5}, rng);
    const std::uint64_t mask_seed = seed;
    s.run("dropout",
          [&, mask_seed](const std::vector<Tensor>& p) {
            Rng mask_rng = make_rng(mask_seed, 7002);  // fixed mask per evaluation
            return sum(mul(dropout(p[0], 0.3, mask_rng), w));
          },
          {x}, {"x"});
  }
  {
    const std::size_t d = 3, mu = 6;
    Tensor z = gauss_tensor({4, d}, rng);
    Tensor protos = l2_normalize_rows(gauss_tensor({2, mu}, rng));
    Tensor W = gauss_tensor({mu, d}, rng);
    Tensor sc = Tensor::scalar(1.4);
    Tensor w = gauss_tensor({4, 2}, rng);
    s.run("chi_matrix",
          [&](const std::vector<Tensor>& p) {
            MetricMap map{p[2], mu, d};
            return sum(mul(chi_matrix(p[0], p[1], map, p[3]), w));
          },
          {z, protos, W, sc}, {"z", "protos", "W", "s"});
  }
  {
    Tensor pts = gauss_tensor({5, 3}, rng);
    Tensor ctr = gauss_tensor({2, 3}, rng);
    const std::vector<std::size_t> assign = {0, 1, 0, 0, 1};
    s.run("center_loss",
          [&](const std::vector<Tensor>& p) { return center_loss(p[0], p[1], assign); },
          {pts, ctr}, {"points", "centers"});
  }
  {
    // Full episode objective at the contract's scale: 2 ways, 3 samples per
    // class, mu = 2d, dropout live with a per-call fixed mask.
    const std::size_t d = 3, mu = 2 * d;
    const std::uint64_t mask_seed = seed;
    EmbeddingParams emb = init_embedding({4, 6, d}, mix64(seed ^ 0x9e1ULL), 0.1);
    // A hidden layer this narrow (zero biases) can kill every unit for an
    // unlucky row, which the normalizer rejects; redraw until the exact
    // forward evaluated below is well-posed.
    Tensor x = gauss_tensor({6, 4}, rng);
    for (int attempt = 0; attempt < 64; ++attempt) {
      try {
        Rng probe = make_rng(mask_seed, 7003);
        embed(emb, x, EmbedMode::kTrain, probe);
        break;
      } catch (const DegenerateInputError&) {
        x = gauss_tensor({6, 4}, rng);
      }
    }
    Tensor protos = l2_normalize_rows(gauss_tensor({2, mu}, rng));
    Tensor W = gauss_tensor({mu, d}, rng, 0.6);
    const std::vector<std::size_t> positions = {0, 0, 0, 1, 1, 1};
    std::vector<Tensor> params = emb.trainable();
    std::vector<std::string> names;
    for (std::size_t i = 0; i + 1 < params.size(); i += 2) {
      names.push_back("w" + std::to_string(i / 2));
      names.push_back("b" + std::to_string(i / 2));
    }
    names.push_back("scale_s");
    params.push_back(W);
    names.push_back("W");
    params.push_back(protos);
    names.push_back("protos");
    EmbeddingParams emb_shared = emb;  // tensors share storage with params
    s.run("episode_loss",
          [&, mask_seed, emb_shared](const std::vector<Tensor>& p) {
            Rng mask_rng = make_rng(mask_seed, 7003);
            Tensor z = embed(emb_shared, x, EmbedMode::kTrain, mask_rng);
            MetricMap map{p[p.size() - 2], mu, d};
            return episode_loss_graph(z, positions, p.back(), map, emb_shared.scale_s, 1.0);
          },
          params, names);
  }
  return s.report;
}

}  // namespace shotfree
