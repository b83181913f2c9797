#include "shotfree/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace shotfree {

namespace {

using detail::check_finite;
using detail::shape_str;

bool tape_wants(const Tensor& a) { return Tape::current() && a.requires_grad(); }

bool tape_wants(const Tensor& a, const Tensor& b) {
  return Tape::current() && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_2d(const char* op, const Tensor& x) {
  if (x.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(x.shape()));
  }
}

Tensor make_out(const char* op, Shape shape, std::vector<double> values, bool rg) {
  check_finite(op, values);
  Tape* tape = Tape::current();
  Tensor out(std::move(shape), std::move(values), rg && tape != nullptr);
  if (out.requires_grad()) tape->track_output(out);
  return out;
}

// Elementwise binary op with per-element partials.
template <typename Fwd, typename BwdA, typename BwdB>
Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, BwdA da,
                 BwdB db) {
  require_same_shape(name, a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor res = make_out(name, a.shape(), std::move(out), tape_wants(a, b));
  if (tape_wants(a, b)) {
    Tape::current()->record([a, b, res, da, db]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        std::vector<double> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = da(g[i], av[i], bv[i]);
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = db(g[i], av[i], bv[i]);
        b.accumulate_grad(gb);
      }
    });
  }
  return res;
}

template <typename Fwd, typename Bwd>
Tensor ew_unary(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor res = make_out(name, x.shape(), std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, bwd]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      auto xv = x.values();
      auto yv = res.values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = bwd(g[i], xv[i], yv[i]);
      x.accumulate_grad(gx);
    });
  }
  return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& x, double k) {
  return ew_unary(
      "scale", x, [k](double v) { return k * v; },
      [k](double g, double, double) { return k * g; });
}

Tensor add_const(const Tensor& x, double k) {
  return ew_unary(
      "add_const", x, [k](double v) { return v + k; },
      [](double g, double, double) { return g; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError("mul_scalar: scale must have exactly one element, got " +
                     shape_str(s.shape()));
  }
  const double sv = s.at(0);
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
  Tensor res = make_out("mul_scalar", x.shape(), std::move(out), tape_wants(x, s));
  if (tape_wants(x, s)) {
    Tape::current()->record([x, s, res]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      auto xv = x.values();
      if (x.requires_grad()) {
        const double sv = s.at(0);
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * sv;
        x.accumulate_grad(gx);
      }
      if (s.requires_grad()) {
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * xv[i];
        s.accumulate_grad(std::span<const double>(&gs, 1));
      }
    });
  }
  return res;
}

namespace {

// C[m×n] += or = A[m×k] · B[k×n]; row-major, ikj order.
void matmul_into(std::span<const double> a, std::span<const double> b, std::size_t m,
                 std::size_t k, std::size_t n, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ.
void matmul_nt_into(std::span<const double> a, std::span<const double> b, std::size_t m,
                    std::size_t k, std::size_t n, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n].
void matmul_tn_into(std::span<const double> a, std::span<const double> b, std::size_t m,
                    std::size_t k, std::size_t n, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  matmul_into(a.values(), b.values(), m, k, n, out);
  Tensor res = make_out("matmul", Shape{m, n}, std::move(out), tape_wants(a, b));
  if (tape_wants(a, b)) {
    Tape::current()->record([a, b, res, m, k, n]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      if (a.requires_grad()) {
        std::vector<double> ga(m * k, 0.0);
        matmul_nt_into(g, b.values(), m, n, k, ga);
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(k * n, 0.0);
        matmul_tn_into(a.values(), g, m, k, n, gb);
        b.accumulate_grad(gb);
      }
    });
  }
  return res;
}

Tensor transpose(const Tensor& x) {
  require_2d("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  Tensor res = make_out("transpose", Shape{c, r}, std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, r, c]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> gx(r * c);
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t i = 0; i < r; ++i) gx[i * c + j] = g[j * r + i];
      x.accumulate_grad(gx);
    });
  }
  return res;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_2d("linear", x);
  require_2d("linear", weight);
  if (x.cols() != weight.cols()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t n = x.rows(), in = x.cols(), out_dim = weight.rows();
  const bool with_bias = bias.defined();
  if (with_bias && bias.size() != out_dim) {
    throw ShapeError("linear: bias size " + std::to_string(bias.size()) +
                     " does not match output dim " + std::to_string(out_dim));
  }
  std::vector<double> out(n * out_dim, 0.0);
  matmul_nt_into(x.values(), weight.values(), n, in, out_dim, out);
  if (with_bias) {
    auto bv = bias.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bv[j];
  }
  bool rg = Tape::current() && (x.requires_grad() || weight.requires_grad() ||
                                (with_bias && bias.requires_grad()));
  Tensor res = make_out("linear", Shape{n, out_dim}, std::move(out), rg);
  if (rg) {
    Tape::current()->record([x, weight, bias, res, n, in, out_dim, with_bias]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      if (x.requires_grad()) {
        std::vector<double> gx(n * in, 0.0);
        matmul_into(g, weight.values(), n, out_dim, in, gx);
        x.accumulate_grad(gx);
      }
      if (weight.requires_grad()) {
        std::vector<double> gw(out_dim * in, 0.0);
        matmul_tn_into(g, x.values(), n, out_dim, in, gw);
        weight.accumulate_grad(gw);
      }
      if (with_bias && bias.requires_grad()) {
        std::vector<double> gb(out_dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
        bias.accumulate_grad(gb);
      }
    });
  }
  return res;
}

Tensor relu(const Tensor& x) {
  return ew_unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double xv, double) { return xv > 0.0 ? g : 0.0; });
}

Tensor exp(const Tensor& x) {
  return ew_unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& x) {
  return ew_unary(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double xv, double) { return g / xv; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor res = make_out("sum", Shape{1}, {acc}, tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res]() mutable {
      if (!res.has_grad()) return;
      const double g = res.grad()[0];
      std::vector<double> gx(x.size(), g);
      x.accumulate_grad(gx);
    });
  }
  return res;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_rows(const Tensor& x) {
  require_2d("sum_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += xv[i * m + j];
  Tensor res = make_out("sum_rows", Shape{n, 1}, std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, n, m]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> gx(n * m);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] = g[i];
      x.accumulate_grad(gx);
    });
  }
  return res;
}

namespace {

Tensor broadcast_add(const char* name, const Tensor& x, const Tensor& v, bool along_rows,
                     double sign) {
  require_2d(name, x);
  const std::size_t n = x.rows(), m = x.cols();
  if (along_rows) {  // v broadcast over rows: size m
    if (v.size() != m || v.ndim() > 2 || (v.ndim() == 2 && v.rows() != 1)) {
      throw ShapeError(std::string(name) + ": row vector " + shape_str(v.shape()) +
                       " does not broadcast over " + shape_str(x.shape()));
    }
  } else {  // v is a column: n×1
    if (v.ndim() != 2 || v.rows() != n || v.cols() != 1) {
      throw ShapeError(std::string(name) + ": column vector " + shape_str(v.shape()) +
                       " does not broadcast over " + shape_str(x.shape()));
    }
  }
  std::vector<double> out(n * m);
  auto xv = x.values();
  auto vv = v.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = xv[i * m + j] + sign * (along_rows ? vv[j] : vv[i]);
  Tensor res = make_out(name, x.shape(), std::move(out), tape_wants(x, v));
  if (tape_wants(x, v)) {
    Tape::current()->record([x, v, res, n, m, along_rows, sign]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      if (x.requires_grad()) x.accumulate_grad(g);
      if (v.requires_grad()) {
        std::vector<double> gv(v.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gv[along_rows ? j : i] += sign * g[i * m + j];
        v.accumulate_grad(gv);
      }
    });
  }
  return res;
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& r) {
  return broadcast_add("add_rowvec", x, r, true, 1.0);
}

Tensor add_colvec(const Tensor& x, const Tensor& c) {
  return broadcast_add("add_colvec", x, c, false, 1.0);
}

Tensor sub_colvec(const Tensor& x, const Tensor& c) {
  return broadcast_add("sub_colvec", x, c, false, -1.0);
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_2d("l2_normalize_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n * m);
  std::vector<double> norms(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) sq += xv[i * m + j] * xv[i * m + j];
    const double norm = std::sqrt(sq);
    if (!(norm > eps)) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) + " has norm " +
                                 std::to_string(norm) + " <= eps; embedding collapsed");
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = xv[i * m + j] / norm;
  }
  Tensor res = make_out("l2_normalize_rows", x.shape(), std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    // d/dx (x/r) = (g - (g·y) y) / r with y = x/r.
    Tape::current()->record([x, res, norms, n, m]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      auto y = res.values();
      std::vector<double> gx(n * m);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          gx[i * m + j] = (g[i * m + j] - dot * y[i * m + j]) / norms[i];
      }
      x.accumulate_grad(gx);
    });
  }
  return res;
}

namespace {

// Row-wise LSE with max shift; writes softmax of each row into `soft` when
// non-null (reused by the backward pass).
void lse_rows_forward(std::span<const double> xv, std::size_t n, std::size_t m,
                      std::vector<double>& out, std::vector<double>* soft) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += std::exp(row[j] - mx);
    out[i] = mx + std::log(acc);
    if (soft) {
      for (std::size_t j = 0; j < m; ++j) (*soft)[i * m + j] = std::exp(row[j] - mx) / acc;
    }
  }
}

}  // namespace

Tensor log_sum_exp_rows(const Tensor& x) {
  require_2d("log_sum_exp_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n);
  lse_rows_forward(x.values(), n, m, out, nullptr);
  Tensor res = make_out("log_sum_exp_rows", Shape{n, 1}, std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, n, m]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> soft(n * m);
      std::vector<double> tmp(n);
      lse_rows_forward(x.values(), n, m, tmp, &soft);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) soft[i * m + j] *= g[i];
      x.accumulate_grad(soft);
    });
  }
  return res;
}

Tensor log_sum_exp(const Tensor& v) {
  if (v.size() == 0 || v.ndim() > 2 || (v.ndim() == 2 && v.rows() != 1 && v.cols() != 1)) {
    throw ShapeError("log_sum_exp: expected a non-empty vector, got " + shape_str(v.shape()));
  }
  const std::size_t m = v.size();
  std::vector<double> out(1);
  lse_rows_forward(v.values(), 1, m, out, nullptr);
  Tensor res = make_out("log_sum_exp", Shape{1}, std::move(out), tape_wants(v));
  if (tape_wants(v)) {
    Tape::current()->record([v, res, m]() mutable {
      if (!res.has_grad()) return;
      const double g = res.grad()[0];
      std::vector<double> soft(m);
      std::vector<double> tmp(1);
      lse_rows_forward(v.values(), 1, m, tmp, &soft);
      for (std::size_t j = 0; j < m; ++j) soft[j] *= g;
      v.accumulate_grad(soft);
    });
  }
  return res;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  require_2d("gather_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (index.size() != n) {
    throw ShapeError("gather_rows: need one index per row, got " + std::to_string(index.size()) +
                     " for " + std::to_string(n) + " rows");
  }
  std::vector<double> out(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       std::to_string(m) + " columns");
    }
    out[i] = xv[i * m + index[i]];
  }
  Tensor res = make_out("gather_rows", Shape{n, 1}, std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, index, n, m]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> gx(n * m, 0.0);
      for (std::size_t i = 0; i < n; ++i) gx[i * m + index[i]] = g[i];
      x.accumulate_grad(gx);
    });
  }
  return res;
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  require_2d("select_rows", x);
  const std::size_t n = x.rows(), m = x.cols(), k = index.size();
  if (k == 0) throw ShapeError("select_rows: empty index");
  std::vector<double> out(k * m);
  auto xv = x.values();
  for (std::size_t i = 0; i < k; ++i) {
    if (index[i] >= n) {
      throw ShapeError("select_rows: row " + std::to_string(index[i]) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(xv.data() + index[i] * m, m, out.data() + i * m);
  }
  Tensor res = make_out("select_rows", Shape{k, m}, std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, index, n, m, k]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> gx(n * m, 0.0);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[index[i] * m + j] += g[i * m + j];
      x.accumulate_grad(gx);
    });
  }
  return res;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t m = parts[0].cols();
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_2d("concat_rows", p);
    if (p.cols() != m) {
      throw ShapeError("concat_rows: column counts differ, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    total += p.rows();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total * m);
  for (const Tensor& p : parts) {
    auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  rg = rg && Tape::current();
  Tensor res = make_out("concat_rows", Shape{total, m}, std::move(out), rg);
  if (rg) {
    Tape::current()->record([parts, res, m]() {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::size_t offset = 0;
      for (const Tensor& p : parts) {
        const std::size_t cnt = p.rows() * m;
        if (p.requires_grad()) p.accumulate_grad(g.subspan(offset, cnt));
        offset += cnt;
      }
    });
  }
  return res;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return scale(x, 1.0);  // keeps the graph uniform
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (double& mv : *mask) mv = unit(rng) < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  Tensor res = make_out("dropout", x.shape(), std::move(out), tape_wants(x));
  if (tape_wants(x)) {
    Tape::current()->record([x, res, mask]() mutable {
      if (!res.has_grad()) return;
      auto g = res.grad();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*mask)[i];
      x.accumulate_grad(gx);
    });
  }
  return res;
}

}  // namespace shotfree
