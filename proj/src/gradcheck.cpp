#include "shotfree/gradcheck.hpp"

#include <cmath>
#include <cstdio>

#include "shotfree/errors.hpp"

namespace shotfree {

namespace {

double eval_scalar(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                   const std::vector<Tensor>& params) {
  Tensor out = f(params);
  if (out.size() != 1) {
    throw ContractError("finite_diff_check: objective must be scalar, got " +
                        detail::shape_str(out.shape()));
  }
  return out.at(0);
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  std::vector<Tensor> params,
                                  const std::vector<std::string>& names, double h) {
  if (params.empty()) throw ContractError("finite_diff_check: no parameters");
  if (names.size() != params.size()) {
    throw ContractError("finite_diff_check: need one name per parameter");
  }
  for (Tensor& p : params) p.set_requires_grad(true);

  // Determinism gate: a stochastic objective silently breaks the comparison.
  const double v1 = eval_scalar(f, params);
  const double v2 = eval_scalar(f, params);
  if (v1 != v2) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "finite_diff_check: objective is not deterministic (%.17g vs %.17g); "
                  "fix the RNG before checking gradients",
                  v1, v2);
    throw OracleError(buf);
  }

  // Analytic pass.
  for (Tensor& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f(params);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    GradCheckEntry entry;
    entry.name = names[pi];
    auto vals = p.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = eval_scalar(f, params);
      vals[i] = orig - h;
      const double down = eval_scalar(f, params);
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic_at_worst = analytic;
        entry.numeric_at_worst = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace shotfree
