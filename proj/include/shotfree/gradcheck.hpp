#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shotfree/tensor.hpp"

namespace shotfree {

/// Result of a finite-difference comparison for one parameter tensor.
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;   // worst element, |analytic - numeric| / max(1, |analytic|)
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool ok(double tol) const { return max_rel_err <= tol; }
};

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` must map the given parameters to a scalar and be deterministic: it is
/// evaluated twice up front and an OracleError is thrown if the two values
/// disagree, since finite differences are meaningless for a noisy objective.
/// Perturbs every element of every parameter with step `h`.
GradCheckReport finite_diff_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> params,
    const std::vector<std::string>& names, double h = 1e-5);

/// Sweeps every differentiable primitive plus the full episode objective
/// (2-way, 3 samples per class, mu = 2d) against finite differences.
/// Entry names read "op/param". Deterministic for a fixed seed.
GradCheckReport gradcheck_suite(std::uint64_t seed = 0, double h = 1e-5);

}  // namespace shotfree
