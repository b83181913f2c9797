#pragma once

#include <cstddef>
#include <vector>

#include "shotfree/rng.hpp"
#include "shotfree/tensor.hpp"

namespace shotfree {

// Differentiable primitives. Each op computes its forward value eagerly and,
// when a Tape is active and an input requires grad, records the exact
// backward rule. Shapes are explicit; the only broadcasts are row-vector /
// column-vector additions, which keeps every Jacobian auditable.

/// Elementwise a + b, same shape.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise a - b, same shape.
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise (Hadamard) a * b, same shape.
Tensor mul(const Tensor& a, const Tensor& b);
/// x * k with constant k.
Tensor scale(const Tensor& x, double k);
/// x + k with constant k.
Tensor add_const(const Tensor& x, double k);
/// -x.
Tensor neg(const Tensor& x);
/// x * s where s is a learnable 1-element tensor; ds = sum(g .* x).
Tensor mul_scalar(const Tensor& x, const Tensor& s);

/// Matrix product of m×k and k×n. Backward: dA += G·Bᵀ, dB += Aᵀ·G.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x·Wᵀ + b for x: n×in, W: out×in, b: {out}. Pass an undefined Tensor to
/// skip the bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Elementwise max(0, x); subgradient at 0 is 0.
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& x);
/// Mean of all elements, shape {1}.
Tensor mean(const Tensor& x);
/// Per-row sums of an n×m tensor, shape n×1.
Tensor sum_rows(const Tensor& x);

/// Broadcast adds: r ({m} or 1×m) to every row, c (n×1) to every column.
Tensor add_rowvec(const Tensor& x, const Tensor& r);
Tensor add_colvec(const Tensor& x, const Tensor& c);
Tensor sub_colvec(const Tensor& x, const Tensor& c);

/// Rows scaled to unit Euclidean norm with the exact x/‖x‖ Jacobian.
/// A row with norm ≤ eps raises DegenerateInputError (collapsed embedding).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// log Σ exp over each row of n×m via the max-shift trick, shape n×1.
Tensor log_sum_exp_rows(const Tensor& x);
/// log Σ exp over a vector ({n}, 1×n or n×1), shape {1}. Exact for a
/// single element.
Tensor log_sum_exp(const Tensor& v);

/// out[i] = x[i, index[i]], shape n×1.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index);
/// Stacks x[index[0]], ..., x[index[k-1]] into k×m. Gradient scatters back,
/// so rows not selected receive none.
Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& index);
/// Vertical concatenation of 2-D tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Inverted dropout: zeroes each element with probability `rate`, scales
/// survivors by 1/(1-rate). The mask is drawn once at forward time.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace shotfree
