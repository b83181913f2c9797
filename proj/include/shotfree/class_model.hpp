#pragma once

#include <cstdint>
#include <vector>

#include "shotfree/ops.hpp"
#include "shotfree/tensor.hpp"

namespace shotfree {

/// Class identities as free parameters: one row per class, living on the unit
/// sphere of the prototype space R^mu.
struct PrototypeTable {
  std::vector<std::int64_t> class_ids;
  Tensor vectors;  // num_classes × mu
  bool normalized = false;

  std::size_t num_classes() const { return class_ids.size(); }
  std::size_t mu() const { return vectors.defined() ? vectors.cols() : 0; }
  /// Row position of a class id; throws ProtocolError when absent.
  std::size_t index_of(std::int64_t class_id) const;
  /// Projects the given rows back onto the sphere (all rows when empty).
  /// Leaves untouched rows bitwise intact.
  void renormalize_rows(const std::vector<std::size_t>& rows = {});
  void validate() const;
};

/// Learnable map from embedding space R^d to prototype space R^mu.
struct MetricMap {
  Tensor W;  // mu × d
  std::size_t mu = 0;
  std::size_t d = 0;

  void validate() const;
};

/// Membership discriminant chi(z, c) = ||s·normalize(Wz) − s·c||², which
/// equals 2s²(1 − cos θ) for unit c and θ the angle between normalize(Wz)
/// and c. `z` is a d-vector, `c` a mu-vector.
double chi(const Tensor& z, const Tensor& c, const MetricMap& map, double s);

/// Softmax of −chi over the table's classes; sums to 1.
std::vector<double> posterior(const Tensor& z, const PrototypeTable& protos, const MetricMap& map,
                              double s);

/// Differentiable all-pairs version used by the training graph: rows of `z`
/// (n×d) against rows of `protos_k` (k×mu), giving chi as an n×k tensor.
/// `s` is the scalar scale parameter; its gradient flows through the 2s²
/// temperature.
Tensor chi_matrix(const Tensor& z, const Tensor& protos_k, const MetricMap& map, const Tensor& s);

/// Rows uniform on S^{mu−1} (Gaussian, then normalize); ids 0..num_classes−1
/// until the caller rebinds them.
PrototypeTable init_prototypes(std::size_t num_classes, std::size_t mu, std::uint64_t seed);

/// mu = mu_factor·d. Factor 1 gives W = identity; otherwise He-style uniform.
MetricMap lift_dimension(std::size_t mu_factor, std::size_t d, std::uint64_t seed = 0);

}  // namespace shotfree
