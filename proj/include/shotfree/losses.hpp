#pragma once

#include <cstdint>
#include <vector>

#include "shotfree/class_model.hpp"
#include "shotfree/tensor.hpp"

namespace shotfree {

struct EpisodeLossReport {
  double cross_entropy = 0.0;
  double entropy_term = 0.0;  // mean posterior entropy
  double total = 0.0;         // cross_entropy + lambda * entropy_term
  std::vector<double> per_sample_correct_prob;
};

/// ell(v, i) = −v_i + log Σ_k exp(v_k), the negative log-softmax of the true
/// component. Shift invariant; computed with a max shift.
double ell(const Tensor& v, std::size_t true_index);

/// Differentiable episode objective. `z` holds the embedded episode samples
/// (n×d), `label_positions[j]` the row of `episode_protos` that sample j
/// belongs to. Returns the scalar total = CE + lambda·H as a graph node and
/// fills `report`. Positive lambda penalizes high-entropy posteriors; the
/// sign is a config choice, negative values reward entropy instead.
Tensor episode_loss_graph(const Tensor& z, const std::vector<std::size_t>& label_positions,
                          const Tensor& episode_protos, const MetricMap& map, const Tensor& s,
                          double lambda, EpisodeLossReport* report = nullptr);

/// Non-graph convenience wrapper: labels are global class ids resolved
/// against `protos.class_ids`; unknown labels raise ProtocolError.
EpisodeLossReport episode_loss(const Tensor& z, const std::vector<std::int64_t>& labels,
                               const PrototypeTable& protos, const MetricMap& map, double s,
                               double lambda);

/// Sum of squared distances of each point to its assigned center,
/// L = Σ_j ‖x_j − c_{a(j)}‖². Differentiable: the tape yields exactly
/// 2(x_j − c) per point and −2 Σ (x_j − c) per center.
Tensor center_loss(const Tensor& points, const Tensor& centers,
                   const std::vector<std::size_t>& assignment);

struct CollapseStep {
  std::size_t step = 0;
  double loss = 0.0;
  double spread = 0.0;  // max pairwise point distance
};

struct CollapseTrajectory {
  std::vector<CollapseStep> steps;
  bool diverged = false;
  std::size_t diverged_at = 0;
  double final_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
  double final_spread() const { return steps.empty() ? 0.0 : steps.back().spread; }
};

/// Joint gradient descent of points and their single shared center on the
/// center loss, demonstrating the collapse of the unregularized objective.
/// Steps use the per-point mean of the loss gradient so the conventional
/// lr=0.1 sits inside the stable region for any n. Divergence (non-finite or
/// exploding loss) is reported via `diverged`, never silently.
CollapseTrajectory collapse_demo(std::size_t n_points, std::size_t d, std::size_t steps, double lr,
                                 std::uint64_t seed);

/// Contrast run: the same free-point setup driven by the episode objective
/// (2 classes, lambda as given) instead of the center loss; the spread of the
/// points stays bounded away from zero.
CollapseTrajectory episode_contrast_demo(std::size_t n_points, std::size_t d, std::size_t steps,
                                         double lr, double lambda, std::uint64_t seed);

}  // namespace shotfree
