#include "shotfree/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shotfree/errors.hpp"
#include "shotfree/ops.hpp"
#include "shotfree/rng.hpp"

namespace shotfree {

double ell(const Tensor& v, std::size_t true_index) {
  if (v.size() == 0) throw ContractError("ell: empty logit vector");
  if (true_index >= v.size()) {
    throw ContractError("ell: index " + std::to_string(true_index) + " out of range for " +
                        std::to_string(v.size()) + " classes");
  }
  auto vv = v.values();
  double mx = vv[0];
  for (double x : vv) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : vv) acc += std::exp(x - mx);
  return -vv[true_index] + mx + std::log(acc);
}

Tensor episode_loss_graph(const Tensor& z, const std::vector<std::size_t>& label_positions,
                          const Tensor& episode_protos, const MetricMap& map, const Tensor& s,
                          double lambda, EpisodeLossReport* report) {
  const std::size_t n = z.rows(), k = episode_protos.rows();
  if (label_positions.size() != n) {
    throw ContractError("episode_loss: need one label per sample");
  }
  for (std::size_t pos : label_positions) {
    if (pos >= k) {
      throw ProtocolError("episode_loss: label position " + std::to_string(pos) +
                          " outside the episode's " + std::to_string(k) + " classes");
    }
  }
  Tensor chiM = chi_matrix(z, episode_protos, map, s);  // n × k
  Tensor logits = neg(chiM);
  Tensor lse = log_sum_exp_rows(logits);                  // n × 1
  Tensor picked = gather_rows(logits, label_positions);   // n × 1
  Tensor ce = mean(sub(lse, picked));
  Tensor logp = sub_colvec(logits, lse);                  // n × k
  Tensor probs = exp(logp);
  Tensor ent_rows = neg(sum_rows(mul(probs, logp)));      // n × 1
  Tensor ent = mean(ent_rows);
  Tensor total = add(ce, scale(ent, lambda));
  if (report) {
    report->cross_entropy = ce.at(0);
    report->entropy_term = ent.at(0);
    report->total = total.at(0);
    report->per_sample_correct_prob.resize(n);
    auto lp = logp.values();
    for (std::size_t j = 0; j < n; ++j) {
      report->per_sample_correct_prob[j] = std::exp(lp[j * k + label_positions[j]]);
    }
  }
  return total;
}

EpisodeLossReport episode_loss(const Tensor& z, const std::vector<std::int64_t>& labels,
                               const PrototypeTable& protos, const MetricMap& map, double s,
                               double lambda) {
  std::vector<std::size_t> positions(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    positions[j] = protos.index_of(labels[j]);  // throws ProtocolError when absent
  }
  EpisodeLossReport report;
  Tensor s_t = Tensor::scalar(s);
  episode_loss_graph(z, positions, protos.vectors, map, s_t, lambda, &report);
  return report;
}

Tensor center_loss(const Tensor& points, const Tensor& centers,
                   const std::vector<std::size_t>& assignment) {
  if (points.ndim() != 2 || centers.ndim() != 2 || points.cols() != centers.cols()) {
    throw ShapeError("center_loss: points " + detail::shape_str(points.shape()) +
                     " vs centers " + detail::shape_str(centers.shape()));
  }
  if (assignment.size() != points.rows()) {
    throw ContractError("center_loss: need one center per point");
  }
  Tensor own = select_rows(centers, assignment);  // n × d
  Tensor diff = sub(points, own);
  return sum(mul(diff, diff));
}

namespace {

double max_pairwise_distance(std::span<const double> vals, std::size_t n, std::size_t d) {
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = vals[i * d + c] - vals[j * d + c];
        sq += diff * diff;
      }
      best = std::max(best, std::sqrt(sq));
    }
  }
  return best;
}

void apply_mean_grad_step(const Tensor& t, double lr, double inv_n) {
  if (!t.has_grad()) return;
  auto vals = t.values_mut();
  auto g = t.grad();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= lr * inv_n * g[i];
}

bool finite_loss(double v) { return std::isfinite(v); }

}  // namespace

CollapseTrajectory collapse_demo(std::size_t n_points, std::size_t d, std::size_t steps, double lr,
                                 std::uint64_t seed) {
  if (n_points == 0 || d == 0) throw ConfigError("collapse_demo: need points and a dimension");
  Rng rng = make_rng(seed, /*stream_id=*/4);
  std::vector<double> pts(n_points * d);
  for (double& v : pts) v = gaussian(rng);
  std::vector<double> ctr(d);
  for (double& v : ctr) v = gaussian(rng);
  Tensor points(Shape{n_points, d}, std::move(pts), /*requires_grad=*/true);
  Tensor center(Shape{1, d}, std::move(ctr), /*requires_grad=*/true);
  const std::vector<std::size_t> assignment(n_points, 0);
  const double inv_n = 1.0 / static_cast<double>(n_points);

  CollapseTrajectory traj;
  double prev_loss = std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step < steps; ++step) {
    points.zero_grad();
    center.zero_grad();
    double loss_val = 0.0;
    try {
      Tape tape;
      Tensor loss = center_loss(points, center, assignment);
      loss_val = loss.at(0);
      tape.backward(loss);
    } catch (const NumericError&) {
      traj.diverged = true;
      traj.diverged_at = step;
      break;
    }
    traj.steps.push_back(
        {step, loss_val, max_pairwise_distance(points.values(), n_points, d)});
    // Exploding loss means the step size left the stable region; say so.
    if (!finite_loss(loss_val) || (step > 10 && loss_val > 1e6 && loss_val > prev_loss)) {
      traj.diverged = true;
      traj.diverged_at = step;
      break;
    }
    prev_loss = loss_val;
    apply_mean_grad_step(points, lr, inv_n);
    apply_mean_grad_step(center, lr, inv_n);
  }
  return traj;
}

CollapseTrajectory episode_contrast_demo(std::size_t n_points, std::size_t d, std::size_t steps,
                                         double lr, double lambda, std::uint64_t seed) {
  if (n_points < 2 || d < 2) {
    throw ConfigError("episode_contrast_demo: need >= 2 points in >= 2 dims");
  }
  Rng rng = make_rng(seed, /*stream_id=*/5);
  std::vector<double> pts(n_points * d);
  for (double& v : pts) v = gaussian(rng);
  Tensor points(Shape{n_points, d}, std::move(pts), /*requires_grad=*/true);
  std::vector<double> proto_rows(2 * d);
  for (double& v : proto_rows) v = gaussian(rng);
  PrototypeTable protos;
  protos.class_ids = {0, 1};
  protos.vectors = Tensor(Shape{2, d}, std::move(proto_rows), /*requires_grad=*/true);
  protos.renormalize_rows();
  MetricMap map = lift_dimension(1, d);  // identity
  Tensor s = Tensor::scalar(1.0);
  std::vector<std::size_t> label_positions(n_points);
  for (std::size_t j = 0; j < n_points; ++j) label_positions[j] = j < n_points / 2 ? 0 : 1;
  const double inv_n = 1.0 / static_cast<double>(n_points);

  CollapseTrajectory traj;
  for (std::size_t step = 0; step < steps; ++step) {
    points.zero_grad();
    protos.vectors.zero_grad();
    EpisodeLossReport report;
    {
      Tape tape;
      Tensor loss =
          episode_loss_graph(points, label_positions, protos.vectors, map, s, lambda, &report);
      tape.backward(loss);
    }
    traj.steps.push_back(
        {step, report.total, max_pairwise_distance(points.values(), n_points, d)});
    if (!finite_loss(report.total)) {
      traj.diverged = true;
      traj.diverged_at = step;
      break;
    }
    apply_mean_grad_step(points, lr, inv_n);
    apply_mean_grad_step(protos.vectors, lr, inv_n);
    protos.renormalize_rows();
  }
  return traj;
}

}  // namespace shotfree
