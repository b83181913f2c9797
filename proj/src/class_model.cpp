#include "shotfree/class_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "shotfree/errors.hpp"
#include "shotfree/rng.hpp"

namespace shotfree {

std::size_t PrototypeTable::index_of(std::int64_t class_id) const {
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] == class_id) return i;
  }
  throw ProtocolError("class id " + std::to_string(class_id) + " not in prototype table");
}

void PrototypeTable::renormalize_rows(const std::vector<std::size_t>& rows) {
  auto vals = vectors.values_mut();
  const std::size_t m = mu();
  auto project = [&](std::size_t r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) sq += vals[r * m + j] * vals[r * m + j];
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12)) {
      throw DegenerateInputError("prototype row " + std::to_string(r) +
                                 " collapsed to the origin");
    }
    for (std::size_t j = 0; j < m; ++j) vals[r * m + j] /= norm;
  };
  if (rows.empty()) {
    for (std::size_t r = 0; r < num_classes(); ++r) project(r);
  } else {
    for (std::size_t r : rows) {
      if (r >= num_classes()) {
        throw ContractError("renormalize_rows: row " + std::to_string(r) + " out of range");
      }
      project(r);
    }
  }
  normalized = true;
}

void PrototypeTable::validate() const {
  if (class_ids.empty() && !vectors.defined()) return;  // empty table is legal
  if (!vectors.defined() || vectors.ndim() != 2 || vectors.rows() != class_ids.size()) {
    throw ContractError("prototype table shape does not match class_ids");
  }
  std::unordered_set<std::int64_t> seen(class_ids.begin(), class_ids.end());
  if (seen.size() != class_ids.size()) {
    throw ContractError("prototype table has duplicate class ids");
  }
  if (normalized) {
    auto vals = vectors.values();
    const std::size_t m = mu();
    for (std::size_t r = 0; r < num_classes(); ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < m; ++j) sq += vals[r * m + j] * vals[r * m + j];
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
        throw ContractError("prototype row " + std::to_string(r) +
                            " marked normalized but has norm " + std::to_string(std::sqrt(sq)));
      }
    }
  }
}

void MetricMap::validate() const {
  if (!W.defined() || W.ndim() != 2 || W.rows() != mu || W.cols() != d) {
    throw ContractError("metric map W shape does not match (mu, d)");
  }
  detail::check_finite("MetricMap", W.values());
}

namespace {

// normalize(W z) without touching any tape.
std::vector<double> mapped_unit(const Tensor& z, const MetricMap& map) {
  if (z.size() != map.d) {
    throw ShapeError("chi: z has " + std::to_string(z.size()) + " components, map expects " +
                     std::to_string(map.d));
  }
  auto wv = map.W.values();
  auto zv = z.values();
  std::vector<double> u(map.mu, 0.0);
  for (std::size_t i = 0; i < map.mu; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < map.d; ++j) acc += wv[i * map.d + j] * zv[j];
    u[i] = acc;
  }
  double sq = 0.0;
  for (double v : u) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) {
    throw DegenerateInputError("chi: W z vanished; the metric map is degenerate for this input");
  }
  for (double& v : u) v /= norm;
  return u;
}

}  // namespace

double chi(const Tensor& z, const Tensor& c, const MetricMap& map, double s) {
  map.validate();
  if (!(s > 0.0)) throw ContractError("chi: scale must be positive");
  if (c.size() != map.mu) {
    throw ShapeError("chi: c has " + std::to_string(c.size()) + " components, map produces " +
                     std::to_string(map.mu));
  }
  const std::vector<double> u = mapped_unit(z, map);
  auto cv = c.values();
  double sq = 0.0;
  for (std::size_t i = 0; i < map.mu; ++i) {
    const double diff = s * u[i] - s * cv[i];
    sq += diff * diff;
  }
  return sq;
}

std::vector<double> posterior(const Tensor& z, const PrototypeTable& protos, const MetricMap& map,
                              double s) {
  protos.validate();
  if (protos.num_classes() == 0) throw ContractError("posterior: empty prototype table");
  const std::size_t k = protos.num_classes();
  std::vector<double> logits(k);
  auto pv = protos.vectors.values();
  const std::vector<double> u = mapped_unit(z, map);
  for (std::size_t r = 0; r < k; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < map.mu; ++j) {
      const double diff = s * u[j] - s * pv[r * map.mu + j];
      sq += diff * diff;
    }
    logits[r] = -sq;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : logits) v /= denom;
  return logits;
}

Tensor chi_matrix(const Tensor& z, const Tensor& protos_k, const MetricMap& map, const Tensor& s) {
  map.validate();
  if (z.ndim() != 2 || z.cols() != map.d) {
    throw ShapeError("chi_matrix: embeddings " + detail::shape_str(z.shape()) +
                     " do not match map d=" + std::to_string(map.d));
  }
  if (protos_k.ndim() != 2 || protos_k.cols() != map.mu) {
    throw ShapeError("chi_matrix: prototypes " + detail::shape_str(protos_k.shape()) +
                     " do not match map mu=" + std::to_string(map.mu));
  }
  if (s.size() != 1) throw ContractError("chi_matrix: s must be scalar");
  Tensor mapped = matmul(z, transpose(map.W));       // n × mu
  Tensor unit = l2_normalize_rows(mapped);           // n × mu
  Tensor cosines = matmul(unit, transpose(protos_k));  // n × k
  Tensor one_minus = add_const(neg(cosines), 1.0);
  Tensor s_sq = mul(s, s);
  return scale(mul_scalar(one_minus, s_sq), 2.0);  // 2 s² (1 − cos)
}

PrototypeTable init_prototypes(std::size_t num_classes, std::size_t mu, std::uint64_t seed) {
  if (num_classes == 0 || mu == 0) {
    throw ConfigError("init_prototypes: num_classes and mu must be positive");
  }
  Rng rng = make_rng(seed, /*stream_id=*/2);
  std::vector<double> rows(num_classes * mu);
  for (double& v : rows) v = gaussian(rng);
  PrototypeTable table;
  table.class_ids.resize(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) table.class_ids[i] = static_cast<std::int64_t>(i);
  table.vectors = Tensor(Shape{num_classes, mu}, std::move(rows));
  table.renormalize_rows();
  table.validate();
  return table;
}

MetricMap lift_dimension(std::size_t mu_factor, std::size_t d, std::uint64_t seed) {
  if (mu_factor == 0 || d == 0) {
    throw ConfigError("lift_dimension: mu_factor and d must be positive");
  }
  MetricMap map;
  map.d = d;
  map.mu = mu_factor * d;
  if (mu_factor == 1) {
    std::vector<double> w(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;
    map.W = Tensor(Shape{d, d}, std::move(w));
  } else {
    Rng rng = make_rng(seed, /*stream_id=*/3);
    const double bound = std::sqrt(6.0 / static_cast<double>(d));
    std::vector<double> w(map.mu * d);
    for (double& v : w) v = uniform(rng, -bound, bound);
    map.W = Tensor(Shape{map.mu, d}, std::move(w));
  }
  map.validate();
  return map;
}

}  // namespace shotfree
