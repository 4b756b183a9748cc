#include "alloc_layers/qp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <ostream>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/instances.hpp"
#include "alloc_layers/rng.hpp"

namespace alloc::qp {

double KktCertificate::max_residual() const noexcept {
  return std::max({stationarity_residual, complementarity_residual, primal_residual});
}

namespace {

Vector clamp_shift(const Vector& y, double shift, const BoundSpec& b) {
  return (y.array() + shift).max(b.lower().array()).min(b.upper().array()).matrix();
}

}  // namespace

KktCertificate certify(const Vector& y, const Vector& z, const BoundSpec& b) {
  const Index n = y.size();
  KktCertificate cert;
  cert.alpha = Vector::Zero(n);
  cert.beta = Vector::Zero(n);

  // The shift is read off the free coordinates; fall back to the average
  // slack when every coordinate sits on a bound.
  double shift_sum = 0.0;
  Index free = 0;
  for (Index k = 0; k < n; ++k) {
    if (z[k] > b.lower()[k] && z[k] < b.upper()[k]) {
      shift_sum += z[k] - y[k];
      ++free;
    }
  }
  if (free > 0) {
    cert.shift = shift_sum / static_cast<double>(free);
  } else {
    // Any shift in the interval [max over upper-active of (upper - y), min over
    // lower-active of (lower - y)] certifies; take its midpoint.
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n; ++k) {
      if (z[k] >= b.upper()[k] && b.lower()[k] < b.upper()[k]) lo = std::max(lo, b.upper()[k] - y[k]);
      if (z[k] <= b.lower()[k] && b.lower()[k] < b.upper()[k]) hi = std::min(hi, b.lower()[k] - y[k]);
    }
    if (std::isfinite(lo) && std::isfinite(hi)) cert.shift = (lo + hi) / 2.0;
    else if (std::isfinite(lo)) cert.shift = lo;
    else if (std::isfinite(hi)) cert.shift = hi;
  }
  cert.lambda = -2.0 * cert.shift;

  for (Index k = 0; k < n; ++k) {
    // 2(z - y) + lambda + alpha - beta = 0
    // Multipliers may only be non-zero on active bounds and must be non-negative.
    const double g = 2.0 * (z[k] - y[k]) + cert.lambda;
    if (z[k] >= b.upper()[k] && g < 0.0) cert.alpha[k] = -g;
    else if (z[k] <= b.lower()[k] && g > 0.0) cert.beta[k] = g;
    const double stat = std::abs(g + cert.alpha[k] - cert.beta[k]);
    const double comp = std::max(std::abs(cert.alpha[k] * (z[k] - b.upper()[k])),
                                 std::abs(cert.beta[k] * (b.lower()[k] - z[k])));
    cert.stationarity_residual = std::max(cert.stationarity_residual, stat);
    cert.complementarity_residual = std::max(cert.complementarity_residual, comp);
    const double primal = std::max({0.0, b.lower()[k] - z[k], z[k] - b.upper()[k]});
    cert.primal_residual = std::max(cert.primal_residual, primal);
  }
  cert.primal_residual = std::max(cert.primal_residual, std::abs(z.sum() - b.budget()));
  return cert;
}

Projection exact_project(const Vector& y, const BoundSpec& b) {
  if (y.size() != b.size()) throw DimensionMismatch("projection input and bounds differ in length");
  require_allocation(y, "projection input");
  const Index n = y.size();
  const double budget = b.budget();

  bool inside = y.sum() == budget;
  for (Index k = 0; k < n && inside; ++k) inside = y[k] >= b.lower()[k] && y[k] <= b.upper()[k];
  if (inside) return Projection{y, certify(y, y, b)};

  // sum clamp(y + s) is continuous and non-decreasing in s.
  double lo = (b.lower() - y).minCoeff();
  double hi = (b.upper() - y).maxCoeff();
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (clamp_shift(y, mid, b).sum() < budget) lo = mid;
    else hi = mid;
  }
  double shift = 0.5 * (lo + hi);

  // Polish: with the active set fixed, the free coordinates solve
  // sum_free (y + s) = C - sum_clamped exactly.
  Vector z = clamp_shift(y, shift, b);
  double clamped_mass = 0.0, free_input = 0.0;
  Index free = 0;
  for (Index k = 0; k < n; ++k) {
    if (y[k] + shift > b.lower()[k] && y[k] + shift < b.upper()[k]) {
      free_input += y[k];
      ++free;
    } else {
      clamped_mass += z[k];
    }
  }
  if (free > 0) {
    shift = (budget - clamped_mass - free_input) / static_cast<double>(free);
    for (Index k = 0; k < n; ++k) {
      if (z[k] > b.lower()[k] && z[k] < b.upper()[k]) z[k] = std::clamp(y[k] + shift, b.lower()[k], b.upper()[k]);
    }
  }
  Projection p{z, certify(y, z, b)};
  return p;
}

Violation violation_cost(const Vector& a, std::span<const RegionConstraint> regions, double budget) {
  require_allocation(a, "allocation");
  Violation v;
  v.gradient = Vector::Zero(a.size());
  const double excess = a.sum() - budget;
  v.cost = std::abs(excess);
  if (excess != 0.0) v.gradient.array() += excess > 0.0 ? 1.0 : -1.0;
  for (const auto& region : regions) {
    double mass = 0.0;
    for (Index k : region.members) mass += a[k];
    if (region.lower - mass > 0.0) {
      v.cost += region.lower - mass;
      for (Index k : region.members) v.gradient[k] -= 1.0;
    } else if (mass - region.upper > 0.0) {
      v.cost += mass - region.upper;
      for (Index k : region.members) v.gradient[k] += 1.0;
    }
  }
  return v;
}

Violation violation_cost(const Vector& a, const RegionTree& tree) {
  if (a.size() != tree.entity_count()) throw DimensionMismatch("allocation and tree differ in entity count");
  const auto constraints = tree.all_constraints();
  return violation_cost(a, constraints, tree.bounds().budget());
}

namespace {

void project_node(const RegionNode& node, double budget, const Vector& a, const RegionTree& tree, Vector& out) {
  const Index m = node.child_count();
  Vector mass(m), lo(m), hi(m);
  for (Index c = 0; c < m; ++c) {
    if (node.is_leaf()) {
      const Index e = node.entities[static_cast<std::size_t>(c)];
      mass[c] = a[e];
      lo[c] = tree.bounds().lower()[e];
      hi[c] = tree.bounds().upper()[e];
    } else {
      const auto& child = node.children[static_cast<std::size_t>(c)];
      mass[c] = 0.0;
      for (Index k : RegionTree::members(child)) mass[c] += a[k];
      std::tie(lo[c], hi[c]) = tree.effective_interval(child);
    }
  }
  const double clipped = std::clamp(budget, lo.sum(), hi.sum());
  const Vector share = exact_project(mass, BoundSpec::subproblem(lo, hi, clipped)).z;
  for (Index c = 0; c < m; ++c) {
    if (node.is_leaf()) out[node.entities[static_cast<std::size_t>(c)]] = share[c];
    else project_node(node.children[static_cast<std::size_t>(c)], share[c], a, tree, out);
  }
}

}  // namespace

Vector cp_project(const Vector& a, const RegionTree& tree) {
  if (a.size() != tree.entity_count()) throw DimensionMismatch("allocation and tree differ in entity count");
  require_allocation(a, "allocation");
  if (check_feasibility(a, tree, 0.0).feasible) return a;
  if (tree.is_flat()) return exact_project(a, tree.bounds()).z;
  Vector out = Vector::Zero(a.size());
  project_node(tree.root(), tree.bounds().budget(), a, tree, out);
  return out;
}

GapSample projection_gap(const Vector& y, const BoundSpec& b) {
  const auto approx = appropt::appropt_forward(y, b);
  const auto exact = exact_project(y, b);
  GapSample s;
  s.appropt_distance = (approx.z - y).norm();
  s.exact_distance = (exact.z - y).norm();
  s.gap = s.appropt_distance - s.exact_distance;
  return s;
}

void projection_gap_batch(std::ostream& out, std::uint64_t seed, std::size_t count, Index max_n) {
  out << "seed,n,gap,appropt_distance,exact_distance\n";
  out.precision(17);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const Index n = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(std::max<Index>(max_n - 1, 1))));
    const BoundSpec b = instances::random_strict_bounds(rng, n);
    const Vector y = instances::random_box_point(rng, b);
    const GapSample g = projection_gap(y, b);
    out << s << ',' << n << ',' << g.gap << ',' << g.appropt_distance << ',' << g.exact_distance << '\n';
  }
}

}  // namespace alloc::qp
