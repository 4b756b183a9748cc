#pragma once

// Exact Euclidean projection onto the bounded simplex, its KKT certificate,
// the piecewise-linear violation cost used as a training penalty, and the
// projection used to execute infeasible actions under a region tree.

#include <cstdint>
#include <iosfwd>
#include <span>

#include "alloc_layers/core.hpp"
#include "alloc_layers/region_tree.hpp"

namespace alloc::qp {

/// Multipliers of
///   min sum (z - y)^2  s.t.  sum z = C,  z <= upper (alpha),  lower <= z (beta).
/// Stationarity reads 2(z_k - y_k) + lambda + alpha_k - beta_k = 0.
struct KktCertificate {
  double shift = 0.0;   ///< z = clamp(y + shift, lower, upper)
  double lambda = 0.0;  ///< equality multiplier, -2 * shift
  Vector alpha;
  Vector beta;
  double stationarity_residual = 0.0;
  double complementarity_residual = 0.0;
  double primal_residual = 0.0;

  double max_residual() const noexcept;
};

struct Projection {
  Vector z;
  KktCertificate certificate;
};

/// Bisection on the shift followed by an active-set polish.
Projection exact_project(const Vector& y, const BoundSpec& b);

/// Recomputes the certificate for a candidate point from scratch.
KktCertificate certify(const Vector& y, const Vector& z, const BoundSpec& b);

struct Violation {
  double cost = 0.0;
  Vector gradient;  ///< a subgradient; 0 is taken at every kink
};

/// |C - sum a| + sum_G max(0, lower_G - a(G)) + sum_G max(0, a(G) - upper_G).
Violation violation_cost(const Vector& a, std::span<const RegionConstraint> regions, double budget = 1.0);

/// Violation over the tree's regions and its entity bounds (as singleton regions).
Violation violation_cost(const Vector& a, const RegionTree& tree);

/// Nearest feasible point for flat trees; top-down nested projections otherwise.
Vector cp_project(const Vector& a, const RegionTree& tree);

struct GapSample {
  double gap = 0.0;
  double appropt_distance = 0.0;
  double exact_distance = 0.0;
};

/// Excess L2 distance of the ApprOpt output over the exact projection.
GapSample projection_gap(const Vector& y, const BoundSpec& b);

/// Writes `count` random instances as CSV rows
/// `seed,n,gap,appropt_distance,exact_distance` (header included).
/// Instance i uses seed derive_seed(seed, i) and n drawn from [2, max_n].
void projection_gap_batch(std::ostream& out, std::uint64_t seed, std::size_t count, Index max_n = 100);

}  // namespace alloc::qp
