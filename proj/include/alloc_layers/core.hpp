#pragma once

// Shared domain types for allocation layers: bounds, discrete allocations,
// Jacobians and feasibility reports, plus the conversions between discrete
// resource counts and fraction-valued allocation vectors.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alloc_layers/errors.hpp"

namespace alloc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kFeasibilityTol = 1e-9;
inline constexpr double kFiniteDiffStep = 1e-6;

/// Throws unless `v` is non-empty and every entry is finite.
void require_allocation(const Vector& v, const char* what = "allocation");

/// Per-entity lower/upper bounds and the total budget to distribute.
///
/// Invariants: 0 <= lower_k <= upper_k <= budget and
/// sum(lower) <= budget <= sum(upper). The sum checks use a relative
/// slack of 1e-12 so that bounds derived by arithmetic still validate.
class BoundSpec {
 public:
  BoundSpec(Vector lower, Vector upper, double budget = 1.0);

  static BoundSpec uniform(Index n, double lower, double upper, double budget = 1.0);
  /// Lower bounds 0, upper bounds equal to the budget.
  static BoundSpec simplex(Index n, double budget = 1.0);

  /// Same as the constructor except that upper_k may exceed the budget.
  /// Used for sub-problems inside a region tree, where a child's static
  /// upper bound can be larger than the budget its parent hands it.
  static BoundSpec subproblem(Vector lower, Vector upper, double budget);

  Index size() const noexcept { return lower_.size(); }
  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }
  double budget() const noexcept { return budget_; }
  double lower_mass() const noexcept { return lower_.sum(); }
  double upper_mass() const noexcept { return upper_.sum(); }

  BoundSpec with_budget(double budget) const;

 private:
  BoundSpec(Vector lower, Vector upper, double budget, bool allow_upper_above_budget);

  Vector lower_;
  Vector upper_;
  double budget_;
};

/// Integer resource counts summing to `total`.
class DiscreteAllocation {
 public:
  DiscreteAllocation(std::vector<std::int64_t> counts, std::int64_t total);

  const std::vector<std::int64_t>& counts() const noexcept { return counts_; }
  std::int64_t total() const noexcept { return total_; }
  Index size() const noexcept { return static_cast<Index>(counts_.size()); }

  friend bool operator==(const DiscreteAllocation&, const DiscreteAllocation&) = default;

 private:
  std::vector<std::int64_t> counts_;
  std::int64_t total_;
};

/// Partials of a layer's outputs: d_dy(k, j) = dz_k/dy_j and, when the layer
/// is budget-aware, d_dc(k) = dz_k/dC.
struct Jacobian {
  Matrix d_dy;
  std::optional<Vector> d_dc;
};

/// A linear sum constraint over a subset of entities.
struct RegionConstraint {
  std::string id;
  std::vector<Index> members;
  double lower = 0.0;
  double upper = 0.0;
};

struct FeasibilityReport {
  bool feasible = true;
  double sum_residual = 0.0;
  std::vector<std::pair<Index, double>> bound_violations;
  std::vector<std::pair<std::string, double>> region_violations;
};

Vector normalize_discrete(const DiscreteAllocation& a);

FeasibilityReport check_feasibility(const Vector& z, const BoundSpec& b,
                                    std::span<const RegionConstraint> regions = {},
                                    double tol = kFeasibilityTol);

/// Rounds a fraction-valued allocation to `total` integer units.
///
/// Integer bounds are ceil(total*lower/budget) and floor(total*upper/budget).
/// The result minimises the Manhattan distance sum_k |counts_k - t_k| with
/// t_k = total*z_k/budget. Seeded at the clamped floors and completed with
/// unit moves of least marginal cost, which is exact for this separable
/// convex objective. Ties go to the lowest index.
DiscreteAllocation round_to_discrete(const Vector& z, std::int64_t total, const BoundSpec& b);

using VectorFunction = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian (f(y + h e_j) - f(y - h e_j)) / 2h, one column per input.
Jacobian finite_diff_jacobian(const VectorFunction& f, const Vector& y,
                              double step = kFiniteDiffStep);

/// Central difference of a budget-parameterised map with respect to the budget.
Vector finite_diff_budget(const std::function<Vector(double)>& f, double budget,
                          double step = kFiniteDiffStep);

using MatrixFunction = std::function<Matrix(const Vector&)>;

/// Kink test for gradient checks: true when moving any single input by
/// +-radius changes the analytic Jacobian by at most `tol` relative to its
/// size. Piecewise maps (clamping, min/max selection) fail this at points
/// where a central difference would straddle a switch.
bool jacobian_locally_smooth(const MatrixFunction& jacobian, const Vector& y,
                             double radius = 10.0 * kFiniteDiffStep, double tol = 1e-3);

/// Norm-wise relative error max|a - n| / max(floor, max|n|), the metric used by
/// every gradient check in the project.
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1.0);

}  // namespace alloc
