#include "alloc_layers/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace alloc {

namespace {

constexpr double kSumSlack = 1e-12;

std::string describe(Index k, double value) {
  std::ostringstream os;
  os << "[" << k << "] = " << value;
  return os.str();
}

}  // namespace

void require_allocation(const Vector& v, const char* what) {
  if (v.size() == 0) throw DimensionMismatch(std::string(what) + " must have at least one entry");
  for (Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k])) throw Error(std::string(what) + " has a non-finite entry" + describe(k, v[k]));
  }
}

BoundSpec::BoundSpec(Vector lower, Vector upper, double budget)
    : BoundSpec(std::move(lower), std::move(upper), budget, false) {}

BoundSpec::BoundSpec(Vector lower, Vector upper, double budget, bool allow_upper_above_budget)
    : lower_(std::move(lower)), upper_(std::move(upper)), budget_(budget) {
  if (lower_.size() == 0) throw InvalidBounds("bounds must cover at least one entity");
  if (lower_.size() != upper_.size()) {
    throw DimensionMismatch("lower has " + std::to_string(lower_.size()) + " entries, upper has " +
                            std::to_string(upper_.size()));
  }
  if (!std::isfinite(budget_) || budget_ < 0.0) throw InvalidBounds("budget must be finite and >= 0");
  for (Index k = 0; k < lower_.size(); ++k) {
    if (!std::isfinite(lower_[k]) || !std::isfinite(upper_[k])) {
      throw InvalidBounds("non-finite bound at entity " + std::to_string(k));
    }
    if (lower_[k] < 0.0) throw InvalidBounds("lower" + describe(k, lower_[k]) + " is negative");
    if (lower_[k] > upper_[k]) {
      throw InvalidBounds("lower" + describe(k, lower_[k]) + " exceeds upper" + describe(k, upper_[k]));
    }
    if (!allow_upper_above_budget && upper_[k] > budget_ * (1.0 + kSumSlack) + kSumSlack) {
      throw InvalidBounds("upper" + describe(k, upper_[k]) + " exceeds the budget " + std::to_string(budget_));
    }
  }
  const double slack = kSumSlack * std::max(1.0, budget_);
  if (lower_.sum() > budget_ + slack) {
    throw InvalidBounds("sum of lower bounds " + std::to_string(lower_.sum()) + " exceeds the budget " +
                        std::to_string(budget_));
  }
  if (upper_.sum() < budget_ - slack) {
    throw InvalidBounds("sum of upper bounds " + std::to_string(upper_.sum()) + " is below the budget " +
                        std::to_string(budget_));
  }
}

BoundSpec BoundSpec::uniform(Index n, double lower, double upper, double budget) {
  return BoundSpec(Vector::Constant(n, lower), Vector::Constant(n, upper), budget);
}

BoundSpec BoundSpec::simplex(Index n, double budget) {
  return BoundSpec(Vector::Zero(n), Vector::Constant(n, budget), budget);
}

BoundSpec BoundSpec::subproblem(Vector lower, Vector upper, double budget) {
  return BoundSpec(std::move(lower), std::move(upper), budget, true);
}

BoundSpec BoundSpec::with_budget(double budget) const { return BoundSpec(lower_, upper_, budget); }

DiscreteAllocation::DiscreteAllocation(std::vector<std::int64_t> counts, std::int64_t total)
    : counts_(std::move(counts)), total_(total) {
  if (counts_.empty()) throw DimensionMismatch("discrete allocation needs at least one entity");
  if (total_ <= 0) throw InvalidBounds("discrete allocation total must be positive");
  std::int64_t sum = 0;
  for (auto c : counts_) {
    if (c < 0) throw InvalidBounds("discrete allocation counts must be non-negative");
    sum += c;
  }
  if (sum != total_) {
    throw InvalidBounds("discrete allocation counts sum to " + std::to_string(sum) + ", expected " +
                        std::to_string(total_));
  }
}

Vector normalize_discrete(const DiscreteAllocation& a) {
  Vector z(a.size());
  const double total = static_cast<double>(a.total());
  for (Index k = 0; k < a.size(); ++k) z[k] = static_cast<double>(a.counts()[static_cast<std::size_t>(k)]) / total;
  return z;
}

FeasibilityReport check_feasibility(const Vector& z, const BoundSpec& b,
                                    std::span<const RegionConstraint> regions, double tol) {
  if (z.size() != b.size()) {
    throw DimensionMismatch("allocation has " + std::to_string(z.size()) + " entries, bounds cover " +
                            std::to_string(b.size()));
  }
  FeasibilityReport report;
  report.sum_residual = std::abs(z.sum() - b.budget());
  for (Index k = 0; k < z.size(); ++k) {
    const double below = b.lower()[k] - z[k];
    const double above = z[k] - b.upper()[k];
    if (below > tol) report.bound_violations.emplace_back(k, below);
    else if (above > tol) report.bound_violations.emplace_back(k, above);
  }
  for (const auto& region : regions) {
    double mass = 0.0;
    for (Index k : region.members) {
      if (k < 0 || k >= z.size()) throw DimensionMismatch("region '" + region.id + "' references entity " + std::to_string(k));
      mass += z[k];
    }
    const double amount = std::max(region.lower - mass, mass - region.upper);
    if (amount > tol) report.region_violations.emplace_back(region.id, amount);
  }
  report.feasible = !(report.sum_residual > tol) && report.bound_violations.empty() &&
                    report.region_violations.empty() && z.allFinite();
  return report;
}

DiscreteAllocation round_to_discrete(const Vector& z, std::int64_t total, const BoundSpec& b) {
  if (z.size() != b.size()) throw DimensionMismatch("allocation and bounds differ in length");
  if (total <= 0) throw InvalidBounds("total must be positive");
  require_allocation(z, "continuous allocation");

  const Index n = z.size();
  const double scale = static_cast<double>(total) / b.budget();
  std::vector<std::int64_t> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n)),
      counts(static_cast<std::size_t>(n));
  std::vector<double> target(static_cast<std::size_t>(n));
  std::int64_t lo_sum = 0, hi_sum = 0, sum = 0;
  for (Index k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    lo[i] = static_cast<std::int64_t>(std::ceil(b.lower()[k] * scale - 1e-9));
    hi[i] = static_cast<std::int64_t>(std::floor(b.upper()[k] * scale + 1e-9));
    target[i] = z[k] * scale;
    counts[i] = std::clamp(static_cast<std::int64_t>(std::floor(target[i])), lo[i], std::max(lo[i], hi[i]));
    lo_sum += lo[i];
    hi_sum += hi[i];
    sum += counts[i];
  }
  if (lo_sum > total || hi_sum < total) {
    throw InfeasibleRounding("integer bounds admit totals in [" + std::to_string(lo_sum) + ", " +
                             std::to_string(hi_sum) + "], cannot place " + std::to_string(total));
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (lo[i] > hi[i]) {
      throw InfeasibleRounding("entity " + std::to_string(i) + " has no integer count within its bounds");
    }
  }

  auto cost_up = [&](std::size_t i) {
    return std::abs(static_cast<double>(counts[i] + 1) - target[i]) -
           std::abs(static_cast<double>(counts[i]) - target[i]);
  };
  auto cost_down = [&](std::size_t i) {
    return std::abs(static_cast<double>(counts[i] - 1) - target[i]) -
           std::abs(static_cast<double>(counts[i]) - target[i]);
  };

  while (sum < total) {
    std::size_t best = counts.size();
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] >= hi[i]) continue;
      const double c = cost_up(i);
      if (c < best_cost) {
        best_cost = c;
        best = i;
      }
    }
    ++counts[best];
    ++sum;
  }
  while (sum > total) {
    std::size_t best = counts.size();
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] <= lo[i]) continue;
      const double c = cost_down(i);
      if (c < best_cost) {
        best_cost = c;
        best = i;
      }
    }
    --counts[best];
    --sum;
  }
  return DiscreteAllocation(std::move(counts), total);
}

Jacobian finite_diff_jacobian(const VectorFunction& f, const Vector& y, double step) {
  if (!(step > 0.0)) throw Error("finite difference step must be positive");
  Jacobian jac;
  Vector probe = y;
  for (Index j = 0; j < y.size(); ++j) {
    Vector plus, minus;
    try {
      probe[j] = y[j] + step;
      plus = f(probe);
      probe[j] = y[j] - step;
      minus = f(probe);
    } catch (const std::exception& e) {
      throw FiniteDifferenceFailure("function failed at perturbed input " + std::to_string(j) + ": " + e.what());
    }
    probe[j] = y[j];
    if (j == 0) jac.d_dy = Matrix::Zero(plus.size(), y.size());
    if (plus.size() != jac.d_dy.rows() || minus.size() != jac.d_dy.rows()) {
      throw FiniteDifferenceFailure("function output changed length under perturbation");
    }
    jac.d_dy.col(j) = (plus - minus) / (2.0 * step);
  }
  return jac;
}

Vector finite_diff_budget(const std::function<Vector(double)>& f, double budget, double step) {
  if (!(step > 0.0)) throw Error("finite difference step must be positive");
  try {
    return (f(budget + step) - f(budget - step)) / (2.0 * step);
  } catch (const std::exception& e) {
    throw FiniteDifferenceFailure(std::string("function failed at perturbed budget: ") + e.what());
  }
}

bool jacobian_locally_smooth(const MatrixFunction& jacobian, const Vector& y, double radius, double tol) {
  const Matrix center = jacobian(y);
  const double scale = std::max(1.0, center.cwiseAbs().maxCoeff());
  Vector probe = y;
  for (Index j = 0; j < y.size(); ++j) {
    for (double sign : {-1.0, 1.0}) {
      probe[j] = y[j] + sign * radius;
      Matrix moved;
      try {
        moved = jacobian(probe);
      } catch (const Error&) {
        return false;
      }
      if ((moved - center).cwiseAbs().maxCoeff() > tol * scale) return false;
    }
    probe[j] = y[j];
  }
  return true;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionMismatch("gradient check shapes differ");
  }
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(floor, numeric.cwiseAbs().maxCoeff());
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace alloc
