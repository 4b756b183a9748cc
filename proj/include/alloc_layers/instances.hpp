#pragma once

// Random problem instances shared by the test suites and the CLI.

#include "alloc_layers/core.hpp"
#include "alloc_layers/rng.hpp"

namespace alloc::instances {

/// Bounds satisfying the strict ApprOpt requirements:
/// 0 <= lower_k < upper_k <= C and sum lower < C < sum upper.
BoundSpec random_strict_bounds(Rng& rng, Index n, double budget = 1.0);

/// Bounds whose constrained-softmax coefficients are all non-negative.
BoundSpec random_cs_bounds(Rng& rng, Index n, double budget = 1.0);

/// A point inside the box [lower, upper] (not on the simplex).
Vector random_box_point(Rng& rng, const BoundSpec& b);

/// A point inside the box with sum equal to the budget.
Vector random_feasible_point(Rng& rng, const BoundSpec& b);

}  // namespace alloc::instances
