#pragma once

// Approximate OptLayer: projects bound-respecting inputs y onto
// {z : sum z = C, lower <= z <= upper} by repeatedly solving the
// equality-only projection z_k = y_k + (C' - sum_{j in free} y_j) / n'
// over the free set and clamping violators, first at lower bounds
// (LOWER phase) and then at upper bounds (UPPER phase). Clamped outputs
// stay clamped. The Jacobian falls out of the final free set:
// dz_k/dy_j = delta_kj - 1/n' and dz_k/dC = 1/n' for free k, zero otherwise.

#include <optional>
#include <vector>

#include "alloc_layers/core.hpp"

namespace alloc::appropt {

enum class Phase { kLower = 0, kUpper = 1, kDone = 2 };

const char* phase_name(Phase p) noexcept;

/// One pass of the while loop: which indices were clamped and what remained.
struct ClampStep {
  Phase phase = Phase::kLower;
  std::vector<Index> clamped;
  Index n_unclamped = 0;
  double remaining_budget = 0.0;
  double free_upper_mass = 0.0;
};

struct ClampTrace {
  std::vector<Index> fixed;      ///< entities with lower == upper, removed up front
  std::vector<Index> unclamped;  ///< final free set
  Index n_unclamped = 0;
  double remaining_budget = 0.0;
  std::vector<ClampStep> phase_log;
};

struct Options {
  /// Record a ClampTrace. The invariant checks run either way.
  bool keep_trace = false;
  /// Enforce upper_k <= C. Region-tree sub-problems switch this off: no
  /// step of the feasibility argument needs it and outputs never exceed C
  /// when lower bounds are non-negative.
  bool require_upper_within_budget = true;
};

struct Result {
  Vector z;
  Jacobian jacobian;  ///< d_dc is always populated
  std::vector<bool> clamped;
  int iterations = 0;
  std::optional<ClampTrace> trace;
};

struct PrescaleResult {
  Vector y;
  Matrix jacobian;  ///< dy/dx
  bool scaled = false;
  bool midpoint = false;
};

/// Maps an arbitrary actor output into the box [lower, upper]. Inputs already
/// inside the box pass through unchanged; otherwise
/// y_k = lower_k + (upper_k - lower_k)(x_k - min x)/(max x - min x),
/// or the box midpoint when x is constant.
PrescaleResult prescale(const Vector& x, const BoundSpec& b);

/// Runs the clamping projection. Throws PreconditionViolated naming the
/// failed requirement, or InternalAssertion if an invariant of the
/// termination/feasibility argument is ever observed broken.
Result appropt_forward(const Vector& y, const BoundSpec& b, const Options& options = {});

}  // namespace alloc::appropt
