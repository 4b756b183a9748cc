#pragma once

// Constrained softmax: a closed-form layer mapping squashed actor outputs
// y in (0, 1]^n onto {z : sum z = C, lower <= z <= upper}.
//
//   z_k = lower_k + (C - sum lower) * (y_k + eps_k) / sum_i (y_i + eps_i)
//
// with eps computed from the reduced upper bounds
// u'_k = (upper_k - lower_k) / (C - sum lower):
//
//   eps_k = u'_k (n - 1) / (sum u' - 1) - 1.
//
// The layer is only valid when every eps_k >= 0.

#include "alloc_layers/core.hpp"

namespace alloc::cs {

/// How the layer maps inputs for a given context.
enum class Mode {
  kRegular,     ///< closed form above
  kSaturated,   ///< sum u' == 1 (sum upper == C): z = upper for every y
  kDegenerate,  ///< C == sum lower: z = lower for every y
  kSingle,      ///< n == 1: z = C
};

/// Absolute band around sum u' == 1 that is routed to the saturated case.
inline constexpr double kSaturationBand = 1e-9;
/// Coefficients in [-kEpsilonRoundoff, 0) are rounding noise around an exact
/// zero and are snapped to 0 instead of rejected.
inline constexpr double kEpsilonRoundoff = 1e-12;
/// Inputs below this are clamped before exponentiation so y stays positive.
inline constexpr double kSquashFloor = -700.0;

struct CsContext {
  Mode mode = Mode::kRegular;
  Vector epsilon;
  Vector reduced_upper;
  Vector lower;
  Vector upper;
  double min_mass = 0.0;
  double budget = 1.0;

  Index size() const noexcept { return lower.size(); }
};

/// y_k = exp(min(0, x_k)), with x clamped below at kSquashFloor.
Vector squash_outputs(const Vector& x);

/// Diagonal of dy/dx for squash_outputs (0 where x_k >= 0).
Vector squash_derivative(const Vector& x);

/// Builds epsilon and the reduced bounds. Throws CsConditionViolated naming
/// the first negative epsilon; `node_id` is carried into that error.
CsContext build_context(const BoundSpec& b, const std::string& node_id = {});

Vector cs_forward(const Vector& y, const CsContext& ctx);

/// Analytic dz/dy and dz/dC. The budget column differentiates through the
/// dependence of epsilon on C as well as the (C - sum lower) scale factor.
Jacobian cs_jacobian(const Vector& y, const CsContext& ctx);

}  // namespace alloc::cs
