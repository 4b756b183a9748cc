#pragma once

// Randomised verification routines shared by the CLI and the acceptance suite.

#include <cstdint>
#include <string>

#include "alloc_layers/core.hpp"
#include "alloc_layers/region_tree.hpp"

namespace alloc::checks {

/// Five entities under two regions: G1 = {0, 1, 2} in [0.4, 0.8] and
/// G2 = {3, 4} in [0.2, 0.6], entity bounds [0, 0.5], budget 1.
RegionTree two_region_example(Method top = Method::kApprOpt, Method leaves = Method::kApprOpt);

enum class GradTarget { kCs, kApprOpt, kTree, kNet };

/// "cs", "appropt", "tree" or "net".
GradTarget parse_grad_target(const std::string& name);
const char* grad_target_name(GradTarget t) noexcept;

/// Error bound a target must meet.
double grad_tolerance(GradTarget t) noexcept;

struct GradcheckReport {
  std::size_t trials = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  ///< samples next to a kink
  double max_error = 0.0;   ///< worst max_relative_error over checked samples
  bool passed() const noexcept;
  GradTarget target = GradTarget::kCs;
};

/// Compares analytic and central finite-difference derivatives on `trials`
/// random samples:
///   cs       constrained softmax, dz/dy and dz/dC
///   appropt  ApprOpt, dz/dy and dz/dC
///   tree     nested layers on two_region_example, dz/dpins
///   net      actor objective through network and layer, d/dparams
GradcheckReport gradcheck(GradTarget target, std::size_t trials, std::uint64_t seed);

}  // namespace alloc::checks
