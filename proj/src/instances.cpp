#include "alloc_layers/instances.hpp"

#include <algorithm>
#include <cmath>

#include "alloc_layers/cs_layer.hpp"

namespace alloc::instances {

namespace {

Vector random_lower(Rng& rng, Index n, double budget, double max_fraction) {
  Vector w(n);
  for (Index k = 0; k < n; ++k) w[k] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
  const double total = w.sum();
  if (total <= 0.0) return Vector::Zero(n);
  return w * (rng.uniform(0.0, max_fraction) * budget / total);
}

}  // namespace

BoundSpec random_strict_bounds(Rng& rng, Index n, double budget) {
  const Vector lower = random_lower(rng, n, budget, 0.9);
  Vector t(n);
  for (Index k = 0; k < n; ++k) t[k] = rng.uniform(0.02, 1.0);
  Vector upper(n);
  for (int attempt = 0;; ++attempt) {
    for (Index k = 0; k < n; ++k) upper[k] = std::min(budget, lower[k] + (budget - lower[k]) * t[k]);
    if (upper.sum() > budget * (1.0 + 1e-9) && (upper.array() > lower.array()).all()) break;
    t = (t.array() + 1.0) / 2.0;
    if (attempt > 200) {
      upper.setConstant(budget);
      break;
    }
  }
  return BoundSpec(lower, upper, budget);
}

BoundSpec random_cs_bounds(Rng& rng, Index n, double budget) {
  for (;;) {
    const Vector lower = random_lower(rng, n, budget, 0.5);
    const double free_mass = budget - lower.sum();
    const double nn = static_cast<double>(n);
    const double top = rng.uniform((2.0 * nn - 1.0) / (nn * nn), 1.0);
    const double bottom = std::max(0.0, (nn * top - 1.0) / (nn - 1.0));
    Vector upper(n);
    for (Index k = 0; k < n; ++k) upper[k] = std::min(budget, lower[k] + rng.uniform(bottom, top) * free_mass);
    try {
      BoundSpec b(lower, upper, budget);
      const auto ctx = cs::build_context(b);
      if (ctx.mode == cs::Mode::kRegular) return b;
    } catch (const Error&) {
      // resample
    }
  }
}

Vector random_box_point(Rng& rng, const BoundSpec& b) {
  Vector y(b.size());
  for (Index k = 0; k < b.size(); ++k) y[k] = rng.uniform(b.lower()[k], b.upper()[k]);
  return y;
}

Vector random_feasible_point(Rng& rng, const BoundSpec& b) {
  const Vector y = random_box_point(rng, b);
  const double s = y.sum(), c = b.budget();
  Vector z;
  if (s > c) {
    const double alpha = (c - b.lower_mass()) / (s - b.lower_mass());
    z = b.lower() + alpha * (y - b.lower());
  } else {
    const double beta = (b.upper_mass() - c) / (b.upper_mass() - s);
    z = b.upper() - beta * (b.upper() - y);
  }
  return z.cwiseMax(b.lower()).cwiseMin(b.upper());
}

}  // namespace alloc::instances
