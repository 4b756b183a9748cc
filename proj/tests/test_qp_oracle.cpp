#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/instances.hpp"
#include "alloc_layers/qp_oracle.hpp"
#include "alloc_layers/rng.hpp"

using namespace alloc;
using namespace alloc::qp;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

RegionTree two_region_tree() {
  RegionNode g1{"G1", 0.4, 0.8, Method::kApprOpt, {0, 1, 2}, {}};
  RegionNode g2{"G2", 0.2, 0.6, Method::kApprOpt, {3, 4}, {}};
  RegionNode root{"root", 1.0, 1.0, Method::kApprOpt, {}, {g1, g2}};
  return RegionTree(root, BoundSpec::uniform(5, 0.0, 0.5));
}

// Best objective over the grid {z : z_k = i * step, z_0 + z_1 + z_2 = C}.
double grid_objective(const Vector& y, const BoundSpec& b, double step) {
  double best = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::lround(b.budget() / step));
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; i + j <= steps; ++j) {
      const Vector z = vec({i * step, j * step, b.budget() - (i + j) * step});
      bool ok = true;
      for (Index k = 0; k < 3; ++k) ok = ok && z[k] >= b.lower()[k] - 1e-12 && z[k] <= b.upper()[k] + 1e-12;
      if (ok) best = std::min(best, (z - y).squaredNorm());
    }
  }
  return best;
}

}  // namespace

TEST_CASE("exact_project worked examples") {
  const BoundSpec b1(vec({0.2, 0, 0}), vec({1, 1, 1}));
  const auto p1 = exact_project(vec({0.2, 0.6, 0.6}), b1);
  CHECK((p1.z - vec({0.2, 0.4, 0.4})).norm() <= 1e-12);
  CHECK(p1.certificate.shift == doctest::Approx(-0.2));
  CHECK(p1.certificate.max_residual() <= 1e-12);

  const auto p2 = exact_project(vec({0.25, 0.25, 0.5}), BoundSpec::simplex(3));
  CHECK(p2.z == vec({0.25, 0.25, 0.5}));
  CHECK(p2.certificate.lambda == 0.0);
  CHECK(p2.certificate.alpha.isZero(0.0));
  CHECK(p2.certificate.beta.isZero(0.0));

  const auto p3 = exact_project(vec({0.5, 0.4, 0.0}), BoundSpec(vec({0, 0, 0}), vec({0.5, 0.4, 1.0})));
  CHECK((p3.z - vec({0.5, 0.4, 0.1})).norm() <= 1e-12);
  CHECK(p3.certificate.shift == doctest::Approx(0.1));
}

TEST_CASE("exact_project certificates on random instances") {
  Rng rng(99);
  for (int t = 0; t < 3000; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(60));
    const BoundSpec b = instances::random_strict_bounds(rng, n);
    Vector y(n);
    for (Index k = 0; k < n; ++k) y[k] = rng.uniform(-0.5, 1.5);
    const auto p = exact_project(y, b);
    CHECK(check_feasibility(p.z, b, {}, 1e-10).feasible);
    CHECK(p.certificate.max_residual() <= 1e-8);
    CHECK(p.certificate.alpha.minCoeff() >= 0.0);
    CHECK(p.certificate.beta.minCoeff() >= 0.0);
  }
}

TEST_CASE("exact_project beats a grid search") {
  Rng rng(4);
  for (int t = 0; t < 40; ++t) {
    const BoundSpec b = instances::random_strict_bounds(rng, 3);
    Vector y(3);
    for (Index k = 0; k < 3; ++k) y[k] = rng.uniform(-0.2, 1.2);
    const double exact = (exact_project(y, b).z - y).squaredNorm();
    const double grid = grid_objective(y, b, 1e-3);
    CHECK(exact <= grid + 1e-12);
    // A grid point within one step per coordinate of the optimum exists.
    CHECK(grid - exact <= 2.0 * 3.0 * 1e-3 * 2.0);
  }
}

TEST_CASE("projection_gap") {
  const BoundSpec b1(vec({0.2, 0, 0}), vec({1, 1, 1}));
  CHECK(std::abs(projection_gap(vec({0.2, 0.6, 0.6}), b1).gap) <= 1e-12);
  CHECK(projection_gap(vec({0.25, 0.25, 0.5}), BoundSpec::simplex(3)).gap == 0.0);

  Rng rng(6);
  for (int t = 0; t < 2000; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(50));
    const BoundSpec b = instances::random_strict_bounds(rng, n);
    CHECK(projection_gap(instances::random_box_point(rng, b), b).gap >= -1e-12);
  }

  std::ostringstream csv;
  projection_gap_batch(csv, 1, 5, 10);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "seed,n,gap,appropt_distance,exact_distance");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("violation_cost") {
  const RegionTree flat = RegionTree::flat(BoundSpec::simplex(2));
  const auto v0 = violation_cost(vec({0.5, 0.5}), flat);
  CHECK(v0.cost == 0.0);
  CHECK(v0.gradient.isZero(0.0));
  CHECK(violation_cost(vec({0.5, 0.6}), flat).cost == doctest::Approx(0.1));

  const std::vector<RegionConstraint> regions{{"G1", {0}, 0.2, 0.4}};
  const auto v2 = violation_cost(vec({0.5, 0.6}), regions);
  CHECK(v2.cost == doctest::Approx(0.2));
  CHECK(v2.gradient == vec({2.0, 1.0}));

  const auto below = violation_cost(vec({0.3, 0.3}), flat);
  CHECK(below.cost == doctest::Approx(0.4));
  CHECK(below.gradient == vec({-1.0, -1.0}));
}

TEST_CASE("violation_cost vanishes exactly on the feasible set") {
  const RegionTree tree = two_region_tree();
  Rng rng(12);
  for (int t = 0; t < 3000; ++t) {
    Vector a(5);
    for (Index k = 0; k < 5; ++k) a[k] = rng.uniform(0.0, 0.45);
    if (t % 3 == 0) a /= a.sum();
    const bool feasible = check_feasibility(a, tree.bounds(), tree.region_constraints(), 0.0).feasible;
    CHECK(feasible == (violation_cost(a, tree).cost == 0.0));
  }
}

TEST_CASE("cp_project") {
  const RegionTree flat = RegionTree::flat(BoundSpec::simplex(2));
  const Vector p = cp_project(vec({0.6, 0.6}), flat);
  CHECK((p - vec({0.5, 0.5})).norm() <= 1e-12);

  const RegionTree tree = two_region_tree();
  const Vector ok = vec({0.1, 0.2, 0.2, 0.25, 0.25});
  CHECK(cp_project(ok, tree) == ok);

  Rng rng(21);
  for (int t = 0; t < 2000; ++t) {
    Vector a(5);
    for (Index k = 0; k < 5; ++k) a[k] = rng.uniform(-0.3, 1.0);
    const Vector z = cp_project(a, tree);
    CHECK(check_feasibility(z, tree).feasible);
    CHECK(violation_cost(z, tree).cost <= 1e-9);
  }
}
