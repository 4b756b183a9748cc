#include <doctest.h>

#include <cmath>
#include <functional>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/cs_layer.hpp"
#include "alloc_layers/region_tree.hpp"
#include "alloc_layers/rng.hpp"

using namespace alloc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

RegionTree two_region_tree(Method top = Method::kApprOpt, Method leaves = Method::kApprOpt) {
  RegionNode g1{"G1", 0.4, 0.8, leaves, {0, 1, 2}, {}};
  RegionNode g2{"G2", 0.2, 0.6, leaves, {3, 4}, {}};
  RegionNode root{"root", 1.0, 1.0, top, {}, {g1, g2}};
  return RegionTree(root, BoundSpec::uniform(5, 0.0, 0.5));
}

// Random tree over n entities: depth <= 3, loose but feasible bounds.
RegionNode random_node(Rng& rng, std::vector<Index> members, int depth, const std::string& id, Method method) {
  RegionNode node;
  node.id = id;
  node.method = method;
  const double share = static_cast<double>(members.size());
  node.lower = 0.0;
  node.upper = 1.0;
  if (depth >= 3 || members.size() < 3 || rng.uniform() < 0.3) {
    node.entities = std::move(members);
    (void)share;
    return node;
  }
  const std::size_t parts = 2 + rng.below(std::min<std::uint64_t>(3, members.size() - 1));
  std::vector<std::vector<Index>> groups(parts);
  for (std::size_t i = 0; i < members.size(); ++i) groups[i < parts ? i : rng.below(parts)].push_back(members[i]);
  for (std::size_t g = 0; g < parts; ++g) {
    node.children.push_back(random_node(rng, groups[g], depth + 1, id + "." + std::to_string(g), method));
  }
  return node;
}

RegionTree random_tree(Rng& rng, Index n, Method method) {
  std::vector<Index> members(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) members[static_cast<std::size_t>(k)] = k;
  RegionNode root = random_node(rng, members, 0, "r", method);
  root.lower = root.upper = 1.0;
  const BoundSpec b = BoundSpec::uniform(n, 0.0, std::min(1.0, 3.0 / static_cast<double>(n)));
  // Region bounds: a window around the member-proportional share.
  std::function<void(RegionNode&, bool)> assign = [&](RegionNode& node, bool is_root) {
    if (!is_root) {
      const double share = static_cast<double>(RegionTree::members(node).size()) / static_cast<double>(n);
      node.lower = share * rng.uniform(0.3, 0.9);
      node.upper = std::min(1.0, share * rng.uniform(1.1, 2.0));
    }
    for (auto& c : node.children) assign(c, false);
  };
  assign(root, true);
  return RegionTree(root, b);
}

}  // namespace

TEST_CASE("validate_tree") {
  const RegionTree tree = two_region_tree();
  CHECK(tree.layout().entity_pins.size() == 5);
  CHECK(tree.layout().region_pins.size() == 2);
  CHECK(tree.layout().total() == 7);
  CHECK(tree.layout().region_ids == std::vector<std::string>{"G1", "G2"});

  const RegionTree flat = RegionTree::flat(BoundSpec::simplex(4));
  CHECK(flat.layout().total() == 4);
  CHECK(flat.is_flat());

  RegionNode a{"A", 0, 1, Method::kApprOpt, {0, 1}, {}};
  RegionNode b{"B", 0, 1, Method::kApprOpt, {1, 2}, {}};
  RegionNode root{"root", 1, 1, Method::kApprOpt, {}, {a, b}};
  try {
    validate_tree(root, BoundSpec::simplex(3));
    FAIL("expected TreeError");
  } catch (const TreeError& e) {
    CHECK(e.node_id() == "B");
  }

  RegionNode tight{"T", 0.0, 0.1, Method::kApprOpt, {0, 1}, {}};
  RegionNode rest{"R", 0.0, 0.2, Method::kApprOpt, {2}, {}};
  RegionNode root2{"root", 1, 1, Method::kApprOpt, {}, {tight, rest}};
  CHECK_THROWS_AS(validate_tree(root2, BoundSpec::simplex(3)), TreeError);

  RegionNode partial{"P", 0, 1, Method::kApprOpt, {0, 1}, {}};
  RegionNode root3{"root", 1, 1, Method::kApprOpt, {}, {partial}};
  CHECK_THROWS_AS(validate_tree(root3, BoundSpec::simplex(3)), TreeError);
}

TEST_CASE("nested_forward identity on feasible pins") {
  const RegionTree tree = two_region_tree();
  const Vector pins = vec({0.1, 0.2, 0.2, 0.3, 0.2, 0.5, 0.5});
  const auto r = nested_forward(pins, tree);
  CHECK(r.z == pins.head(5));
}

TEST_CASE("flat tree matches the plain layer") {
  Rng rng(3);
  const BoundSpec b(vec({0.1, 0.0, 0.05, 0.0}), vec({0.6, 0.5, 0.7, 0.4}));
  for (int t = 0; t < 200; ++t) {
    Vector x(4);
    for (Index k = 0; k < 4; ++k) x[k] = rng.uniform(-1.0, 1.5);
    const auto pre = appropt::prescale(x, b);
    const auto layer = appropt::appropt_forward(pre.y, b);
    const auto nested = nested_forward(x, RegionTree::flat(b));
    CHECK(nested.z == layer.z);
    CHECK(max_relative_error(nested.jacobian.d_dy, layer.jacobian.d_dy * pre.jacobian) <= 1e-15);

    const auto ctx = cs::build_context(b);
    const Vector zc = cs::cs_forward(cs::squash_outputs(x), ctx);
    CHECK(nested_forward(x, RegionTree::flat(b, Method::kCs)).z == zc);
  }
}

TEST_CASE("cs leaves fail at budgets where they are not applicable") {
  const RegionTree tree = two_region_tree(Method::kApprOpt, Method::kCs);
  // Region pins drive G2 towards its lower bound 0.2, where its entity layer
  // would need negative coefficients.
  const Vector pins = vec({0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0});
  try {
    nested_forward(pins, tree);
    FAIL("expected CsConditionViolated");
  } catch (const CsConditionViolated& e) {
    CHECK(e.node_id() == "G2");
  }
}

TEST_CASE("nested_forward feasibility") {
  for (Method method : {Method::kApprOpt, Method::kCs}) {
    const RegionTree tree = two_region_tree(method, Method::kApprOpt);
    Rng rng(17);
    for (int t = 0; t < 2000; ++t) {
      Vector pins(7);
      for (Index k = 0; k < 7; ++k) pins[k] = rng.uniform(-1.0, 1.0);
      const auto r = nested_forward(pins, tree);
      CHECK(check_feasibility(r.z, tree).feasible);
      CHECK(std::abs(r.z.sum() - 1.0) <= 1e-12);
      CHECK(r.nodes.size() == 3);
      for (const auto& node : r.nodes) {
        CHECK(std::abs(node.mass.sum() - node.budget) <= 1e-12);
        if (node.method != Method::kApprOpt) continue;
        const auto n_free = (node.d_dc.array() != 0.0).count();
        for (Index c = 0; c < node.d_dc.size(); ++c) {
          CHECK((node.d_dc[c] == 0.0 || node.d_dc[c] == 1.0 / static_cast<double>(n_free)));
        }
      }
    }
  }
}

TEST_CASE("nested_forward jacobian matches finite differences") {
  for (Method method : {Method::kApprOpt, Method::kCs}) {
    const RegionTree tree = two_region_tree(method, Method::kApprOpt);
    Rng rng(31);
    double worst = 0.0;
    int checked = 0;
    for (int t = 0; t < 1500; ++t) {
      Vector pins(7);
      for (Index k = 0; k < 7; ++k) pins[k] = rng.uniform(-1.0, 1.0);
      const auto r = nested_forward(pins, tree);
      const auto jac_at = [&](const Vector& p) { return nested_forward(p, tree).jacobian.d_dy; };
      if (!jacobian_locally_smooth(jac_at, pins)) continue;
      const auto fd = finite_diff_jacobian([&](const Vector& p) { return nested_forward(p, tree).z; }, pins);
      worst = std::max(worst, max_relative_error(r.jacobian.d_dy, fd.d_dy));
      ++checked;
    }
    CHECK(checked > 300);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("random trees stay feasible") {
  Rng rng(101);
  for (int t = 0; t < 1000; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(19));
    const RegionTree tree = random_tree(rng, n, Method::kApprOpt);
    Vector pins(tree.layout().total());
    for (Index k = 0; k < pins.size(); ++k) pins[k] = rng.uniform(-1.0, 1.0);
    const auto r = nested_forward(pins, tree);
    CHECK(check_feasibility(r.z, tree).feasible);
    CHECK(std::abs(r.z.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("problem files") {
  const std::string text = R"({
  "budget": 1.0,
  "lower": [0, 0, 0, 0, 0],
  "upper": [0.5, 0.5, 0.5, 0.5, 0.5],
  "tree": {"id": "root", "children": [
    {"id": "G1", "lower": 0.4, "upper": 0.8, "method": "appropt", "entities": [0, 1, 2]},
    {"id": "G2", "lower": 0.2, "upper": 0.6, "method": "cs", "entities": [3, 4]}
  ]}
})";
  const Problem p = parse_problem(text);
  REQUIRE(p.tree);
  CHECK(p.tree->layout().total() == 7);
  CHECK(p.tree->root().children[1].method == Method::kCs);

  const Problem again = parse_problem(problem_to_json(p.bounds, &*p.tree));
  CHECK(again.bounds.upper() == p.bounds.upper());
  CHECK(again.tree->root().children[0].entities == std::vector<Index>{0, 1, 2});

  try {
    parse_problem("{\n  \"budget\": 1,\n  \"lower\": [0, 0\n}", "bad.json");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() >= 3);
  }
  try {
    parse_problem(R"({"lower": [0, 0], "upper": [1, 1], "tree": {"id": "root", "children": [
      {"id": "A", "entities": [0, 1]}, {"id": "B", "entities": [1]}]}})");
    FAIL("expected TreeError");
  } catch (const TreeError& e) {
    CHECK(e.node_id() == "B");
  }
}
