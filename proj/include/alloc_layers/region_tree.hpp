#pragma once

// Hierarchical regional constraints built from nested local-constraint
// layers. Each node splits the budget it receives among its children
// (entities or sub-regions) with either constrained softmax or ApprOpt;
// a sub-region's share then becomes the budget of its own layer.
//
// Pins: the actor emits one raw value per entity followed by one per
// non-root region, in depth-first pre-order.

#include <iosfwd>
#include <string>
#include <vector>

#include "alloc_layers/core.hpp"

namespace alloc {

enum class Method { kCs, kApprOpt };

const char* method_name(Method m) noexcept;
Method parse_method(const std::string& name);

struct RegionNode {
  std::string id;
  double lower = 0.0;
  double upper = 1.0;
  Method method = Method::kApprOpt;
  std::vector<Index> entities;       ///< set for leaf groups
  std::vector<RegionNode> children;  ///< set for internal regions

  bool is_leaf() const noexcept { return children.empty(); }
  Index child_count() const noexcept {
    return is_leaf() ? static_cast<Index>(entities.size()) : static_cast<Index>(children.size());
  }
};

struct PinLayout {
  std::vector<Index> entity_pins;        ///< entity k reads pin entity_pins[k]
  std::vector<std::string> region_ids;   ///< non-root regions, pre-order
  std::vector<Index> region_pins;        ///< pin of region_ids[i]

  Index total() const noexcept { return static_cast<Index>(entity_pins.size() + region_pins.size()); }
};

/// Checks the partition and bound propagation; returns the pin layout.
/// Throws TreeError naming the offending node.
PinLayout validate_tree(const RegionNode& root, const BoundSpec& b);

/// A validated tree together with the entity bounds it constrains.
class RegionTree {
 public:
  RegionTree(RegionNode root, BoundSpec bounds);

  /// One region holding every entity: degenerates to a single layer.
  static RegionTree flat(BoundSpec bounds, Method method = Method::kApprOpt);

  const RegionNode& root() const noexcept { return root_; }
  const BoundSpec& bounds() const noexcept { return bounds_; }
  const PinLayout& layout() const noexcept { return layout_; }
  Index entity_count() const noexcept { return bounds_.size(); }
  bool is_flat() const noexcept { return root_.is_leaf(); }

  /// Bounds a region's share must respect: its own bounds intersected with
  /// what its children can absorb.
  std::pair<double, double> effective_interval(const RegionNode& node) const;

  /// Non-root region sum constraints with their declared bounds.
  std::vector<RegionConstraint> region_constraints() const;

  /// Region constraints plus one singleton region per entity bound.
  std::vector<RegionConstraint> all_constraints() const;

  /// Members of a node, in entity order of appearance.
  static std::vector<Index> members(const RegionNode& node);

  /// Every node uses `method`.
  RegionTree with_method(Method method) const;

 private:
  RegionNode root_;
  BoundSpec bounds_;
  PinLayout layout_;
};

FeasibilityReport check_feasibility(const Vector& z, const RegionTree& tree, double tol = kFeasibilityTol);

/// What one node's layer did during a nested evaluation.
struct NodeRecord {
  std::string id;
  Method method = Method::kApprOpt;
  double budget = 0.0;
  Vector mass;  ///< shares handed to the children
  Vector d_dc;  ///< d(mass)/d(budget) of this layer alone
};

struct NestedResult {
  Vector z;
  Jacobian jacobian;  ///< d_dy is n x pins; d_dc is dz/d(root budget)
  std::vector<NodeRecord> nodes;  ///< pre-order
};

/// Evaluates the nested layers top-down, depth first, children in order.
/// Throws CsConditionViolated carrying the node id when a CS node is not
/// applicable at the budget it receives.
NestedResult nested_forward(const Vector& pins, const RegionTree& tree);

/// Problem file: {"budget": C, "lower": [...], "upper": [...], "tree": {...}}.
/// "tree" is optional; nodes are {"id", "lower", "upper", "method",
/// "entities": [...] | "children": [...]}. Errors cite the line or node.
struct Problem {
  BoundSpec bounds;
  std::optional<RegionTree> tree;
};

Problem parse_problem(const std::string& text, const std::string& source = "<string>");
Problem load_problem(const std::string& path);
std::string problem_to_json(const BoundSpec& bounds, const RegionTree* tree = nullptr);

}  // namespace alloc
