#include "alloc_layers/region_tree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/cs_layer.hpp"

namespace alloc {

namespace {

constexpr double kIntervalSlack = 1e-12;

struct Interval {
  double lo;
  double hi;
};

// Effective interval of a node, computed bottom-up. Validates as it goes.
Interval propagate(const RegionNode& node, const BoundSpec& b) {
  double lo_sum = 0.0, hi_sum = 0.0;
  if (node.is_leaf()) {
    for (Index k : node.entities) {
      lo_sum += b.lower()[k];
      hi_sum += b.upper()[k];
    }
  } else {
    for (const auto& child : node.children) {
      const Interval c = propagate(child, b);
      lo_sum += c.lo;
      hi_sum += c.hi;
    }
  }
  if (node.lower > node.upper) throw TreeError(node.id, "lower bound exceeds upper bound");
  if (lo_sum > node.upper + kIntervalSlack) {
    throw TreeError(node.id, "children need at least " + std::to_string(lo_sum) + " but the upper bound is " +
                                 std::to_string(node.upper));
  }
  if (hi_sum < node.lower - kIntervalSlack) {
    throw TreeError(node.id, "children absorb at most " + std::to_string(hi_sum) + " but the lower bound is " +
                                 std::to_string(node.lower));
  }
  return {std::max(node.lower, lo_sum), std::min(node.upper, hi_sum)};
}

void collect(const RegionNode& node, Index n, std::vector<int>& seen, std::set<std::string>& ids, bool is_root,
             PinLayout& layout) {
  if (node.id.empty()) throw TreeError("<unnamed>", "every region needs an id");
  if (!ids.insert(node.id).second) throw TreeError(node.id, "duplicate region id");
  if (!node.entities.empty() && !node.children.empty()) {
    throw TreeError(node.id, "a region holds either entities or sub-regions, not both");
  }
  if (node.entities.empty() && node.children.empty()) throw TreeError(node.id, "region is empty");
  if (!is_root) {
    layout.region_ids.push_back(node.id);
    layout.region_pins.push_back(0);
  }
  for (Index k : node.entities) {
    if (k < 0 || k >= n) throw TreeError(node.id, "entity " + std::to_string(k) + " out of range");
    if (seen[static_cast<std::size_t>(k)]++) {
      throw TreeError(node.id, "entity " + std::to_string(k) + " already belongs to another region");
    }
  }
  for (const auto& child : node.children) collect(child, n, seen, ids, false, layout);
}

void gather_members(const RegionNode& node, std::vector<Index>& out) {
  out.insert(out.end(), node.entities.begin(), node.entities.end());
  for (const auto& child : node.children) gather_members(child, out);
}

void gather_constraints(const RegionNode& node, bool is_root, std::vector<RegionConstraint>& out) {
  if (!is_root) out.push_back(RegionConstraint{node.id, RegionTree::members(node), node.lower, node.upper});
  for (const auto& child : node.children) gather_constraints(child, false, out);
}

void assign_method(RegionNode& node, Method m) {
  node.method = m;
  for (auto& child : node.children) assign_method(child, m);
}

}  // namespace

const char* method_name(Method m) noexcept { return m == Method::kCs ? "cs" : "appropt"; }

Method parse_method(const std::string& name) {
  if (name == "cs") return Method::kCs;
  if (name == "appropt") return Method::kApprOpt;
  throw Error("unknown layer method '" + name + "' (expected cs or appropt)");
}

PinLayout validate_tree(const RegionNode& root, const BoundSpec& b) {
  const Index n = b.size();
  PinLayout layout;
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  std::set<std::string> ids;
  collect(root, n, seen, ids, true, layout);
  for (Index k = 0; k < n; ++k) {
    if (!seen[static_cast<std::size_t>(k)]) throw TreeError(root.id, "entity " + std::to_string(k) + " is not covered by any region");
  }
  const Interval top = propagate(root, b);
  if (b.budget() < top.lo - kIntervalSlack || b.budget() > top.hi + kIntervalSlack) {
    throw TreeError(root.id, "budget " + std::to_string(b.budget()) + " outside the feasible interval [" +
                                 std::to_string(top.lo) + ", " + std::to_string(top.hi) + "]");
  }
  layout.entity_pins.resize(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) layout.entity_pins[static_cast<std::size_t>(k)] = k;
  for (std::size_t i = 0; i < layout.region_pins.size(); ++i) layout.region_pins[i] = n + static_cast<Index>(i);
  return layout;
}

RegionTree::RegionTree(RegionNode root, BoundSpec bounds)
    : root_(std::move(root)), bounds_(std::move(bounds)), layout_(validate_tree(root_, bounds_)) {}

RegionTree RegionTree::flat(BoundSpec bounds, Method method) {
  RegionNode root;
  root.id = "root";
  root.lower = bounds.budget();
  root.upper = bounds.budget();
  root.method = method;
  for (Index k = 0; k < bounds.size(); ++k) root.entities.push_back(k);
  return RegionTree(std::move(root), std::move(bounds));
}

std::pair<double, double> RegionTree::effective_interval(const RegionNode& node) const {
  const Interval i = propagate(node, bounds_);
  return {i.lo, i.hi};
}

std::vector<Index> RegionTree::members(const RegionNode& node) {
  std::vector<Index> out;
  gather_members(node, out);
  return out;
}

std::vector<RegionConstraint> RegionTree::region_constraints() const {
  std::vector<RegionConstraint> out;
  gather_constraints(root_, true, out);
  return out;
}

std::vector<RegionConstraint> RegionTree::all_constraints() const {
  std::vector<RegionConstraint> out = region_constraints();
  for (Index k = 0; k < bounds_.size(); ++k) {
    out.push_back(RegionConstraint{"entity" + std::to_string(k), {k}, bounds_.lower()[k], bounds_.upper()[k]});
  }
  return out;
}

RegionTree RegionTree::with_method(Method method) const {
  RegionNode copy = root_;
  assign_method(copy, method);
  return RegionTree(std::move(copy), bounds_);
}

FeasibilityReport check_feasibility(const Vector& z, const RegionTree& tree, double tol) {
  const auto regions = tree.region_constraints();
  return check_feasibility(z, tree.bounds(), regions, tol);
}

namespace {

struct NestedEvaluator {
  const RegionTree& tree;
  const Vector& pins;
  NestedResult& out;

  // `first_child` is the pre-order position (among non-root regions) of this
  // node's first child region. `budget_grad` is d(budget)/d(pins);
  // `budget_dc` is d(budget)/d(root budget).
  void eval(const RegionNode& node, Index first_child, double budget, const Eigen::RowVectorXd& budget_grad,
            double budget_dc) {
    const Index m = node.child_count();
    const BoundSpec& b = tree.bounds();
    Vector lo(m), hi(m), x(m);
    std::vector<Index> pin_of(static_cast<std::size_t>(m));
    std::vector<Index> child_position(static_cast<std::size_t>(m), 0);
    if (node.is_leaf()) {
      for (Index c = 0; c < m; ++c) {
        const Index e = node.entities[static_cast<std::size_t>(c)];
        lo[c] = b.lower()[e];
        hi[c] = b.upper()[e];
        pin_of[static_cast<std::size_t>(c)] = tree.layout().entity_pins[static_cast<std::size_t>(e)];
      }
    } else {
      Index position = first_child;
      for (Index c = 0; c < m; ++c) {
        const auto& child = node.children[static_cast<std::size_t>(c)];
        const auto [clo, chi] = tree.effective_interval(child);
        lo[c] = clo;
        hi[c] = chi;
        child_position[static_cast<std::size_t>(c)] = position;
        pin_of[static_cast<std::size_t>(c)] = tree.layout().region_pins[static_cast<std::size_t>(position)];
        position += 1 + count_regions(child);
      }
    }
    for (Index c = 0; c < m; ++c) x[c] = pins[pin_of[static_cast<std::size_t>(c)]];

    Vector mass(m);
    Matrix d_mass_dx = Matrix::Zero(m, m);
    Vector d_mass_dc = Vector::Zero(m);
    if (m == 1) {
      mass[0] = budget;
      d_mass_dc[0] = 1.0;
    } else {
      const double lo_sum = lo.sum(), hi_sum = hi.sum();
      const double slack = 1e-9 * std::max(1.0, std::abs(budget));
      if (budget < lo_sum - slack || budget > hi_sum + slack) {
        throw InternalAssertion("region '" + node.id + "' received budget " + std::to_string(budget) +
                                " outside [" + std::to_string(lo_sum) + ", " + std::to_string(hi_sum) + "]");
      }
      const BoundSpec spec = BoundSpec::subproblem(lo, hi, std::clamp(budget, lo_sum, hi_sum));
      if (node.method == Method::kApprOpt) {
        const auto pre = appropt::prescale(x, spec);
        appropt::Options options;
        options.require_upper_within_budget = false;
        const auto res = appropt::appropt_forward(pre.y, spec, options);
        mass = res.z;
        d_mass_dx = res.jacobian.d_dy * pre.jacobian;
        d_mass_dc = *res.jacobian.d_dc;
      } else {
        const Vector y = cs::squash_outputs(x);
        const auto ctx = cs::build_context(spec, node.id);
        mass = cs::cs_forward(y, ctx);
        const auto jac = cs::cs_jacobian(y, ctx);
        d_mass_dx = jac.d_dy * cs::squash_derivative(x).asDiagonal();
        d_mass_dc = *jac.d_dc;
      }
    }

    out.nodes.push_back(NodeRecord{node.id, node.method, budget, mass, d_mass_dc});
    for (Index c = 0; c < m; ++c) {
      Eigen::RowVectorXd row = d_mass_dc[c] * budget_grad;
      for (Index j = 0; j < m; ++j) row[pin_of[static_cast<std::size_t>(j)]] += d_mass_dx(c, j);
      const double row_dc = d_mass_dc[c] * budget_dc;
      if (node.is_leaf()) {
        const Index e = node.entities[static_cast<std::size_t>(c)];
        out.z[e] = mass[c];
        out.jacobian.d_dy.row(e) = row;
        (*out.jacobian.d_dc)[e] = row_dc;
      } else {
        eval(node.children[static_cast<std::size_t>(c)], child_position[static_cast<std::size_t>(c)] + 1, mass[c],
             row, row_dc);
      }
    }
  }

  static Index count_regions(const RegionNode& node) {
    Index count = 0;
    for (const auto& child : node.children) count += 1 + count_regions(child);
    return count;
  }
};

}  // namespace

NestedResult nested_forward(const Vector& pins, const RegionTree& tree) {
  if (pins.size() != tree.layout().total()) {
    throw DimensionMismatch("region tree expects " + std::to_string(tree.layout().total()) + " pins, got " +
                            std::to_string(pins.size()));
  }
  require_allocation(pins, "pins");
  const Index n = tree.entity_count();
  NestedResult out;
  out.z = Vector::Zero(n);
  out.jacobian.d_dy = Matrix::Zero(n, pins.size());
  out.jacobian.d_dc = Vector::Zero(n);
  NestedEvaluator evaluator{tree, pins, out};
  evaluator.eval(tree.root(), 0, tree.bounds().budget(), Eigen::RowVectorXd::Zero(pins.size()), 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// JSON problem files

namespace {

using nlohmann::json;

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

double number_field(const json& j, const char* key, double fallback, const std::string& node) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw TreeError(node, std::string("field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

RegionNode parse_node(const json& j, double default_upper, const std::string& parent) {
  if (!j.is_object()) throw TreeError(parent, "child entries must be objects");
  RegionNode node;
  if (!j.contains("id") || !j.at("id").is_string()) throw TreeError(parent, "child region without a string 'id'");
  node.id = j.at("id").get<std::string>();
  node.lower = number_field(j, "lower", 0.0, node.id);
  node.upper = number_field(j, "upper", default_upper, node.id);
  if (j.contains("method")) {
    if (!j.at("method").is_string()) throw TreeError(node.id, "'method' must be a string");
    try {
      node.method = parse_method(j.at("method").get<std::string>());
    } catch (const Error& e) {
      throw TreeError(node.id, e.what());
    }
  }
  if (j.contains("entities")) {
    if (!j.at("entities").is_array()) throw TreeError(node.id, "'entities' must be an array");
    for (const auto& e : j.at("entities")) {
      if (!e.is_number_integer()) throw TreeError(node.id, "entity indices must be integers");
      node.entities.push_back(e.get<Index>());
    }
  }
  if (j.contains("children")) {
    if (!j.at("children").is_array()) throw TreeError(node.id, "'children' must be an array");
    for (const auto& c : j.at("children")) node.children.push_back(parse_node(c, default_upper, node.id));
  }
  return node;
}

Vector vector_field(const json& j, const char* key, const std::string& source) {
  if (!j.contains(key) || !j.at(key).is_array()) throw ParseError(source, 1, std::string("missing array '") + key + "'");
  const auto& arr = j.at(key);
  Vector v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw ParseError(source, 1, std::string("'") + key + "' must hold numbers");
    v[static_cast<Index>(i)] = arr[i].get<double>();
  }
  return v;
}

json node_to_json(const RegionNode& node) {
  json j;
  j["id"] = node.id;
  j["lower"] = node.lower;
  j["upper"] = node.upper;
  j["method"] = method_name(node.method);
  if (node.is_leaf()) {
    j["entities"] = node.entities;
  } else {
    j["children"] = json::array();
    for (const auto& c : node.children) j["children"].push_back(node_to_json(c));
  }
  return j;
}

}  // namespace

Problem parse_problem(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, line_of(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }
  if (!doc.is_object()) throw ParseError(source, 1, "problem file must hold a JSON object");
  const double budget = doc.contains("budget") ? doc.at("budget").get<double>() : 1.0;
  Vector lower = vector_field(doc, "lower", source);
  Vector upper = vector_field(doc, "upper", source);
  Problem problem{BoundSpec(std::move(lower), std::move(upper), budget), std::nullopt};
  if (doc.contains("tree")) {
    RegionNode root = parse_node(doc.at("tree"), budget, "<root>");
    problem.tree.emplace(std::move(root), problem.bounds);
  }
  return problem;
}

Problem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_problem(ss.str(), path);
}

std::string problem_to_json(const BoundSpec& bounds, const RegionTree* tree) {
  json j;
  j["budget"] = bounds.budget();
  j["lower"] = std::vector<double>(bounds.lower().data(), bounds.lower().data() + bounds.size());
  j["upper"] = std::vector<double>(bounds.upper().data(), bounds.upper().data() + bounds.size());
  if (tree) j["tree"] = node_to_json(tree->root());
  return j.dump(2);
}

}  // namespace alloc
