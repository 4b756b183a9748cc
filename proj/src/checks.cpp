#include "alloc_layers/checks.hpp"

#include <algorithm>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/cs_layer.hpp"
#include "alloc_layers/ddpg.hpp"
#include "alloc_layers/envs.hpp"
#include "alloc_layers/instances.hpp"
#include "alloc_layers/qp_oracle.hpp"
#include "alloc_layers/rng.hpp"

namespace alloc::checks {

RegionTree two_region_example(Method top, Method leaves) {
  RegionNode g1{"G1", 0.4, 0.8, leaves, {0, 1, 2}, {}};
  RegionNode g2{"G2", 0.2, 0.6, leaves, {3, 4}, {}};
  RegionNode root{"root", 1.0, 1.0, top, {}, {g1, g2}};
  return RegionTree(root, BoundSpec::uniform(5, 0.0, 0.5));
}

GradTarget parse_grad_target(const std::string& name) {
  if (name == "cs") return GradTarget::kCs;
  if (name == "appropt") return GradTarget::kApprOpt;
  if (name == "tree") return GradTarget::kTree;
  if (name == "net") return GradTarget::kNet;
  throw PreconditionViolated("target is cs, appropt, tree or net", "unknown gradcheck target '" + name + "'");
}

const char* grad_target_name(GradTarget t) noexcept {
  switch (t) {
    case GradTarget::kCs:
      return "cs";
    case GradTarget::kApprOpt:
      return "appropt";
    case GradTarget::kTree:
      return "tree";
    case GradTarget::kNet:
      return "net";
  }
  return "?";
}

double grad_tolerance(GradTarget t) noexcept { return t == GradTarget::kNet ? 1e-4 : 1e-5; }

bool GradcheckReport::passed() const noexcept { return max_error <= grad_tolerance(target); }

namespace {

double check_cs(Rng& rng) {
  const Index n = 2 + static_cast<Index>(rng.below(12));
  const BoundSpec b = instances::random_cs_bounds(rng, n);
  const auto ctx = cs::build_context(b);
  Vector y(n);
  for (Index k = 0; k < n; ++k) y[k] = rng.uniform(0.01, 1.0);
  const auto jac = cs::cs_jacobian(y, ctx);
  const auto fd = finite_diff_jacobian([&](const Vector& v) { return cs::cs_forward(v, ctx); }, y);
  const Vector fdc = finite_diff_budget(
      [&](double c) { return cs::cs_forward(y, cs::build_context(BoundSpec::subproblem(b.lower(), b.upper(), c))); },
      b.budget());
  return std::max(max_relative_error(jac.d_dy, fd.d_dy), max_relative_error(*jac.d_dc, fdc));
}

// Negative when the sample sits next to a kink.
double check_appropt(Rng& rng) {
  const Index n = 2 + static_cast<Index>(rng.below(40));
  const BoundSpec b = instances::random_strict_bounds(rng, n);
  const Vector y = instances::random_box_point(rng, b);
  const auto r = appropt::appropt_forward(y, b);
  const auto at_budget = [&](double c) {
    return appropt::appropt_forward(y, BoundSpec::subproblem(b.lower(), b.upper(), c),
                                    {.require_upper_within_budget = false});
  };
  const bool budget_smooth = at_budget(b.budget() + 10.0 * kFiniteDiffStep).clamped == r.clamped &&
                             at_budget(b.budget() - 10.0 * kFiniteDiffStep).clamped == r.clamped;
  const auto jac_at = [&](const Vector& v) { return appropt::appropt_forward(v, b).jacobian.d_dy; };
  if (!budget_smooth || !jacobian_locally_smooth(jac_at, y)) return -1.0;
  const auto fd = finite_diff_jacobian([&](const Vector& v) { return appropt::appropt_forward(v, b).z; }, y);
  const Vector fdc = finite_diff_budget([&](double c) { return at_budget(c).z; }, b.budget());
  return std::max(max_relative_error(r.jacobian.d_dy, fd.d_dy), max_relative_error(*r.jacobian.d_dc, fdc));
}

double check_tree(Rng& rng, const RegionTree& tree) {
  Vector pins(tree.layout().total());
  for (Index k = 0; k < pins.size(); ++k) pins[k] = rng.uniform(-1.0, 1.0);
  const auto jac_at = [&](const Vector& p) { return nested_forward(p, tree).jacobian.d_dy; };
  if (!jacobian_locally_smooth(jac_at, pins)) return -1.0;
  const auto fd = finite_diff_jacobian([&](const Vector& p) { return nested_forward(p, tree).z; }, pins);
  return max_relative_error(nested_forward(pins, tree).jacobian.d_dy, fd.d_dy);
}

double check_net(Rng& rng, std::size_t trial) {
  const ddpg::Method methods[] = {ddpg::Method::kCp, ddpg::Method::kCs, ddpg::Method::kApprOpt};
  const ddpg::Method method = methods[trial % 3];
  const Index n = 2 + static_cast<Index>(rng.below(4));
  const BoundSpec b = instances::random_cs_bounds(rng, n);
  ddpg::TrainerConfig cfg;
  cfg.method = method;
  cfg.hidden = {8, 6};
  cfg.penalty_lambda = method == ddpg::Method::kCs ? 0.0 : 1.0;
  const Method layer = method == ddpg::Method::kCs ? Method::kCs : Method::kApprOpt;
  ddpg::Agent agent(cfg, RegionTree::flat(b, layer), 8, envs::History::state_dim(n), rng.next_u64());
  Matrix state(agent.state_dim(), 1);
  for (Index i = 0; i < state.rows(); ++i) state(i, 0) = rng.uniform();

  const Vector raw = nn::predict(agent.actor(), agent.actor_spec(), agent.normalize_states(state.col(0)));
  if (method != ddpg::Method::kCp &&
      !jacobian_locally_smooth([&](const Vector& y) { return nested_forward(y, agent.tree()).jacobian.d_dy; }, raw)) {
    return -1.0;
  }
  if (method != ddpg::Method::kCs &&
      !jacobian_locally_smooth([&](const Vector& y) { return Matrix(qp::violation_cost(y, agent.tree()).gradient); },
                               raw)) {
    return -1.0;
  }
  const ddpg::CriticFn critic = agent.critic_fn();
  const Vector analytic = agent.actor_gradient(state, critic).second.flatten();
  const Vector theta = agent.actor().flatten();
  Vector numeric(theta.size());
  for (Index p = 0; p < theta.size(); ++p) {
    Vector t = theta;
    t[p] = theta[p] + kFiniteDiffStep;
    agent.actor().assign(t);
    const double up = agent.actor_gradient(state, critic).first.objective;
    t[p] = theta[p] - kFiniteDiffStep;
    agent.actor().assign(t);
    const double down = agent.actor_gradient(state, critic).first.objective;
    numeric[p] = (up - down) / (2.0 * kFiniteDiffStep);
  }
  return max_relative_error(analytic, numeric);
}

}  // namespace

GradcheckReport gradcheck(GradTarget target, std::size_t trials, std::uint64_t seed) {
  GradcheckReport report;
  report.target = target;
  report.trials = trials;
  Rng rng(seed);
  const RegionTree trees[] = {two_region_example(Method::kApprOpt), two_region_example(Method::kCs)};
  for (std::size_t t = 0; t < trials; ++t) {
    double err = 0.0;
    switch (target) {
      case GradTarget::kCs:
        err = check_cs(rng);
        break;
      case GradTarget::kApprOpt:
        err = check_appropt(rng);
        break;
      case GradTarget::kTree:
        err = check_tree(rng, trees[t % 2]);
        break;
      case GradTarget::kNet:
        err = check_net(rng, t);
        break;
    }
    if (err < 0.0) {
      ++report.skipped;
      continue;
    }
    ++report.checked;
    report.max_error = std::max(report.max_error, err);
  }
  return report;
}

}  // namespace alloc::checks
