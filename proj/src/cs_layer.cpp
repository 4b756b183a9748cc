#include "alloc_layers/cs_layer.hpp"

#include <algorithm>
#include <cmath>

namespace alloc::cs {

Vector squash_outputs(const Vector& x) {
  require_allocation(x, "actor output");
  return x.unaryExpr([](double v) { return std::exp(std::min(0.0, std::max(v, kSquashFloor))); });
}

Vector squash_derivative(const Vector& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0 || v < kSquashFloor) return 0.0;
    return std::exp(v);
  });
}

CsContext build_context(const BoundSpec& b, const std::string& node_id) {
  CsContext ctx;
  const Index n = b.size();
  ctx.lower = b.lower();
  ctx.upper = b.upper();
  ctx.budget = b.budget();
  ctx.min_mass = b.lower_mass();
  ctx.epsilon = Vector::Zero(n);
  ctx.reduced_upper = Vector::Zero(n);

  if (n == 1) {
    ctx.mode = Mode::kSingle;
    return ctx;
  }
  const double free_mass = ctx.budget - ctx.min_mass;
  if (free_mass <= 0.0) {
    ctx.mode = Mode::kDegenerate;
    return ctx;
  }
  ctx.reduced_upper = (ctx.upper - ctx.lower) / free_mass;
  const double excess = ctx.reduced_upper.sum() - 1.0;
  if (std::abs(excess) <= kSaturationBand) {
    ctx.mode = Mode::kSaturated;
    return ctx;
  }
  ctx.epsilon = (ctx.reduced_upper * static_cast<double>(n - 1) / excess).array() - 1.0;
  for (Index k = 0; k < n; ++k) {
    if (ctx.epsilon[k] >= 0.0) continue;
    if (ctx.epsilon[k] < -kEpsilonRoundoff) {
      throw CsConditionViolated(static_cast<std::size_t>(k), ctx.epsilon[k], node_id);
    }
    ctx.epsilon[k] = 0.0;
  }
  return ctx;
}

namespace {

void check_input(const Vector& y, const CsContext& ctx) {
  if (y.size() != ctx.size()) {
    throw DimensionMismatch("constrained softmax expects " + std::to_string(ctx.size()) + " inputs, got " +
                            std::to_string(y.size()));
  }
}

}  // namespace

Vector cs_forward(const Vector& y, const CsContext& ctx) {
  check_input(y, ctx);
  switch (ctx.mode) {
    case Mode::kSingle:
      return Vector::Constant(1, ctx.budget);
    case Mode::kDegenerate:
      return ctx.lower;
    case Mode::kSaturated:
      return ctx.upper;
    case Mode::kRegular:
      break;
  }
  const Vector shifted = y + ctx.epsilon;
  const double total = shifted.sum();
  return ctx.lower + (ctx.budget - ctx.min_mass) * shifted / total;
}

Jacobian cs_jacobian(const Vector& y, const CsContext& ctx) {
  check_input(y, ctx);
  const Index n = ctx.size();
  Jacobian jac{Matrix::Zero(n, n), Vector::Zero(n)};
  switch (ctx.mode) {
    case Mode::kSingle:
      (*jac.d_dc)[0] = 1.0;
      return jac;
    case Mode::kDegenerate:
    case Mode::kSaturated:
      return jac;
    case Mode::kRegular:
      break;
  }
  const double free_mass = ctx.budget - ctx.min_mass;
  const Vector shifted = y + ctx.epsilon;
  const double total = shifted.sum();
  const double inv_sq = 1.0 / (total * total);

  // dz_k/dy_j = D * (delta_kj * S - (y_k + eps_k)) / S^2
  jac.d_dy = -free_mass * inv_sq * shifted * Vector::Ones(n).transpose();
  jac.d_dy.diagonal().array() += free_mass / total;

  // With w = upper - lower and W = sum w, eps_k = w_k (n - 1) / (W - D) - 1,
  // so d eps_k / dD = w_k (n - 1) / (W - D)^2 and D = C - sum lower.
  const Vector width = ctx.upper - ctx.lower;
  const double gap = width.sum() - free_mass;
  const Vector d_eps = width * static_cast<double>(n - 1) / (gap * gap);
  const double d_total = d_eps.sum();
  *jac.d_dc = shifted / total + free_mass * (d_eps * total - shifted * d_total) * inv_sq;
  return jac;
}

}  // namespace alloc::cs
