#include "alloc_layers/appropt_layer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace alloc::appropt {

namespace {

// Slack for the runtime invariant checks only; clamping itself compares exactly.
double assertion_slack(double budget) { return 1e-12 * std::max(1.0, std::abs(budget)); }

std::string at(Index k, double v) {
  std::ostringstream os;
  os << "[" << k << "]=" << v;
  return os.str();
}

void check_requires(const Vector& y, const BoundSpec& b, const Options& options) {
  const Index n = b.size();
  if (y.size() != n) {
    throw DimensionMismatch("ApprOpt input has " + std::to_string(y.size()) + " entries, bounds cover " +
                            std::to_string(n));
  }
  if (n < 2) throw PreconditionViolated("n >= 2", "got n = " + std::to_string(n));
  require_allocation(y, "ApprOpt input");
  for (Index k = 0; k < n; ++k) {
    const double lo = b.lower()[k], hi = b.upper()[k];
    if (lo < 0.0 || lo > hi || (options.require_upper_within_budget && hi > b.budget())) {
      throw PreconditionViolated("0 <= lower_k <= upper_k <= C", "entity " + std::to_string(k));
    }
    if (y[k] < lo || y[k] > hi) {
      throw PreconditionViolated("lower_k <= y_k <= upper_k",
                                 "y" + at(k, y[k]) + " outside [" + std::to_string(lo) + ", " +
                                     std::to_string(hi) + "]");
    }
  }
  const double slack = assertion_slack(b.budget());
  if (b.lower_mass() > b.budget() + slack || b.upper_mass() < b.budget() - slack) {
    throw PreconditionViolated("sum lower <= C <= sum upper", "budget " + std::to_string(b.budget()));
  }
}

}  // namespace

const char* phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::kLower:
      return "LOWER";
    case Phase::kUpper:
      return "UPPER";
    case Phase::kDone:
      return "DONE";
  }
  return "?";
}

PrescaleResult prescale(const Vector& x, const BoundSpec& b) {
  require_allocation(x, "actor output");
  if (x.size() != b.size()) throw DimensionMismatch("prescale input and bounds differ in length");
  const Index n = x.size();
  PrescaleResult out{x, Matrix::Identity(n, n), false, false};

  bool inside = true;
  for (Index k = 0; k < n && inside; ++k) inside = x[k] >= b.lower()[k] && x[k] <= b.upper()[k];
  if (inside) return out;

  out.scaled = true;
  Index lo_idx = 0, hi_idx = 0;
  x.minCoeff(&lo_idx);
  x.maxCoeff(&hi_idx);
  const double range = x[hi_idx] - x[lo_idx];
  const Vector width = b.upper() - b.lower();
  if (!(range > 0.0)) {
    out.midpoint = true;
    out.y = (b.lower() + b.upper()) / 2.0;
    out.jacobian.setZero();
    return out;
  }
  out.jacobian.setZero();
  for (Index k = 0; k < n; ++k) {
    const double t = (x[k] - x[lo_idx]) / range;
    out.y[k] = std::min(b.upper()[k], b.lower()[k] + width[k] * t);
    // dy_k/dx_j = w_k [ (delta_kj - delta_{j,min}) / R - t (delta_{j,max} - delta_{j,min}) / R ]
    out.jacobian(k, k) += width[k] / range;
    out.jacobian(k, lo_idx) -= width[k] / range;
    out.jacobian(k, hi_idx) -= width[k] * t / range;
    out.jacobian(k, lo_idx) += width[k] * t / range;
  }
  return out;
}

Result appropt_forward(const Vector& y, const BoundSpec& b, const Options& options) {
  check_requires(y, b, options);
  const Index n = b.size();
  const Vector& lower = b.lower();
  const Vector& upper = b.upper();

  Result result;
  result.z = y;
  result.jacobian.d_dy = Matrix::Zero(n, n);
  result.jacobian.d_dc = Vector::Zero(n);
  result.clamped.assign(static_cast<std::size_t>(n), false);
  ClampTrace trace;

  // Fixed entities (lower == upper) leave the problem before the loop.
  std::vector<Index> free;
  double remaining = b.budget();
  for (Index k = 0; k < n; ++k) {
    if (lower[k] == upper[k]) {
      result.z[k] = lower[k];
      result.clamped[static_cast<std::size_t>(k)] = true;
      remaining -= lower[k];
      trace.fixed.push_back(k);
    } else {
      free.push_back(k);
    }
  }

  auto finish = [&]() {
    if (options.keep_trace) {
      trace.unclamped = free;
      trace.n_unclamped = static_cast<Index>(free.size());
      trace.remaining_budget = remaining;
      result.trace = std::move(trace);
    }
    const auto report = check_feasibility(result.z, BoundSpec::subproblem(lower, upper, b.budget()), {}, 1e-9);
    if (!report.feasible) {
      throw InternalAssertion("ApprOpt produced an infeasible output (sum residual " +
                              std::to_string(report.sum_residual) + ")");
    }
    return std::move(result);
  };

  double free_lower = 0.0, free_upper = 0.0;
  for (Index k : free) {
    free_lower += lower[k];
    free_upper += upper[k];
  }
  // Unique feasible point: every free entity sits at one of its bounds.
  if (free.empty() || remaining <= free_lower || remaining >= free_upper) {
    const bool at_lower = free.empty() || remaining <= free_lower;
    for (Index k : free) {
      result.z[k] = at_lower ? lower[k] : upper[k];
      result.clamped[static_cast<std::size_t>(k)] = true;
    }
    free.clear();
    return finish();
  }

  auto set_free_jacobian = [&]() {
    const double inv = 1.0 / static_cast<double>(free.size());
    for (Index k : free) {
      for (Index j : free) result.jacobian.d_dy(k, j) = (k == j ? 1.0 : 0.0) - inv;
      (*result.jacobian.d_dc)[k] = inv;
    }
  };

  // Feasible input: the correction is zero, so skip the arithmetic entirely.
  if (y.sum() == b.budget()) {
    set_free_jacobian();
    if (options.keep_trace) {
      trace.phase_log.push_back(ClampStep{Phase::kLower, {}, static_cast<Index>(free.size()), remaining, free_upper});
      trace.phase_log.push_back(ClampStep{Phase::kUpper, {}, static_cast<Index>(free.size()), remaining, free_upper});
    }
    return finish();
  }

  Phase phase = Phase::kLower;
  double shift = 0.0;
  const int max_iterations = static_cast<int>(n) + 2;
  const double slack = assertion_slack(b.budget());
  while (phase != Phase::kDone) {
    if (++result.iterations > max_iterations) {
      throw InternalAssertion("ApprOpt exceeded n + 2 iterations");
    }
    double free_input = 0.0;
    for (Index k : free) free_input += y[k];
    const auto n_free = static_cast<double>(free.size());
    shift = (remaining - free_input) / n_free;

    std::vector<Index> clamped_now;
    for (Index k : free) {
      const double zk = y[k] + shift;
      result.z[k] = zk;
      if (phase == Phase::kLower && zk < lower[k]) {
        result.z[k] = lower[k];
        clamped_now.push_back(k);
      } else if (phase == Phase::kUpper && zk > upper[k]) {
        result.z[k] = upper[k];
        clamped_now.push_back(k);
      }
    }

    if (!clamped_now.empty()) {
      std::vector<Index> still_free;
      still_free.reserve(free.size());
      std::size_t c = 0;
      for (Index k : free) {
        if (c < clamped_now.size() && clamped_now[c] == k) {
          ++c;
          remaining -= result.z[k];
          result.clamped[static_cast<std::size_t>(k)] = true;
        } else {
          still_free.push_back(k);
        }
      }
      free.swap(still_free);
    }

    if (free.empty()) {
      throw InternalAssertion(std::string("ApprOpt clamped every output in the ") + phase_name(phase) + " phase");
    }
    double upper_mass = 0.0;
    for (Index k : free) upper_mass += upper[k];
    if (phase == Phase::kLower && remaining > upper_mass + slack) {
      throw InternalAssertion("ApprOpt LOWER phase left " + std::to_string(remaining) +
                              " to distribute but free upper bounds only admit " + std::to_string(upper_mass));
    }
    if (options.keep_trace) {
      trace.phase_log.push_back(
          ClampStep{phase, clamped_now, static_cast<Index>(free.size()), remaining, upper_mass});
    }
    if (clamped_now.empty()) phase = static_cast<Phase>(static_cast<int>(phase) + 1);
  }

  set_free_jacobian();
  return finish();
}

}  // namespace alloc::appropt
