#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "itergp/kernels.hpp"

namespace itergp {

struct SolverOptions {
  // Twice-is-enough re-projection of each new direction against all stored
  // ones; kept on up to this iteration, after which the O(n*i) pass is skipped.
  bool reorthogonalize = true;
  Eigen::Index reorth_iteration_limit = 500;
  // An action whose K-hat-conjugate component is this small relative to its
  // own K-hat norm adds nothing numerically and is rejected.
  double breakdown_rtol = 1e-12;
  // Residuals are updated incrementally; a full recompute from v every this
  // many steps bounds drift at one extra matvec per interval.
  Eigen::Index residual_refresh_interval = 50;
  bool log_actions = false;
};

struct StoppingConfig {
  Eigen::Index max_iterations = 0;
  double abstol = 0.0;
  double reltol = 0.0;
};

// One conjugate direction with its cached K-hat image and squared K-hat norm.
struct Direction {
  Eigen::VectorXd d;
  Eigen::VectorXd khat_d;
  double eta = 0.0;
};

struct SolverState {
  explicit SolverState(Eigen::VectorXd target)
      : v(Eigen::VectorXd::Zero(target.size())),
        residual(std::move(target)),
        iteration(0) {}

  Eigen::VectorXd v;
  Eigen::VectorXd residual;
  Eigen::Index iteration;
  std::vector<Direction> directions;
  std::vector<Eigen::VectorXd> actions;  // populated when log_actions is set
};

// Full per-step observation handed to the policy; the action and its K-hat
// image let recursive policies (CG-style) avoid re-doing the solver's matvec.
struct StepRecord {
  Eigen::Index iteration = 0;
  double alpha = 0.0;
  double eta = 0.0;
  double action_sqnorm_khat = 0.0;  // s' K-hat s
  double residual_norm = 0.0;
  Eigen::VectorXd action;
  Eigen::VectorXd khat_action;
};

struct TraceEntry {
  Eigen::Index iteration = 0;
  double alpha = 0.0;
  double eta = 0.0;
  double residual_norm = 0.0;
  long matvec_count = 0;
};

enum class StepStatus { Accepted, DegenerateAction };

struct StepOutcome {
  StepStatus status = StepStatus::Accepted;
  StepRecord record;
};

// One probabilistic-linear-solver update: project the action K-hat-orthogonally
// against all stored directions, then move the weight estimate along the new
// direction. Exactly one fresh matvec (K-hat * action); K-hat * d comes from
// the cached images. Periodic residual refreshes add one matvec per interval.
inline StepOutcome solver_step(SolverState& state,
                               const KernelMatrixHandle& khat,
                               const Eigen::VectorXd& target,
                               const Eigen::VectorXd& action,
                               const SolverOptions& opts = {}) {
  const Eigen::Index n = khat.size();
  if (target.size() != n || state.v.size() != n)
    throw std::invalid_argument("solver_step: size mismatch");
  if (action.size() != n)
    throw std::invalid_argument("solver_step: action length mismatch");
  if (!action.allFinite() || action.isZero(0.0))
    throw std::invalid_argument("solver_step: action must be finite, nonzero");

  Eigen::VectorXd khat_s = khat.matvec(action);
  const double s_khat_s = action.dot(khat_s);

  Eigen::VectorXd d = action;
  Eigen::VectorXd khat_d = khat_s;
  auto project_out = [&](const Eigen::VectorXd& probe) {
    for (const Direction& dir : state.directions) {
      const double c = dir.khat_d.dot(probe) / dir.eta;
      d -= c * dir.d;
      khat_d -= c * dir.khat_d;
    }
  };
  project_out(action);
  if (opts.reorthogonalize && state.iteration < opts.reorth_iteration_limit)
    project_out(d);

  const double eta = action.dot(khat_d);
  if (!(eta > opts.breakdown_rtol * s_khat_s) || !std::isfinite(eta))
    return {StepStatus::DegenerateAction, {}};

  const double alpha = action.dot(state.residual);
  const double scale = alpha / eta;
  state.v += scale * d;
  state.residual -= scale * khat_d;
  state.directions.push_back({d, khat_d, eta});
  if (opts.log_actions) state.actions.push_back(action);
  ++state.iteration;
  if (opts.residual_refresh_interval > 0 &&
      state.iteration % opts.residual_refresh_interval == 0)
    state.residual = target - khat.matvec(state.v);

  StepRecord rec;
  rec.iteration = state.iteration;
  rec.alpha = alpha;
  rec.eta = eta;
  rec.action_sqnorm_khat = s_khat_s;
  rec.residual_norm = state.residual.norm();
  rec.action = action;
  rec.khat_action = std::move(khat_s);
  return {StepStatus::Accepted, std::move(rec)};
}

// C_i = sum_j d_j d_j' / eta_j, stored in factored form.
struct LowRankPrecision {
  Eigen::Index n = 0;
  Eigen::MatrixXd directions;  // n x i
  Eigen::VectorXd eta;         // i

  Eigen::Index rank() const { return directions.cols(); }
};

inline LowRankPrecision snapshot_precision(const SolverState& state) {
  LowRankPrecision c;
  c.n = state.v.size();
  const Eigen::Index i = static_cast<Eigen::Index>(state.directions.size());
  c.directions.resize(c.n, i);
  c.eta.resize(i);
  for (Eigen::Index j = 0; j < i; ++j) {
    c.directions.col(j) = state.directions[static_cast<size_t>(j)].d;
    c.eta[j] = state.directions[static_cast<size_t>(j)].eta;
  }
  return c;
}

// C_i w in O(n * i) without materializing C_i.
inline Eigen::VectorXd precision_matvec(const LowRankPrecision& c,
                                        const Eigen::VectorXd& w) {
  if (w.size() != c.n)
    throw std::invalid_argument("precision_matvec: length mismatch");
  if (c.rank() == 0) return Eigen::VectorXd::Zero(c.n);
  Eigen::VectorXd coeffs = c.directions.transpose() * w;
  coeffs.array() /= c.eta.array();
  return c.directions * coeffs;
}

// Q_i w = sum_j (K-hat d_j)(K-hat d_j)' w / eta_j, the solver's implicit
// approximation of K-hat assembled from the cached images.
inline Eigen::VectorXd kernel_approx_matvec(const SolverState& state,
                                            const Eigen::VectorXd& w) {
  if (w.size() != state.v.size())
    throw std::invalid_argument("kernel_approx_matvec: length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w.size());
  for (const Direction& dir : state.directions)
    out += (dir.khat_d.dot(w) / dir.eta) * dir.khat_d;
  return out;
}

// rho(i): relative K-hat-norm error of v_i against the exact weights,
// computable from C_i and one matvec. Guaranteed in [0, 1 + eps]; 1 before
// any step, 0 once the action span is exhausted.
inline double relative_error_bound(const LowRankPrecision& c,
                                   const KernelMatrixHandle& khat,
                                   const Eigen::VectorXd& v_star) {
  if (v_star.size() != khat.size())
    throw std::invalid_argument("relative_error_bound: length mismatch");
  if (v_star.isZero(0.0))
    throw std::invalid_argument("relative_error_bound: v_star must be nonzero");
  const Eigen::VectorXd u = khat.matvec(v_star);
  const double denom = v_star.dot(u);
  if (!(denom > 0.0))
    throw std::invalid_argument("relative_error_bound: K-hat not positive");
  const double rho2 = 1.0 - u.dot(precision_matvec(c, u)) / denom;
  return std::sqrt(rho2 > 0.0 ? rho2 : 0.0);
}

// Action source driving the solver. next_action returns nullopt when the
// policy has nothing more to propose; accepted() observes each committed step.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::optional<Eigen::VectorXd> next_action(
      const SolverState& state, const KernelMatrixHandle& khat) = 0;
  virtual void accepted(const StepRecord& record) { (void)record; }
  // Whether run() should ask for another action after a degenerate one;
  // enumerating policies skip past dependent proposals, recursive ones stop.
  virtual bool skip_degenerate() const { return false; }
  virtual std::string name() const = 0;
};

enum class StopReason {
  Converged,
  MaxIterations,
  PolicyExhausted,
  DegenerateActions,
};

inline std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Converged: return "converged";
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::PolicyExhausted: return "policy_exhausted";
    case StopReason::DegenerateActions: return "degenerate_actions";
  }
  return "unknown";
}

struct SolveResult {
  SolverState state;
  std::vector<TraceEntry> trace;
  StopReason reason = StopReason::MaxIterations;
};

inline bool stopping_reached(const StoppingConfig& stop, double residual_norm,
                             double target_norm) {
  const double threshold =
      std::max(stop.reltol * target_norm, stop.abstol);
  return residual_norm <= threshold;
}

inline SolveResult run(const KernelMatrixHandle& khat,
                       const Eigen::VectorXd& target, Policy& policy,
                       const StoppingConfig& stop,
                       const SolverOptions& opts = {}) {
  if (target.size() != khat.size())
    throw std::invalid_argument("run: target length mismatch");
  if (stop.max_iterations < 0 || stop.abstol < 0.0 || stop.reltol < 0.0)
    throw std::invalid_argument("run: stopping config must be non-negative");

  constexpr int kDegenerateRetryLimit = 32;
  const double target_norm = target.norm();
  SolveResult result{SolverState(target), {}, StopReason::MaxIterations};
  SolverState& state = result.state;
  int consecutive_degenerate = 0;
  while (true) {
    if (stopping_reached(stop, state.residual.norm(), target_norm)) {
      result.reason = StopReason::Converged;
      break;
    }
    if (state.iteration >= stop.max_iterations) {
      result.reason = StopReason::MaxIterations;
      break;
    }
    std::optional<Eigen::VectorXd> action = policy.next_action(state, khat);
    if (!action) {
      result.reason = StopReason::PolicyExhausted;
      break;
    }
    StepOutcome outcome = solver_step(state, khat, target, *action, opts);
    if (outcome.status == StepStatus::DegenerateAction) {
      ++consecutive_degenerate;
      if (!policy.skip_degenerate() ||
          consecutive_degenerate >= kDegenerateRetryLimit) {
        result.reason = StopReason::DegenerateActions;
        break;
      }
      continue;
    }
    consecutive_degenerate = 0;
    policy.accepted(outcome.record);
    result.trace.push_back({outcome.record.iteration, outcome.record.alpha,
                            outcome.record.eta, outcome.record.residual_norm,
                            khat.matvec_count()});
  }
  return result;
}

}  // namespace itergp
