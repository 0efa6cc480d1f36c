#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "itergp/errors.hpp"
#include "itergp/kernels.hpp"
#include "itergp/random.hpp"
#include "itergp/solver.hpp"

namespace itergp {

// Cholesky with escalating diagonal jitter for matrices that are PSD only up
// to rounding (joint prior blocks with near-duplicate points).
inline Eigen::LLT<Eigen::MatrixXd> jittered_llt(Eigen::MatrixXd a,
                                                double output_scale) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  double jitter = 1e-10 * output_scale;
  while (llt.info() != Eigen::Success) {
    if (jitter > 1e-6)
      throw NumericalError("Cholesky failed after jitter escalation");
    a.diagonal().array() += jitter;
    llt.compute(a);
    jitter *= 10.0;
  }
  return llt;
}

// GP posterior after i solver steps: mean shift k(., X) v_i and covariance
// k(., .) - k(., X) C_i k(X, .), carrying both the mathematical and the
// computational uncertainty. All predictions cost O(n * i) per query point.
class CombinedPosterior {
 public:
  CombinedPosterior(KernelParams params, Eigen::MatrixXd train_inputs,
                    Eigen::VectorXd train_targets, double noise,
                    Eigen::VectorXd weights, LowRankPrecision precision,
                    MeanFunction prior_mean = {})
      : params_(params),
        train_inputs_(std::move(train_inputs)),
        train_targets_(std::move(train_targets)),
        noise_(noise),
        weights_(std::move(weights)),
        precision_(std::move(precision)),
        prior_mean_(std::move(prior_mean)) {
    params_.validate();
    const Eigen::Index n = train_inputs_.rows();
    if (train_targets_.size() != n || weights_.size() != n ||
        precision_.n != n)
      throw std::invalid_argument("CombinedPosterior: size mismatch");
    if (!(std::isfinite(noise_) && noise_ >= 0.0))
      throw std::invalid_argument("CombinedPosterior: bad noise");
  }

  const KernelParams& params() const { return params_; }
  const Eigen::MatrixXd& train_inputs() const { return train_inputs_; }
  const Eigen::VectorXd& train_targets() const { return train_targets_; }
  double noise() const { return noise_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const LowRankPrecision& precision() const { return precision_; }
  const MeanFunction& prior_mean() const { return prior_mean_; }

  Eigen::VectorXd predict_mean(const Eigen::MatrixXd& query) const {
    check_query(query);
    return mean_values(prior_mean_, query) +
           kernel_cross(params_, query, train_inputs_) * weights_;
  }

  // Latent (noise-free) posterior covariance.
  Eigen::MatrixXd predict_cov(const Eigen::MatrixXd& query) const {
    check_query(query);
    Eigen::MatrixXd cov = kernel_cross(params_, query, query);
    if (precision_.rank() > 0) {
      const Eigen::MatrixXd w =
          kernel_cross(params_, query, train_inputs_) * precision_.directions;
      cov -= w * precision_.eta.cwiseInverse().asDiagonal() * w.transpose();
    }
    return 0.5 * (cov + cov.transpose());
  }

  // Diagonal fast path; tiny negatives from rounding are clamped at zero.
  Eigen::VectorXd predict_var(const Eigen::MatrixXd& query) const {
    check_query(query);
    Eigen::VectorXd var =
        Eigen::VectorXd::Constant(query.rows(), params_.output_scale);
    if (precision_.rank() > 0) {
      const Eigen::MatrixXd w =
          kernel_cross(params_, query, train_inputs_) * precision_.directions;
      var -= (w.array().square().rowwise() *
              precision_.eta.cwiseInverse().transpose().array())
                 .rowwise()
                 .sum()
                 .matrix();
    }
    return var.cwiseMax(0.0);
  }

  struct VarianceSplit {
    double combined = 0.0;
    double mathematical = 0.0;
    double computational = 0.0;
  };

  // Splits the combined variance at x into the exact-posterior part and the
  // part contributed by stopping the solver early. The exact solve with
  // K-hat is not something the production path owns, so the caller passes it
  // in (tests use the dense oracle).
  VarianceSplit decompose_variance(
      const Eigen::RowVectorXd& x,
      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& khat_solve)
      const {
    if (!khat_solve)
      throw std::invalid_argument("decompose_variance: solver callback required");
    const Eigen::VectorXd kx =
        kernel_cross(params_, train_inputs_, x.eval());
    const double prior = params_.output_scale;
    const double exact_reduction = kx.dot(khat_solve(kx));
    const double solver_reduction = kx.dot(precision_matvec(precision_, kx));
    VarianceSplit split;
    split.combined = prior - solver_reduction;
    split.mathematical = prior - exact_reduction;
    split.computational = exact_reduction - solver_reduction;
    return split;
  }

  // Matheron-rule posterior draws: a joint prior draw over train and query
  // points, corrected by C_i applied to (y - y'), with y' the prior draw
  // plus fresh noise. Returns one path per row.
  Eigen::MatrixXd sample_paths(const Eigen::MatrixXd& query, Eigen::Index count,
                               std::uint64_t seed) const {
    check_query(query);
    if (count < 1)
      throw std::invalid_argument("sample_paths: count must be >= 1");
    const Eigen::Index n = train_inputs_.rows();
    const Eigen::Index p = query.rows();
    Eigen::MatrixXd joint(n + p, train_inputs_.cols());
    joint.topRows(n) = train_inputs_;
    joint.bottomRows(p) = query;
    const Eigen::LLT<Eigen::MatrixXd> llt =
        jittered_llt(kernel_cross(params_, joint, joint), params_.output_scale);

    Rng rng(seed);
    Eigen::MatrixXd prior_draws =
        llt.matrixL() * standard_normal_matrix(rng, n + p, count);
    prior_draws.topRows(n).colwise() += mean_values(prior_mean_, train_inputs_);
    prior_draws.bottomRows(p).colwise() += mean_values(prior_mean_, query);
    Eigen::MatrixXd observed =
        prior_draws.topRows(n) +
        std::sqrt(noise_) * standard_normal_matrix(rng, n, count);
    Eigen::MatrixXd update = (-observed).colwise() + train_targets_;
    if (precision_.rank() > 0) {
      Eigen::MatrixXd coeffs = precision_.directions.transpose() * update;
      coeffs.array().colwise() /= precision_.eta.array();
      update = precision_.directions * coeffs;
    } else {
      update.setZero();
    }
    Eigen::MatrixXd paths =
        prior_draws.bottomRows(p) +
        kernel_cross(params_, query, train_inputs_) * update;
    return paths.transpose();
  }

 private:
  void check_query(const Eigen::MatrixXd& query) const {
    if (query.cols() != train_inputs_.cols())
      throw std::invalid_argument("query dimension mismatch");
    if (query.rows() == 0)
      throw std::invalid_argument("query must have at least one row");
    if (!query.allFinite())
      throw std::invalid_argument("query must be finite");
  }

  KernelParams params_;
  Eigen::MatrixXd train_inputs_;
  Eigen::VectorXd train_targets_;
  double noise_;
  Eigen::VectorXd weights_;
  LowRankPrecision precision_;
  MeanFunction prior_mean_;
};

inline CombinedPosterior make_posterior(const KernelParams& params,
                                        Eigen::MatrixXd train_inputs,
                                        Eigen::VectorXd train_targets,
                                        double noise, const SolverState& state,
                                        MeanFunction prior_mean = {}) {
  return CombinedPosterior(params, std::move(train_inputs),
                           std::move(train_targets), noise, state.v,
                           snapshot_precision(state), std::move(prior_mean));
}

// Folds new observations into an existing run by zero-padding every stored
// direction: the old posterior is reproduced exactly on the old points and
// further solver steps act on the concatenated system. Returns the extended
// posterior and a solver state ready to continue.
inline std::pair<CombinedPosterior, SolverState> extend_online(
    const CombinedPosterior& post, const SolverState& state,
    const Eigen::MatrixXd& new_inputs, const Eigen::VectorXd& new_targets) {
  const Eigen::Index n = post.train_inputs().rows();
  const Eigen::Index p = new_inputs.rows();
  if (state.v.size() != n)
    throw std::invalid_argument("extend_online: state does not match posterior");
  if (new_inputs.cols() != post.train_inputs().cols())
    throw std::invalid_argument("extend_online: dimension mismatch");
  if (new_targets.size() != p || p < 1)
    throw std::invalid_argument("extend_online: bad new targets");

  Eigen::MatrixXd inputs(n + p, post.train_inputs().cols());
  inputs.topRows(n) = post.train_inputs();
  inputs.bottomRows(p) = new_inputs;
  Eigen::VectorXd targets(n + p);
  targets << post.train_targets(), new_targets;

  const Eigen::MatrixXd cross =
      kernel_cross(post.params(), new_inputs, post.train_inputs());

  SolverState extended(Eigen::VectorXd::Zero(n + p));
  extended.iteration = state.iteration;
  extended.v.head(n) = state.v;
  extended.residual.head(n) = state.residual;
  extended.residual.tail(p) = new_targets -
                              mean_values(post.prior_mean(), new_inputs) -
                              cross * state.v;
  extended.directions.reserve(state.directions.size());
  for (const Direction& dir : state.directions) {
    Direction padded;
    padded.d = Eigen::VectorXd::Zero(n + p);
    padded.d.head(n) = dir.d;
    padded.khat_d = Eigen::VectorXd::Zero(n + p);
    padded.khat_d.head(n) = dir.khat_d;
    padded.khat_d.tail(p) = cross * dir.d;
    padded.eta = dir.eta;
    extended.directions.push_back(std::move(padded));
  }
  for (const Eigen::VectorXd& action : state.actions) {
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(n + p);
    padded.head(n) = action;
    extended.actions.push_back(std::move(padded));
  }

  CombinedPosterior out(post.params(), inputs, targets, post.noise(),
                        extended.v, snapshot_precision(extended),
                        post.prior_mean());
  return {std::move(out), std::move(extended)};
}

}  // namespace itergp
