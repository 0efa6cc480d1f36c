#pragma once

// Classical dense reference implementations used by tests, the acceptance
// suite, and explicit opt-in CLI paths. Everything here is O(n^2) memory /
// O(n^3) time and deliberately shares no arithmetic with the solver module.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "itergp/kernels.hpp"

namespace itergp::oracles {

using PrecondInverse = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline PrecondInverse identity_precond() {
  return [](const Eigen::VectorXd& v) { return v; };
}

// Exact GP regression via one dense Cholesky factorization of K-hat.
class ExactGP {
 public:
  ExactGP(KernelParams params, Eigen::MatrixXd inputs, Eigen::VectorXd targets,
          double noise, MeanFunction mean = {})
      : params_(params),
        inputs_(std::move(inputs)),
        targets_(std::move(targets)),
        noise_(noise),
        mean_(std::move(mean)) {
    params_.validate();
    if (targets_.size() != inputs_.rows())
      throw std::invalid_argument("ExactGP: inputs/targets size mismatch");
    if (!(std::isfinite(noise_) && noise_ >= 0.0))
      throw std::invalid_argument("ExactGP: noise must be finite and >= 0");
    khat_ = kernel_cross(params_, inputs_, inputs_);
    khat_.diagonal().array() += noise_;
    factorize();
    v_star_ = solve(targets_ - mean_values(mean_, inputs_));
  }

  const Eigen::MatrixXd& khat() const { return khat_; }
  const Eigen::VectorXd& v_star() const { return v_star_; }
  double jitter_used() const { return jitter_used_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != inputs_.rows())
      throw std::invalid_argument("ExactGP::solve: length mismatch");
    return llt_.solve(rhs);
  }

  Eigen::VectorXd posterior_mean(const Eigen::MatrixXd& query) const {
    return mean_values(mean_, query) +
           kernel_cross(params_, query, inputs_) * v_star_;
  }

  Eigen::MatrixXd posterior_cov(const Eigen::MatrixXd& query) const {
    const Eigen::MatrixXd cross = kernel_cross(params_, query, inputs_);
    Eigen::MatrixXd cov = kernel_cross(params_, query, query) -
                          cross * solve_columns(cross.transpose());
    return 0.5 * (cov + cov.transpose());
  }

  // Smallest eigenvalue of the noise-free kernel matrix K(X, X).
  double lambda_min_kernel() const {
    Eigen::MatrixXd k = khat_;
    k.diagonal().array() -= noise_;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        k, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
  }

  double condition_number() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        khat_, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
  }

 private:
  void factorize() {
    double jitter = 0.0;
    for (int attempt = 0; attempt < 6; ++attempt) {
      Eigen::MatrixXd shifted = khat_;
      shifted.diagonal().array() += jitter;
      llt_.compute(shifted);
      if (llt_.info() == Eigen::Success) {
        jitter_used_ = jitter;
        khat_ = shifted;
        return;
      }
      jitter = jitter == 0.0 ? 1e-10 * params_.output_scale : 10.0 * jitter;
    }
    throw NumericalError("ExactGP: Cholesky failed even with jitter");
  }

  Eigen::MatrixXd solve_columns(const Eigen::MatrixXd& rhs) const {
    return llt_.solve(rhs);
  }

  KernelParams params_;
  Eigen::MatrixXd inputs_;
  Eigen::VectorXd targets_;
  double noise_;
  MeanFunction mean_;
  Eigen::MatrixXd khat_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd v_star_;
  double jitter_used_ = 0.0;
};

struct PartialCholesky {
  // L has one row per pivot in pivot order: row r corresponds to original
  // index order[r], so P' Q_i P = L_i L_i' with P the order permutation.
  Eigen::MatrixXd l;
  std::vector<Eigen::Index> order;
};

// Left-looking partial Cholesky of a dense SPD matrix, stopping after k
// pivots taken in the given order.
inline PartialCholesky partial_cholesky(const Eigen::MatrixXd& a,
                                        const std::vector<Eigen::Index>& order,
                                        Eigen::Index k) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("partial_cholesky: not square");
  if (static_cast<Eigen::Index>(order.size()) != n)
    throw std::invalid_argument("partial_cholesky: order must list all indices");
  if (k < 0 || k > n)
    throw std::invalid_argument("partial_cholesky: bad rank");
  Eigen::MatrixXd work(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c)
      work(r, c) = a(order[static_cast<size_t>(r)],
                     order[static_cast<size_t>(c)]);
  PartialCholesky out;
  out.order = order;
  out.l = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double pivot = work(i, i);
    if (!(pivot > 0.0))
      throw NumericalError("partial_cholesky: nonpositive pivot");
    out.l.col(i) = work.col(i) / std::sqrt(pivot);
    work -= out.l.col(i) * out.l.col(i).transpose();
  }
  return out;
}

// Greedy diagonal pivoting: each step takes the largest remaining Schur
// complement diagonal, ties broken toward the lowest index.
inline PartialCholesky pivoted_partial_cholesky(const Eigen::MatrixXd& a,
                                                Eigen::Index k) {
  const Eigen::Index n = a.rows();
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  Eigen::MatrixXd work = a;
  std::vector<bool> used(static_cast<size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!used[static_cast<size_t>(j)] && work(j, j) > best_val) {
        best = j;
        best_val = work(j, j);
      }
    order[static_cast<size_t>(i)] = best;
    used[static_cast<size_t>(best)] = true;
    if (i < k && best_val > 0.0)
      work -= work.col(best) * work.col(best).transpose() / best_val;
  }
  return partial_cholesky(a, order, k);
}

struct PcgIterate {
  Eigen::VectorXd v;
  double residual_norm = 0.0;  // of the recurrence residual after the step
};

// Textbook preconditioned CG starting from v = 0: incremental residual,
// beta direction recursion. Records every iterate.
inline std::vector<PcgIterate> pcg(const Eigen::MatrixXd& a,
                                   const Eigen::VectorXd& b,
                                   const PrecondInverse& precond_inverse,
                                   Eigen::Index max_iterations,
                                   double abstol = 0.0, double reltol = 0.0) {
  if (a.rows() != a.cols() || b.size() != a.rows())
    throw std::invalid_argument("pcg: shape mismatch");
  const double bnorm = b.norm();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = precond_inverse(r);
  Eigen::VectorXd s = z;
  double rz = r.dot(z);
  std::vector<PcgIterate> iterates;
  for (Eigen::Index i = 1; i <= max_iterations; ++i) {
    if (r.norm() <= std::max(reltol * bnorm, abstol)) break;
    const Eigen::VectorXd a_s = a * s;
    const double s_a_s = s.dot(a_s);
    if (!(s_a_s > 0.0)) throw NumericalError("pcg: direction breakdown");
    const double alpha = rz / s_a_s;
    v += alpha * s;
    r -= alpha * a_s;
    iterates.push_back({v, r.norm()});
    z = precond_inverse(r);
    const double rz_next = r.dot(z);
    s = z + (rz_next / rz) * s;
    rz = rz_next;
  }
  return iterates;
}

// Deflated preconditioned CG (Saad et al.): the initial guess solves the
// projected system on span(W) and every search direction is kept A-orthogonal
// to W. Returns x_0 followed by one iterate per CG step.
inline std::vector<Eigen::VectorXd> deflated_cg(
    const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
    const Eigen::MatrixXd& w, const PrecondInverse& precond_inverse,
    Eigen::Index iterations) {
  if (a.rows() != a.cols() || b.size() != a.rows() || w.rows() != a.rows())
    throw std::invalid_argument("deflated_cg: shape mismatch");
  const Eigen::MatrixXd aw = a * w;
  const Eigen::LDLT<Eigen::MatrixXd> wtaw((w.transpose() * aw).eval());
  auto deflate = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return w * wtaw.solve(aw.transpose() * z);
  };
  std::vector<Eigen::VectorXd> iterates;
  Eigen::VectorXd x = w * wtaw.solve(w.transpose() * b);
  iterates.push_back(x);
  Eigen::VectorXd r = b - a * x;
  Eigen::VectorXd z = precond_inverse(r);
  Eigen::VectorXd p = z - deflate(z);
  double rz = r.dot(z);
  for (Eigen::Index j = 0; j < iterations; ++j) {
    const Eigen::VectorXd ap = a * p;
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) throw NumericalError("deflated_cg: direction breakdown");
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    z = precond_inverse(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p - deflate(z);
    rz = rz_next;
    iterates.push_back(x);
  }
  return iterates;
}

// Inducing-point (Nystroem / subset-of-regressors) posterior mean. Both
// standard algebraic forms are assembled independently and their agreement on
// the training inputs is recorded; rank-deficient inducing sets fall back to
// pseudo-inverses and set a warning flag.
class NystromMean {
 public:
  NystromMean(KernelParams params, const Eigen::MatrixXd& inputs,
              const Eigen::VectorXd& targets, Eigen::MatrixXd inducing,
              double noise, MeanFunction mean = {})
      : params_(params), inducing_(std::move(inducing)), mean_(mean) {
    params_.validate();
    if (inputs.rows() != targets.size())
      throw std::invalid_argument("NystromMean: inputs/targets mismatch");
    if (inducing_.cols() != inputs.cols())
      throw std::invalid_argument("NystromMean: inducing dimension mismatch");
    const Eigen::VectorXd shifted = targets - mean_values(mean_, inputs);
    const Eigen::MatrixXd kxz = kernel_cross(params_, inputs, inducing_);
    const Eigen::MatrixXd kzz = kernel_cross(params_, inducing_, inducing_);
    const Eigen::Index m = inducing_.rows();

    // Form 1: k(., Z) (K_ZX K_XZ + noise K_ZZ)^{-1} K_ZX (y - mu).
    Eigen::MatrixXd gram1 =
        kxz.transpose() * kxz + noise * kzz;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod1(gram1);
    weights_ = cod1.solve(kxz.transpose() * shifted);
    used_pseudo_inverse_ = cod1.rank() < m;

    // Form 2: q(., X) K_XZ (K_ZX (Q + noise I) K_XZ)^{-1} K_ZX (y - mu) with
    // Q = K_XZ K_ZZ^{-1} K_ZX; reduces to inducing-space weights through
    // K_ZZ^{-1}.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> codz(kzz);
    used_pseudo_inverse_ = used_pseudo_inverse_ || codz.rank() < m;
    const Eigen::MatrixXd kzz_inv_kzx = codz.solve(kxz.transpose());
    const Eigen::MatrixXd q = kxz * kzz_inv_kzx;
    Eigen::MatrixXd gram2 =
        kxz.transpose() *
        ((q + noise * Eigen::MatrixXd::Identity(inputs.rows(), inputs.rows())) *
         kxz);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod2(gram2);
    weights_form2_ =
        codz.solve(kxz.transpose() * (kxz * cod2.solve(kxz.transpose() * shifted)));
    used_pseudo_inverse_ = used_pseudo_inverse_ || cod2.rank() < m;

    const Eigen::VectorXd m1 = kxz * weights_;
    const Eigen::VectorXd m2 = kxz * weights_form2_;
    form_agreement_ = (m1 - m2).norm() / std::max(m1.norm(), 1e-300);
  }

  Eigen::VectorXd eval(const Eigen::MatrixXd& query) const {
    return mean_values(mean_, query) +
           kernel_cross(params_, query, inducing_) * weights_;
  }

  // Relative disagreement of the two algebraic forms on the training inputs.
  double form_agreement() const { return form_agreement_; }
  bool used_pseudo_inverse() const { return used_pseudo_inverse_; }
  const Eigen::VectorXd& weights() const { return weights_; }

 private:
  KernelParams params_;
  Eigen::MatrixXd inducing_;
  MeanFunction mean_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd weights_form2_;
  double form_agreement_ = 0.0;
  bool used_pseudo_inverse_ = false;
};

// Norm of sum_j coeffs_j k_sigma(., points_j) in the RKHS of
// k_sigma(x, x') = k(x, x') + noise * delta(x, x'); points must be distinct
// for the delta term to be well-defined.
inline double rkhs_norm(const KernelParams& params,
                        const Eigen::MatrixXd& points,
                        const Eigen::VectorXd& coeffs, double noise = 0.0) {
  if (points.rows() != coeffs.size())
    throw std::invalid_argument("rkhs_norm: points/coeffs mismatch");
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = i + 1; j < points.rows(); ++j)
      if ((points.row(i) - points.row(j)).squaredNorm() == 0.0)
        throw std::invalid_argument("rkhs_norm: points must be distinct");
  Eigen::MatrixXd gram = kernel_cross(params, points, points);
  gram.diagonal().array() += noise;
  const double sq = coeffs.dot(gram * coeffs);
  return std::sqrt(sq > 0.0 ? sq : 0.0);
}

// Chebyshev envelope for the relative K-hat-norm error of (preconditioned)
// CG after i steps on a system with condition number kappa.
inline double cg_error_envelope(double kappa, Eigen::Index i) {
  if (!(kappa >= 1.0))
    throw std::invalid_argument("cg_error_envelope: kappa must be >= 1");
  const double root = std::sqrt(kappa);
  return 2.0 * std::pow((root - 1.0) / (root + 1.0), static_cast<double>(i));
}

}  // namespace itergp::oracles
