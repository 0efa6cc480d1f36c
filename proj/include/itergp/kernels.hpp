#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "itergp/errors.hpp"

namespace itergp {

// Prior mean; an empty function means the zero mean.
using MeanFunction = std::function<double(const Eigen::RowVectorXd&)>;

inline Eigen::VectorXd mean_values(const MeanFunction& mean,
                                   const Eigen::MatrixXd& x) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  if (mean)
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = mean(x.row(i));
  return out;
}

enum class KernelFamily { RBF, Matern12, Matern32, Matern52 };

inline std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::RBF: return "rbf";
    case KernelFamily::Matern12: return "matern12";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::Matern52: return "matern52";
  }
  throw std::invalid_argument("unknown kernel family");
}

inline KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "rbf") return KernelFamily::RBF;
  if (name == "matern12") return KernelFamily::Matern12;
  if (name == "matern32") return KernelFamily::Matern32;
  if (name == "matern52") return KernelFamily::Matern52;
  throw std::invalid_argument("unknown kernel family: " + name);
}

struct KernelParams {
  KernelFamily family = KernelFamily::RBF;
  double lengthscale = 1.0;
  double output_scale = 1.0;

  void validate() const {
    if (!(std::isfinite(lengthscale) && lengthscale > 0.0))
      throw std::invalid_argument("kernel lengthscale must be finite and > 0");
    if (!(std::isfinite(output_scale) && output_scale > 0.0))
      throw std::invalid_argument("kernel output_scale must be finite and > 0");
  }
};

// Stationary covariance value from a squared distance. Squared distances are
// clamped at zero to guard against cancellation in callers that assemble them
// from dot products.
inline double kernel_value_from_sqdist(const KernelParams& p, double sqdist) {
  const double r2 = sqdist > 0.0 ? sqdist : 0.0;
  const double o = p.output_scale;
  const double ell = p.lengthscale;
  switch (p.family) {
    case KernelFamily::RBF:
      return o * std::exp(-0.5 * r2 / (ell * ell));
    case KernelFamily::Matern12: {
      const double t = std::sqrt(r2) / ell;
      return o * std::exp(-t);
    }
    case KernelFamily::Matern32: {
      const double t = std::sqrt(3.0 * r2) / ell;
      return o * (1.0 + t) * std::exp(-t);
    }
    case KernelFamily::Matern52: {
      const double t = std::sqrt(5.0 * r2) / ell;
      return o * (1.0 + t + t * t / 3.0) * std::exp(-t);
    }
  }
  throw std::invalid_argument("unknown kernel family");
}

template <typename DerivedA, typename DerivedB>
double kernel_eval(const KernelParams& p, const Eigen::MatrixBase<DerivedA>& x,
                   const Eigen::MatrixBase<DerivedB>& x2) {
  p.validate();
  if (x.size() != x2.size())
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  double sqdist = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double a = x(k), b = x2(k);
    if (!(std::isfinite(a) && std::isfinite(b)))
      throw std::invalid_argument("kernel_eval: non-finite input");
    const double diff = a - b;
    sqdist += diff * diff;
  }
  return kernel_value_from_sqdist(p, sqdist);
}

// Dense block of cross-covariances, entry (i, j) = k(A_i, B_j); the distance
// accumulation is the same fixed-order loop as kernel_eval, so entries match
// pointwise evaluation bit for bit.
inline Eigen::MatrixXd kernel_cross(const KernelParams& p,
                                    const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& b) {
  p.validate();
  if (a.cols() != b.cols())
    throw std::invalid_argument("kernel_cross: dimension mismatch");
  if (!a.allFinite() || !b.allFinite())
    throw std::invalid_argument("kernel_cross: non-finite input");
  const Eigen::Index d = a.cols();
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double sqdist = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = a(i, k) - b(j, k);
        sqdist += diff * diff;
      }
      out(i, j) = kernel_value_from_sqdist(p, sqdist);
    }
  return out;
}

enum class CacheMode { Auto, Dense, Blocked };

inline int env_thread_count() {
  if (const char* s = std::getenv("ITERGP_THREADS")) {
    const int t = std::atoi(s);
    if (t >= 1) return t;
  }
  return 1;
}

// K-hat = K(X, X) + noise * I, exposed only through matrix-vector products.
// Dense mode materializes the matrix once; blocked mode re-evaluates kernel
// rows per product in fixed-size row blocks (never more than block_rows * n
// transient entries). Every product increments an instrumentation counter.
class KernelMatrixHandle {
 public:
  static constexpr Eigen::Index kDenseLimit = 10000;
  static constexpr Eigen::Index kBlockRows = 1024;

  KernelMatrixHandle(KernelParams params, Eigen::MatrixXd inputs, double noise,
                     CacheMode mode = CacheMode::Auto)
      : params_(params), inputs_(std::move(inputs)), noise_(noise) {
    params_.validate();
    if (!(std::isfinite(noise_) && noise_ >= 0.0))
      throw std::invalid_argument("noise variance must be finite and >= 0");
    if (inputs_.rows() == 0)
      throw std::invalid_argument("kernel matrix needs at least one input row");
    if (!inputs_.allFinite())
      throw std::invalid_argument("kernel inputs must be finite");
    dense_ = mode == CacheMode::Dense ||
             (mode == CacheMode::Auto && inputs_.rows() <= kDenseLimit);
    if (dense_) {
      cache_ = kernel_cross(params_, inputs_, inputs_);
      cache_.diagonal().array() += noise_;
    }
    threads_ = env_thread_count();
  }

  Eigen::Index size() const { return inputs_.rows(); }
  Eigen::Index dim() const { return inputs_.cols(); }
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  const KernelParams& params() const { return params_; }
  double noise() const { return noise_; }
  bool is_dense() const { return dense_; }

  // k(x, x) + noise; constant across rows for stationary families.
  double diagonal_value() const { return params_.output_scale + noise_; }

  long matvec_count() const { return matvec_count_; }

  Eigen::VectorXd matvec(const Eigen::VectorXd& v) const {
    if (v.size() != size())
      throw std::invalid_argument("matvec: length mismatch");
    ++matvec_count_;
    if (dense_) return cache_ * v;
    return blocked_matvec(v);
  }

  // Dense view of K-hat for oracles and spectrum probes; builds on demand in
  // blocked mode.
  Eigen::MatrixXd densify() const {
    if (dense_) return cache_;
    Eigen::MatrixXd full = kernel_cross(params_, inputs_, inputs_);
    full.diagonal().array() += noise_;
    return full;
  }

 private:
  Eigen::VectorXd blocked_matvec(const Eigen::VectorXd& v) const {
    const Eigen::Index n = size();
    Eigen::VectorXd out(n);
    const Eigen::Index nblocks = (n + kBlockRows - 1) / kBlockRows;
    auto run_block = [&](Eigen::Index b) {
      const Eigen::Index lo = b * kBlockRows;
      const Eigen::Index rows = std::min(kBlockRows, n - lo);
      Eigen::MatrixXd block =
          kernel_cross(params_, inputs_.middleRows(lo, rows), inputs_);
      out.segment(lo, rows) = block * v + noise_ * v.segment(lo, rows);
    };
    if (threads_ <= 1 || nblocks <= 1) {
      for (Eigen::Index b = 0; b < nblocks; ++b) run_block(b);
      return out;
    }
    // Blocks write disjoint output rows, so the reduction order inside each
    // row is identical regardless of how blocks are scheduled.
    std::vector<std::thread> pool;
    std::atomic<Eigen::Index> next{0};
    const int workers = static_cast<int>(
        std::min<Eigen::Index>(threads_, nblocks));
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (Eigen::Index b = next.fetch_add(1); b < nblocks;
             b = next.fetch_add(1))
          run_block(b);
      });
    for (auto& th : pool) th.join();
    return out;
  }

  KernelParams params_;
  Eigen::MatrixXd inputs_;
  double noise_ = 0.0;
  bool dense_ = false;
  int threads_ = 1;
  Eigen::MatrixXd cache_;
  mutable long matvec_count_ = 0;
};

}  // namespace itergp
