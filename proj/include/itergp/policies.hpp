#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "itergp/errors.hpp"
#include "itergp/kernels.hpp"
#include "itergp/random.hpp"
#include "itergp/solver.hpp"

namespace itergp {

struct Preconditioner {
  // Empty function = identity.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_inverse;
  Eigen::Index rank = 0;
  std::string description = "identity";

  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const {
    return apply_inverse ? apply_inverse(v) : v;
  }
  bool is_identity() const { return !apply_inverse; }
};

inline Preconditioner make_identity_preconditioner() { return {}; }

inline Preconditioner make_diagonal_preconditioner(Eigen::VectorXd diag) {
  if ((diag.array() <= 0.0).any())
    throw std::invalid_argument("diagonal preconditioner must be positive");
  Preconditioner p;
  p.description = "diagonal";
  p.apply_inverse = [d = std::move(diag)](const Eigen::VectorXd& v) {
    if (v.size() != d.size())
      throw std::invalid_argument("preconditioner: length mismatch");
    return (v.array() / d.array()).matrix().eval();
  };
  return p;
}

inline Preconditioner make_jacobi_preconditioner(
    const KernelMatrixHandle& khat) {
  return make_diagonal_preconditioner(
      Eigen::VectorXd::Constant(khat.size(), khat.diagonal_value()));
}

// P-hat = Q_l + noise I from the byproducts of l completed solver steps,
// applied through the Woodbury identity in O(n * l) per solve. The low-rank
// factor columns are K-hat d_j / sqrt(eta_j).
inline Preconditioner make_partial_cholesky_preconditioner(
    const SolverState& state, double noise) {
  const Eigen::Index l = static_cast<Eigen::Index>(state.directions.size());
  if (l < 1)
    throw std::invalid_argument(
        "partial-Cholesky preconditioner needs at least one completed step");
  if (!(noise > 0.0))
    throw std::invalid_argument(
        "partial-Cholesky preconditioner needs positive noise");
  const Eigen::Index n = state.v.size();
  Eigen::MatrixXd u(n, l);
  for (Eigen::Index j = 0; j < l; ++j) {
    const Direction& dir = state.directions[static_cast<size_t>(j)];
    u.col(j) = dir.khat_d / std::sqrt(dir.eta);
  }
  Eigen::MatrixXd small = u.transpose() * u;
  small.diagonal().array() += noise;
  Eigen::LLT<Eigen::MatrixXd> llt(small);
  if (llt.info() != Eigen::Success)
    throw NumericalError("partial-Cholesky preconditioner: factorization failed");
  Preconditioner p;
  p.rank = l;
  p.description = "partial-cholesky:" + std::to_string(l);
  p.apply_inverse = [u = std::move(u), llt = std::move(llt),
                     noise](const Eigen::VectorXd& v) {
    if (v.size() != u.rows())
      throw std::invalid_argument("preconditioner: length mismatch");
    return ((v - u * llt.solve(u.transpose() * v)) / noise).eval();
  };
  return p;
}

enum class UnitVectorOrder { Natural, MaxResidualDiag };

// Coordinate actions e_j. Natural order walks indices; MaxResidualDiag picks
// the largest diagonal of K-hat - Q_i among unused indices (ties toward the
// lowest index), which reproduces greedy pivoted Cholesky.
class UnitVectorPolicy : public Policy {
 public:
  explicit UnitVectorPolicy(UnitVectorOrder order = UnitVectorOrder::MaxResidualDiag)
      : order_(order) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState& state, const KernelMatrixHandle& khat) override {
    const Eigen::Index n = khat.size();
    if (used_.empty()) {
      used_.assign(static_cast<size_t>(n), false);
      diag_q_ = Eigen::VectorXd::Zero(n);
    }
    sync_diag(state);
    Eigen::Index pick = -1;
    if (order_ == UnitVectorOrder::Natural) {
      for (Eigen::Index j = 0; j < n; ++j)
        if (!used_[static_cast<size_t>(j)]) {
          pick = j;
          break;
        }
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (used_[static_cast<size_t>(j)]) continue;
        const double val = khat.diagonal_value() - diag_q_[j];
        if (val > best) {
          best = val;
          pick = j;
        }
      }
    }
    if (pick < 0) return std::nullopt;
    used_[static_cast<size_t>(pick)] = true;
    pivots_.push_back(pick);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[pick] = 1.0;
    return e;
  }

  bool skip_degenerate() const override { return true; }
  std::string name() const override {
    return order_ == UnitVectorOrder::Natural ? "unit-natural" : "unit-pivoted";
  }
  const std::vector<Eigen::Index>& pivot_sequence() const { return pivots_; }

 private:
  void sync_diag(const SolverState& state) {
    for (; synced_ < state.directions.size(); ++synced_) {
      const Direction& dir = state.directions[synced_];
      diag_q_.array() += dir.khat_d.array().square() / dir.eta;
    }
  }

  UnitVectorOrder order_;
  std::vector<bool> used_;
  std::vector<Eigen::Index> pivots_;
  Eigen::VectorXd diag_q_;
  size_t synced_ = 0;
};

// Current (preconditioned) residual as the action; reproduces preconditioned
// CG through the solver's conjugacy projections.
class ResidualPolicy : public Policy {
 public:
  explicit ResidualPolicy(Preconditioner precond = {})
      : precond_(std::move(precond)) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState& state, const KernelMatrixHandle&) override {
    if (state.residual.isZero(0.0)) return std::nullopt;
    return precond_(state.residual);
  }

  std::string name() const override {
    return "residual[" + precond_.description + "]";
  }

 private:
  Preconditioner precond_;
};

// Explicit two-term CG direction recursion: the new action is the
// preconditioned residual K-hat-orthogonalized against the previous action,
// reusing the K-hat image the solver already computed for it.
class ConjugateResidualPolicy : public Policy {
 public:
  explicit ConjugateResidualPolicy(Preconditioner precond = {})
      : precond_(std::move(precond)) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState& state, const KernelMatrixHandle&) override {
    if (state.residual.isZero(0.0)) return std::nullopt;
    Eigen::VectorXd z = precond_(state.residual);
    if (prev_action_.size() == 0) return z;
    return (z - (z.dot(prev_khat_action_) / prev_sqnorm_) * prev_action_)
        .eval();
  }

  void accepted(const StepRecord& record) override {
    prev_action_ = record.action;
    prev_khat_action_ = record.khat_action;
    prev_sqnorm_ = record.action_sqnorm_khat;
  }

  std::string name() const override {
    return "conjugate-residual[" + precond_.description + "]";
  }

 private:
  Preconditioner precond_;
  Eigen::VectorXd prev_action_;
  Eigen::VectorXd prev_khat_action_;
  double prev_sqnorm_ = 0.0;
};

// Kernel-weighted actions k(X, z_i), one per inducing point.
class PseudoInputPolicy : public Policy {
 public:
  explicit PseudoInputPolicy(Eigen::MatrixXd inducing)
      : inducing_(std::move(inducing)) {
    if (inducing_.rows() == 0)
      throw std::invalid_argument("pseudo-input policy needs inducing points");
  }

  std::optional<Eigen::VectorXd> next_action(
      const SolverState&, const KernelMatrixHandle& khat) override {
    if (next_ >= inducing_.rows()) return std::nullopt;
    if (inducing_.cols() != khat.dim())
      throw std::invalid_argument("pseudo-input: inducing dimension mismatch");
    Eigen::VectorXd action =
        kernel_cross(khat.params(), khat.inputs(), inducing_.row(next_));
    ++next_;
    return action;
  }

  bool skip_degenerate() const override { return true; }
  std::string name() const override {
    return "pseudo-input:" + std::to_string(inducing_.rows());
  }
  const Eigen::MatrixXd& inducing() const { return inducing_; }

 private:
  Eigen::MatrixXd inducing_;
  Eigen::Index next_ = 0;
};

// Eigenvectors of the densified K-hat in descending eigenvalue order. The
// upfront decomposition is O(n^3), so the policy refuses n beyond the cap.
class EigenvectorPolicy : public Policy {
 public:
  explicit EigenvectorPolicy(Eigen::Index eigen_cap = 2000)
      : eigen_cap_(eigen_cap) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState&, const KernelMatrixHandle& khat) override {
    if (vectors_.size() == 0) {
      if (khat.size() > eigen_cap_)
        throw std::invalid_argument(
            "eigenvector policy: problem size exceeds eigen_cap");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(khat.densify());
      if (eig.info() != Eigen::Success)
        throw NumericalError("eigenvector policy: decomposition failed");
      vectors_ = eig.eigenvectors().rowwise().reverse().eval();
      values_ = eig.eigenvalues().reverse().eval();
    }
    if (next_ >= vectors_.cols()) return std::nullopt;
    return vectors_.col(next_++).eval();
  }

  bool skip_degenerate() const override { return true; }
  std::string name() const override { return "eigen"; }
  const Eigen::VectorXd& eigenvalues() const { return values_; }

 private:
  Eigen::Index eigen_cap_;
  Eigen::MatrixXd vectors_;
  Eigen::VectorXd values_;
  Eigen::Index next_ = 0;
};

// Independent standard-normal actions; same seed, same sequence.
class RandomPolicy : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed), seed_(seed) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState&, const KernelMatrixHandle& khat) override {
    return standard_normal_vector(rng_, khat.size());
  }

  bool skip_degenerate() const override { return true; }
  std::string name() const override {
    return "random:" + std::to_string(seed_);
  }

 private:
  Rng rng_;
  std::uint64_t seed_;
};

// Replays a fixed action list; used for scripted and padded-replay runs.
class FixedActionsPolicy : public Policy {
 public:
  explicit FixedActionsPolicy(std::vector<Eigen::VectorXd> actions)
      : actions_(std::move(actions)) {}

  std::optional<Eigen::VectorXd> next_action(const SolverState&,
                                             const KernelMatrixHandle&) override {
    if (next_ >= actions_.size()) return std::nullopt;
    return actions_[next_++];
  }

  bool skip_degenerate() const override { return true; }
  std::string name() const override { return "fixed"; }

 private:
  std::vector<Eigen::VectorXd> actions_;
  size_t next_ = 0;
};

// Runs `first` for switch_at accepted steps (or until it is exhausted), then
// builds the follow-up policy from the solver state at the switch. With unit
// actions first and residual actions after, this is deflated (optionally
// preconditioned) CG.
class MixedPolicy : public Policy {
 public:
  using ThenFactory = std::function<std::unique_ptr<Policy>(
      const SolverState&, const KernelMatrixHandle&)>;

  MixedPolicy(std::unique_ptr<Policy> first, Eigen::Index switch_at,
              ThenFactory then_factory)
      : first_(std::move(first)),
        switch_at_(switch_at),
        then_factory_(std::move(then_factory)) {
    if (switch_at_ < 0)
      throw std::invalid_argument("mixed policy: switch_at must be >= 0");
  }

  MixedPolicy(std::unique_ptr<Policy> first, Eigen::Index switch_at,
              std::unique_ptr<Policy> then)
      : MixedPolicy(std::move(first), switch_at,
                    [t = std::shared_ptr<Policy>(std::move(then))](
                        const SolverState&, const KernelMatrixHandle&) mutable {
                      return std::unique_ptr<Policy>(
                          new ForwardingPolicy(std::move(t)));
                    }) {}

  std::optional<Eigen::VectorXd> next_action(
      const SolverState& state, const KernelMatrixHandle& khat) override {
    if (!switched_ && state.iteration < switch_at_) {
      if (auto action = first_->next_action(state, khat)) {
        active_ = first_.get();
        return action;
      }
    }
    if (!switched_) {
      switched_ = true;
      then_ = then_factory_(state, khat);
    }
    active_ = then_.get();
    return then_->next_action(state, khat);
  }

  void accepted(const StepRecord& record) override {
    if (active_) active_->accepted(record);
  }

  bool skip_degenerate() const override {
    return active_ ? active_->skip_degenerate() : false;
  }

  std::string name() const override {
    return "mixed[" + first_->name() + ":" + std::to_string(switch_at_) + "]";
  }

 private:
  // Adapts a shared_ptr sub-policy to the unique_ptr factory signature.
  class ForwardingPolicy : public Policy {
   public:
    explicit ForwardingPolicy(std::shared_ptr<Policy> inner)
        : inner_(std::move(inner)) {}
    std::optional<Eigen::VectorXd> next_action(
        const SolverState& state, const KernelMatrixHandle& khat) override {
      return inner_->next_action(state, khat);
    }
    void accepted(const StepRecord& record) override {
      inner_->accepted(record);
    }
    bool skip_degenerate() const override { return inner_->skip_degenerate(); }
    std::string name() const override { return inner_->name(); }

   private:
    std::shared_ptr<Policy> inner_;
  };

  std::unique_ptr<Policy> first_;
  Eigen::Index switch_at_;
  ThenFactory then_factory_;
  std::unique_ptr<Policy> then_;
  Policy* active_ = nullptr;
  bool switched_ = false;
};

inline std::unique_ptr<Policy> mixed_policy(std::unique_ptr<Policy> first,
                                            Eigen::Index switch_at,
                                            std::unique_ptr<Policy> then) {
  return std::make_unique<MixedPolicy>(std::move(first), switch_at,
                                       std::move(then));
}

// ---- CLI policy codes ----

struct PolicySpec {
  enum class Kind {
    UnitNatural,     // chol
    UnitPivoted,     // chol-pivoted
    Cg,              // cg
    CgPrecond,       // cg-precond:<l>
    PseudoInput,     // pseudo-input:<m or csv path>
    Eigenvectors,    // eig
    Random,          // random:<seed>
  };

  Kind kind = Kind::Cg;
  Eigen::Index precond_rank = 0;
  Eigen::Index inducing_count = 0;
  std::string inducing_path;
  std::uint64_t seed = 0;
  std::string code = "cg";
};

inline PolicySpec parse_policy_code(const std::string& code) {
  PolicySpec spec;
  spec.code = code;
  const auto colon = code.find(':');
  const std::string head = code.substr(0, colon);
  const std::string arg =
      colon == std::string::npos ? "" : code.substr(colon + 1);
  auto parse_count = [&](const std::string& s) -> Eigen::Index {
    try {
      size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size() || v < 0) throw std::invalid_argument(s);
      return static_cast<Eigen::Index>(v);
    } catch (const std::exception&) {
      throw ConfigError("policy code '" + code + "': bad numeric argument");
    }
  };
  if (head == "chol" && arg.empty()) {
    spec.kind = PolicySpec::Kind::UnitNatural;
  } else if (head == "chol-pivoted" && arg.empty()) {
    spec.kind = PolicySpec::Kind::UnitPivoted;
  } else if (head == "cg" && arg.empty()) {
    spec.kind = PolicySpec::Kind::Cg;
  } else if (head == "cg-precond") {
    spec.kind = PolicySpec::Kind::CgPrecond;
    if (arg.empty())
      throw ConfigError("policy code 'cg-precond' needs a rank argument");
    spec.precond_rank = parse_count(arg);
  } else if (head == "pseudo-input") {
    spec.kind = PolicySpec::Kind::PseudoInput;
    if (arg.empty())
      throw ConfigError("policy code 'pseudo-input' needs a count or path");
    if (std::all_of(arg.begin(), arg.end(),
                    [](unsigned char c) { return std::isdigit(c); })) {
      spec.inducing_count = parse_count(arg);
      if (spec.inducing_count < 1)
        throw ConfigError("pseudo-input count must be >= 1");
    } else {
      spec.inducing_path = arg;
    }
  } else if (head == "eig" && arg.empty()) {
    spec.kind = PolicySpec::Kind::Eigenvectors;
  } else if (head == "random") {
    spec.kind = PolicySpec::Kind::Random;
    if (arg.empty())
      throw ConfigError("policy code 'random' needs a seed argument");
    spec.seed = static_cast<std::uint64_t>(parse_count(arg));
  } else {
    throw ConfigError("unknown policy code: " + code);
  }
  return spec;
}

// Draws `count` distinct training rows as inducing points (Fisher-Yates on
// the index set, so the selection is reproducible across platforms).
inline Eigen::MatrixXd sample_inducing_rows(const Eigen::MatrixXd& inputs,
                                            Eigen::Index count,
                                            std::uint64_t seed) {
  const Eigen::Index n = inputs.rows();
  if (count < 1 || count > n)
    throw std::invalid_argument("inducing count out of range");
  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  for (Eigen::Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  Eigen::MatrixXd z(count, inputs.cols());
  for (Eigen::Index i = 0; i < count; ++i)
    z.row(i) = inputs.row(idx[static_cast<size_t>(i)]);
  return z;
}

// Instantiates the runtime policy for a parsed code. pseudo-input:<path>
// callers must pass the loaded inducing matrix.
inline std::unique_ptr<Policy> make_policy(
    const PolicySpec& spec, const KernelMatrixHandle& khat,
    std::uint64_t run_seed,
    std::optional<Eigen::MatrixXd> inducing = std::nullopt) {
  switch (spec.kind) {
    case PolicySpec::Kind::UnitNatural:
      return std::make_unique<UnitVectorPolicy>(UnitVectorOrder::Natural);
    case PolicySpec::Kind::UnitPivoted:
      return std::make_unique<UnitVectorPolicy>(UnitVectorOrder::MaxResidualDiag);
    case PolicySpec::Kind::Cg:
      return std::make_unique<ResidualPolicy>();
    case PolicySpec::Kind::CgPrecond: {
      const double noise = khat.noise();
      auto factory = [noise](const SolverState& state,
                             const KernelMatrixHandle&) {
        Preconditioner p = state.directions.empty()
                               ? make_identity_preconditioner()
                               : make_partial_cholesky_preconditioner(state, noise);
        return std::make_unique<ResidualPolicy>(std::move(p));
      };
      return std::make_unique<MixedPolicy>(
          std::make_unique<UnitVectorPolicy>(UnitVectorOrder::MaxResidualDiag),
          spec.precond_rank, std::move(factory));
    }
    case PolicySpec::Kind::PseudoInput: {
      if (inducing) return std::make_unique<PseudoInputPolicy>(*inducing);
      if (!spec.inducing_path.empty())
        throw std::invalid_argument(
            "pseudo-input path policies need a preloaded inducing matrix");
      return std::make_unique<PseudoInputPolicy>(
          sample_inducing_rows(khat.inputs(), spec.inducing_count, run_seed));
    }
    case PolicySpec::Kind::Eigenvectors:
      return std::make_unique<EigenvectorPolicy>();
    case PolicySpec::Kind::Random:
      return std::make_unique<RandomPolicy>(spec.seed);
  }
  throw std::invalid_argument("unknown policy kind");
}

}  // namespace itergp
