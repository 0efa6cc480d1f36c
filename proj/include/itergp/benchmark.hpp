#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "itergp/datasets.hpp"
#include "itergp/kernels.hpp"
#include "itergp/policies.hpp"
#include "itergp/posterior.hpp"
#include "itergp/solver.hpp"

namespace itergp {

struct BenchmarkRow {
  std::uint64_t seed = 0;
  Eigen::Index budget = 0;
  Eigen::Index iterations = 0;  // actually completed (early stops freeze it)
  double rmse = 0.0;
  double nll = 0.0;
  long matvec_count = 0;
  long wall_ns = 0;  // cumulative solver time; the one nondeterministic field
};

struct BenchmarkReport {
  std::string policy_code;
  KernelParams params;
  double noise = 0.0;
  Eigen::Index n_train = 0;
  Eigen::Index n_test = 0;
  Eigen::Index dim = 0;
  std::vector<BenchmarkRow> rows;  // sorted by (seed, budget)
};

// One solver run per seed with posterior snapshots at each budget; no restart
// between budgets, so budget b rows always extend the b-1 work. Metrics are
// test RMSE of the posterior mean and mean NLL in observation space
// (variance + noise).
inline BenchmarkReport run_benchmark(
    const Dataset& train, const Dataset& test, const KernelParams& params,
    double noise, const PolicySpec& policy_spec,
    std::vector<Eigen::Index> budgets, const StoppingConfig& stop,
    std::uint64_t seed, const SolverOptions& opts = {},
    std::optional<std::uint64_t> policy_rng_seed = std::nullopt) {
  validate_dataset(train);
  validate_dataset(test);
  if (budgets.empty()) throw std::invalid_argument("run_benchmark: no budgets");
  std::sort(budgets.begin(), budgets.end());
  if (budgets.front() < 1)
    throw std::invalid_argument("run_benchmark: budgets must be >= 1");

  KernelMatrixHandle khat(params, train.x, noise);
  const Eigen::VectorXd target = train.y;
  const double target_norm = target.norm();
  auto policy = make_policy(policy_spec, khat, policy_rng_seed.value_or(seed));

  BenchmarkReport report;
  report.policy_code = policy_spec.code;
  report.params = params;
  report.noise = noise;
  report.n_train = train.size();
  report.n_test = test.size();
  report.dim = train.dim();

  SolverState state(target);
  bool stopped = false;
  long wall_ns = 0;
  int consecutive_degenerate = 0;
  for (const Eigen::Index budget : budgets) {
    const auto t0 = std::chrono::steady_clock::now();
    while (!stopped && state.iteration < budget) {
      if (stopping_reached(stop, state.residual.norm(), target_norm)) {
        stopped = true;
        break;
      }
      auto action = policy->next_action(state, khat);
      if (!action) {
        stopped = true;
        break;
      }
      StepOutcome outcome = solver_step(state, khat, target, *action, opts);
      if (outcome.status == StepStatus::DegenerateAction) {
        if (!policy->skip_degenerate() || ++consecutive_degenerate >= 32)
          stopped = true;
        continue;
      }
      consecutive_degenerate = 0;
      policy->accepted(outcome.record);
    }
    wall_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(
                   std::chrono::steady_clock::now() - t0)
                   .count();

    const CombinedPosterior post =
        make_posterior(params, train.x, train.y, noise, state);
    const Eigen::VectorXd mean = post.predict_mean(test.x);
    const Eigen::VectorXd var =
        post.predict_var(test.x).array() + noise;
    BenchmarkRow row;
    row.seed = seed;
    row.budget = budget;
    row.iterations = state.iteration;
    row.rmse = rmse(mean, test.y);
    row.nll = nll(mean, var, test.y);
    row.matvec_count = khat.matvec_count();
    row.wall_ns = wall_ns;
    report.rows.push_back(row);
  }
  return report;
}

// Plot-ready flat CSV; rows sorted by (seed, budget) so merged multi-seed
// reports are order-independent.
inline void write_benchmark_csv(std::ostream& out,
                                const BenchmarkReport& report) {
  out << "policy,kernel,lengthscale,output_scale,noise,seed,budget,iterations,"
         "rmse,nll,matvec_count,wall_ns\n";
  std::vector<BenchmarkRow> rows = report.rows;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const BenchmarkRow& a, const BenchmarkRow& b) {
                     return a.seed != b.seed ? a.seed < b.seed
                                             : a.budget < b.budget;
                   });
  for (const BenchmarkRow& r : rows) {
    out << report.policy_code << "," << to_string(report.params.family) << ","
        << format_double(report.params.lengthscale) << ","
        << format_double(report.params.output_scale) << ","
        << format_double(report.noise) << "," << r.seed << "," << r.budget
        << "," << r.iterations << "," << format_double(r.rmse) << ","
        << format_double(r.nll) << "," << r.matvec_count << "," << r.wall_ns
        << "\n";
  }
}

inline BenchmarkReport merge_reports(std::vector<BenchmarkReport> parts) {
  if (parts.empty()) throw std::invalid_argument("merge_reports: empty");
  BenchmarkReport merged = parts.front();
  for (size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].policy_code != merged.policy_code)
      throw std::invalid_argument("merge_reports: mixed policies");
    merged.rows.insert(merged.rows.end(), parts[i].rows.begin(),
                       parts[i].rows.end());
  }
  std::stable_sort(merged.rows.begin(), merged.rows.end(),
                   [](const BenchmarkRow& a, const BenchmarkRow& b) {
                     return a.seed != b.seed ? a.seed < b.seed
                                             : a.budget < b.budget;
                   });
  return merged;
}

}  // namespace itergp
