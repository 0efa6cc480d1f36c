#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itergp/benchmark.hpp"
#include "itergp/datasets.hpp"
#include "itergp/errors.hpp"
#include "itergp/kernels.hpp"
#include "itergp/model_io.hpp"
#include "itergp/oracles.hpp"
#include "itergp/policies.hpp"
#include "itergp/posterior.hpp"
#include "itergp/solver.hpp"

namespace itergp::cli {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Flat key=value file; blank lines and '#' comments are allowed, anything
// else must be a key=value pair.
inline KeyValues parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

// --set key=value overrides; the last writer wins.
inline void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must be key=value: " + assignment);
  kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

struct RunConfig {
  KernelParams params;
  double noise = 1e-2;
  std::string policy = "cg";
  std::optional<Eigen::Index> max_iterations;
  double abstol = 0.0;
  double reltol = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> data_csv;
  std::optional<Eigen::Index> synth_n;
  Eigen::Index synth_d = 1;
  double synth_noise = 0.1;
  double train_frac = 0.9;
  bool standardize = false;
  CacheMode cache_mode = CacheMode::Auto;
  bool reorthogonalize = true;
  std::string model_out;
  std::string model;
  std::string query_csv;
  std::string out;
  std::string variance = "latent";
  bool decompose = false;
  Eigen::Index count = 1;
  std::vector<Eigen::Index> budgets;
  std::vector<std::string> policies;
  std::vector<std::uint64_t> seeds;
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad number '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad integer '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ConfigError("key '" + key + "': expected 0/1, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace detail

inline RunConfig make_run_config(const KeyValues& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "kernel") {
      try {
        cfg.params.family = kernel_family_from_string(value);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    } else if (key == "lengthscale") {
      cfg.params.lengthscale = detail::to_double(key, value);
    } else if (key == "output_scale") {
      cfg.params.output_scale = detail::to_double(key, value);
    } else if (key == "noise") {
      cfg.noise = detail::to_double(key, value);
      if (cfg.noise < 0.0) throw ConfigError("noise must be >= 0");
    } else if (key == "policy") {
      cfg.policy = value;
    } else if (key == "max_iterations") {
      const long long v = detail::to_int(key, value);
      if (v < 0) throw ConfigError("max_iterations must be >= 0");
      cfg.max_iterations = static_cast<Eigen::Index>(v);
    } else if (key == "abstol") {
      cfg.abstol = detail::to_double(key, value);
      if (cfg.abstol < 0.0) throw ConfigError("abstol must be >= 0");
    } else if (key == "reltol") {
      cfg.reltol = detail::to_double(key, value);
      if (cfg.reltol < 0.0) throw ConfigError("reltol must be >= 0");
    } else if (key == "seed") {
      const long long v = detail::to_int(key, value);
      if (v < 0) throw ConfigError("seed must be >= 0");
      cfg.seed = static_cast<std::uint64_t>(v);
    } else if (key == "data_csv") {
      cfg.data_csv = value;
    } else if (key == "synth_n") {
      const long long v = detail::to_int(key, value);
      if (v < 1) throw ConfigError("synth_n must be >= 1");
      cfg.synth_n = static_cast<Eigen::Index>(v);
    } else if (key == "synth_d") {
      const long long v = detail::to_int(key, value);
      if (v < 1) throw ConfigError("synth_d must be >= 1");
      cfg.synth_d = static_cast<Eigen::Index>(v);
    } else if (key == "synth_noise") {
      cfg.synth_noise = detail::to_double(key, value);
      if (cfg.synth_noise < 0.0) throw ConfigError("synth_noise must be >= 0");
    } else if (key == "train_frac") {
      cfg.train_frac = detail::to_double(key, value);
      if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0))
        throw ConfigError("train_frac must be in (0, 1)");
    } else if (key == "standardize") {
      cfg.standardize = detail::to_bool(key, value);
    } else if (key == "cache_mode") {
      if (value == "auto") cfg.cache_mode = CacheMode::Auto;
      else if (value == "dense") cfg.cache_mode = CacheMode::Dense;
      else if (value == "blocked") cfg.cache_mode = CacheMode::Blocked;
      else throw ConfigError("cache_mode must be auto|dense|blocked");
    } else if (key == "reorthogonalize") {
      cfg.reorthogonalize = detail::to_bool(key, value);
    } else if (key == "model_out") {
      cfg.model_out = value;
    } else if (key == "model") {
      cfg.model = value;
    } else if (key == "query_csv") {
      cfg.query_csv = value;
    } else if (key == "out") {
      cfg.out = value;
    } else if (key == "variance") {
      if (value != "latent" && value != "observation")
        throw ConfigError("variance must be latent|observation");
      cfg.variance = value;
    } else if (key == "decompose") {
      cfg.decompose = detail::to_bool(key, value);
    } else if (key == "count") {
      const long long v = detail::to_int(key, value);
      if (v < 1) throw ConfigError("count must be >= 1");
      cfg.count = static_cast<Eigen::Index>(v);
    } else if (key == "budgets") {
      for (const std::string& item : detail::split_list(value)) {
        const long long v = detail::to_int(key, item);
        if (v < 1) throw ConfigError("budgets must be >= 1");
        cfg.budgets.push_back(static_cast<Eigen::Index>(v));
      }
      if (cfg.budgets.empty()) throw ConfigError("budgets list is empty");
    } else if (key == "policies") {
      cfg.policies = detail::split_list(value);
      if (cfg.policies.empty()) throw ConfigError("policies list is empty");
    } else if (key == "seeds") {
      for (const std::string& item : detail::split_list(value)) {
        const long long v = detail::to_int(key, item);
        if (v < 0) throw ConfigError("seeds must be >= 0");
        cfg.seeds.push_back(static_cast<std::uint64_t>(v));
      }
      if (cfg.seeds.empty()) throw ConfigError("seeds list is empty");
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  try {
    cfg.params.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

// Deterministic seed derivation: the dataset generator, the split, and the
// policy's own randomness get distinct streams from one user-facing seed.
inline std::uint64_t data_seed(std::uint64_t s) { return s; }
inline std::uint64_t split_seed(std::uint64_t s) { return s + 1; }
inline std::uint64_t policy_seed(std::uint64_t s) { return s + 2; }

inline Dataset load_training_data(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.data_csv && cfg.synth_n)
    throw ConfigError("set either data_csv or synth_n, not both");
  if (cfg.data_csv) {
    Dataset ds = read_csv(*cfg.data_csv);
    try {
      validate_dataset(ds);
    } catch (const std::exception& e) {
      throw DataError(*cfg.data_csv + ": " + e.what());
    }
    return ds;
  }
  if (cfg.synth_n)
    return synth_sine(*cfg.synth_n, cfg.synth_d, cfg.synth_noise,
                      data_seed(seed));
  throw ConfigError("no data source: set data_csv or synth_n");
}

inline SolverOptions solver_options(const RunConfig& cfg) {
  SolverOptions opts;
  opts.reorthogonalize = cfg.reorthogonalize;
  return opts;
}

// Policy-level sanity checks that belong to configuration, not computation.
inline PolicySpec checked_policy_spec(const std::string& code,
                                      Eigen::Index n_train) {
  const PolicySpec spec = parse_policy_code(code);
  if (spec.kind == PolicySpec::Kind::Eigenvectors && n_train > 2000)
    throw ConfigError("policy 'eig' supports at most 2000 training points");
  if (spec.kind == PolicySpec::Kind::PseudoInput &&
      spec.inducing_path.empty() && spec.inducing_count > n_train)
    throw ConfigError("pseudo-input count exceeds training size");
  if (spec.kind == PolicySpec::Kind::CgPrecond && spec.precond_rank > n_train)
    throw ConfigError("cg-precond rank exceeds training size");
  return spec;
}

inline std::unique_ptr<Policy> instantiate_policy(const PolicySpec& spec,
                                                  const KernelMatrixHandle& khat,
                                                  const RunConfig& cfg,
                                                  const Standardizer* std_or_null) {
  if (spec.kind == PolicySpec::Kind::PseudoInput &&
      !spec.inducing_path.empty()) {
    Eigen::MatrixXd z = read_query_csv(spec.inducing_path);
    if (z.cols() != khat.dim())
      throw DataError(spec.inducing_path + ": inducing dimension mismatch");
    if (std_or_null) z = std_or_null->apply_inputs(z);
    return make_policy(spec, khat, policy_seed(cfg.seed), std::move(z));
  }
  return make_policy(spec, khat, policy_seed(cfg.seed));
}

inline int cmd_fit(const RunConfig& cfg) {
  if (cfg.model_out.empty()) throw ConfigError("fit requires model_out");
  Dataset ds = load_training_data(cfg, cfg.seed);
  Standardizer standardizer;
  if (cfg.standardize) {
    standardizer = Standardizer::fit(ds);
    ds = standardizer.apply(ds);
  }
  const PolicySpec spec = checked_policy_spec(cfg.policy, ds.size());
  KernelMatrixHandle khat(cfg.params, ds.x, cfg.noise, cfg.cache_mode);
  auto policy = instantiate_policy(spec, khat, cfg,
                                   cfg.standardize ? &standardizer : nullptr);
  StoppingConfig stop;
  stop.max_iterations = cfg.max_iterations.value_or(ds.size());
  stop.abstol = cfg.abstol;
  stop.reltol = cfg.reltol;
  const SolveResult result = run(khat, ds.y, *policy, stop, solver_options(cfg));

  ModelArtifact artifact;
  artifact.params = cfg.params;
  artifact.noise = cfg.noise;
  artifact.train_inputs = ds.x;
  artifact.train_targets = ds.y;
  artifact.weights = result.state.v;
  const LowRankPrecision precision = snapshot_precision(result.state);
  artifact.directions = precision.directions;
  artifact.eta = precision.eta;
  artifact.iterations = result.state.iteration;
  artifact.matvec_count = khat.matvec_count();
  artifact.policy_code = cfg.policy;
  artifact.seed = cfg.seed;
  artifact.stop_reason = to_string(result.reason);
  artifact.standardized = cfg.standardize;
  if (cfg.standardize) {
    artifact.x_mean = standardizer.x_mean;
    artifact.x_scale = standardizer.x_scale;
    artifact.y_mean = standardizer.y_mean;
    artifact.y_scale = standardizer.y_scale;
  }
  save_model(cfg.model_out, artifact);
  return 0;
}

inline Eigen::MatrixXd load_query(const RunConfig& cfg, const ModelArtifact& m) {
  if (cfg.query_csv.empty()) throw ConfigError("command requires query_csv");
  Eigen::MatrixXd query = read_query_csv(cfg.query_csv);
  if (query.cols() != m.train_inputs.cols())
    throw DataError(cfg.query_csv + ": query dimension mismatch");
  if (m.standardized)
    query = (query.rowwise() - m.x_mean).array().rowwise() /
            m.x_scale.array();
  return query;
}

inline int cmd_predict(const RunConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("predict requires model");
  if (cfg.out.empty()) throw ConfigError("predict requires out");
  const ModelArtifact artifact = load_model(cfg.model);
  const Eigen::MatrixXd query = load_query(cfg, artifact);
  const CombinedPosterior post = posterior_from_model(artifact);

  Eigen::VectorXd mean = post.predict_mean(query);
  Eigen::VectorXd variance = post.predict_var(query);
  if (cfg.variance == "observation") variance.array() += artifact.noise;

  Eigen::VectorXd mathematical, computational;
  if (cfg.decompose) {
    // Explicit opt-in to the dense O(n^3) reference solve.
    const oracles::ExactGP exact(artifact.params, artifact.train_inputs,
                                 artifact.train_targets, artifact.noise);
    mathematical.resize(query.rows());
    computational.resize(query.rows());
    auto solve = [&exact](const Eigen::VectorXd& v) { return exact.solve(v); };
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
      const CombinedPosterior::VarianceSplit split =
          post.decompose_variance(query.row(i), solve);
      mathematical[i] = split.mathematical;
      computational[i] = split.computational;
    }
  }

  const double yscale2 =
      artifact.standardized ? artifact.y_scale * artifact.y_scale : 1.0;
  if (artifact.standardized) {
    mean = (mean.array() * artifact.y_scale + artifact.y_mean).matrix();
    variance *= yscale2;
    mathematical *= yscale2;
    computational *= yscale2;
  }

  std::ofstream out(cfg.out);
  if (!out) throw DataError("cannot open for writing: " + cfg.out);
  out << (cfg.decompose ? "mean,variance,mathematical,computational"
                        : "mean,variance")
      << "\n";
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    out << format_double(mean[i]) << "," << format_double(variance[i]);
    if (cfg.decompose)
      out << "," << format_double(mathematical[i]) << ","
          << format_double(computational[i]);
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + cfg.out);
  return 0;
}

inline int cmd_sample(const RunConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("sample requires model");
  if (cfg.out.empty()) throw ConfigError("sample requires out");
  const ModelArtifact artifact = load_model(cfg.model);
  const Eigen::MatrixXd query = load_query(cfg, artifact);
  const CombinedPosterior post = posterior_from_model(artifact);
  Eigen::MatrixXd paths = post.sample_paths(query, cfg.count, cfg.seed);
  if (artifact.standardized)
    paths = (paths.array() * artifact.y_scale + artifact.y_mean).matrix();

  std::ofstream out(cfg.out);
  if (!out) throw DataError("cannot open for writing: " + cfg.out);
  for (Eigen::Index j = 0; j < paths.cols(); ++j)
    out << (j > 0 ? ",f" : "f") << j + 1;
  out << "\n";
  for (Eigen::Index i = 0; i < paths.rows(); ++i) {
    for (Eigen::Index j = 0; j < paths.cols(); ++j)
      out << (j > 0 ? "," : "") << format_double(paths(i, j));
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + cfg.out);
  return 0;
}

inline std::string sanitize_for_filename(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' &&
        c != '.')
      c = '-';
  return out;
}

inline int cmd_benchmark(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("benchmark requires out");
  if (cfg.budgets.empty()) throw ConfigError("benchmark requires budgets");
  const std::vector<std::string> policies =
      cfg.policies.empty() ? std::vector<std::string>{cfg.policy}
                           : cfg.policies;
  const std::vector<std::uint64_t> seeds =
      cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.seeds;

  StoppingConfig stop;
  stop.abstol = cfg.abstol;
  stop.reltol = cfg.reltol;

  for (const std::string& code : policies) {
    std::vector<BenchmarkReport> parts;
    for (const std::uint64_t seed : seeds) {
      const Dataset ds = load_training_data(cfg, seed);
      auto [train, test] = split_train_test(ds, cfg.train_frac, split_seed(seed));
      if (cfg.standardize) {
        const Standardizer standardizer = Standardizer::fit(train);
        train = standardizer.apply(train);
        test = standardizer.apply(test);
      }
      const PolicySpec spec = checked_policy_spec(code, train.size());
      if (!spec.inducing_path.empty())
        throw ConfigError("benchmark does not support pseudo-input:<path>");
      parts.push_back(run_benchmark(train, test, cfg.params, cfg.noise, spec,
                                    cfg.budgets, stop, seed,
                                    solver_options(cfg), policy_seed(seed)));
      parts.back().policy_code = code;
    }
    const BenchmarkReport merged = merge_reports(std::move(parts));
    const std::string base = cfg.out + "." + sanitize_for_filename(code);
    {
      std::ofstream out(base + ".csv");
      if (!out) throw DataError("cannot open for writing: " + base + ".csv");
      write_benchmark_csv(out, merged);
      if (!out) throw DataError("write failed: " + base + ".csv");
    }
    {
      std::ofstream out(base + ".ndjson");
      if (!out)
        throw DataError("cannot open for writing: " + base + ".ndjson");
      nlohmann::json meta;
      meta["type"] = "meta";
      meta["policy"] = merged.policy_code;
      meta["kernel"] = to_string(merged.params.family);
      meta["lengthscale"] = merged.params.lengthscale;
      meta["output_scale"] = merged.params.output_scale;
      meta["noise"] = merged.noise;
      meta["n_train"] = merged.n_train;
      meta["n_test"] = merged.n_test;
      meta["dim"] = merged.dim;
      meta["train_frac"] = cfg.train_frac;
      meta["seeds"] = seeds;
      meta["budgets"] = cfg.budgets;
      meta["generated_unix_ns"] =
          std::chrono::duration_cast<std::chrono::nanoseconds>(
              std::chrono::system_clock::now().time_since_epoch())
              .count();
      out << meta.dump() << "\n";
      for (const BenchmarkRow& r : merged.rows) {
        nlohmann::json row;
        row["type"] = "row";
        row["seed"] = r.seed;
        row["budget"] = r.budget;
        row["iterations"] = r.iterations;
        row["rmse"] = r.rmse;
        row["nll"] = r.nll;
        row["matvec_count"] = r.matvec_count;
        row["wall_ns"] = r.wall_ns;
        out << row.dump() << "\n";
      }
      if (!out) throw DataError("write failed: " + base + ".ndjson");
    }
  }
  return 0;
}

inline int run_command(const std::string& command, const KeyValues& kv) {
  const RunConfig cfg = make_run_config(kv);
  if (command == "fit") return cmd_fit(cfg);
  if (command == "predict") return cmd_predict(cfg);
  if (command == "sample") return cmd_sample(cfg);
  if (command == "benchmark") return cmd_benchmark(cfg);
  throw ConfigError("unknown command: " + command);
}

// Exit-code taxonomy: 1 config, 2 data, 3 numerical/runtime.
inline int run_command_catching(const std::string& command, const KeyValues& kv,
                                std::ostream& err) {
  try {
    return run_command(command, kv);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace itergp::cli
