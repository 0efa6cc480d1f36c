#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "itergp/datasets.hpp"
#include "itergp/errors.hpp"
#include "itergp/kernels.hpp"
#include "itergp/posterior.hpp"
#include "itergp/solver.hpp"

namespace itergp {

// Fitted-model container: a plain-text header describing shapes and
// hyperparameters, then little-endian float64 arrays in a fixed order
// (inputs row-major, targets, weights, eta, directions column-major, and the
// standardization constants when present).
struct ModelArtifact {
  KernelParams params;
  double noise = 0.0;
  Eigen::MatrixXd train_inputs;
  Eigen::VectorXd train_targets;
  Eigen::VectorXd weights;
  Eigen::MatrixXd directions;
  Eigen::VectorXd eta;
  Eigen::Index iterations = 0;
  long matvec_count = 0;
  std::string policy_code;
  std::uint64_t seed = 0;
  std::string stop_reason;
  bool standardized = false;
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;
};

namespace detail {

inline void put_f64(std::ostream& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline double get_f64(std::istream& in, const std::string& path) {
  char b[8];
  if (!in.read(b, 8)) throw DataError(path + ": truncated float array");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i]))
            << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string expect_kv(std::istream& in, const std::string& key,
                             const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    throw DataError(path + ": truncated header, expected " + key);
  const std::string prefix = key + "=";
  if (line.rfind(prefix, 0) != 0)
    throw DataError(path + ": expected '" + key + "=', got '" + line + "'");
  return line.substr(prefix.size());
}

inline long parse_count(const std::string& s, const std::string& path) {
  try {
    size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ": bad integer '" + s + "'");
  }
}

}  // namespace detail

inline void save_model(const std::string& path, const ModelArtifact& m) {
  const Eigen::Index n = m.train_inputs.rows();
  const Eigen::Index d = m.train_inputs.cols();
  const Eigen::Index rank = m.directions.cols();
  if (m.train_targets.size() != n || m.weights.size() != n ||
      m.directions.rows() != n || m.eta.size() != rank)
    throw std::invalid_argument("save_model: inconsistent shapes");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "itergp-model 1\n";
  out << "kernel=" << to_string(m.params.family) << "\n";
  out << "lengthscale=" << format_double(m.params.lengthscale) << "\n";
  out << "output_scale=" << format_double(m.params.output_scale) << "\n";
  out << "noise=" << format_double(m.noise) << "\n";
  out << "n=" << n << "\n";
  out << "d=" << d << "\n";
  out << "rank=" << rank << "\n";
  out << "iterations=" << m.iterations << "\n";
  out << "matvec_count=" << m.matvec_count << "\n";
  out << "policy=" << m.policy_code << "\n";
  out << "seed=" << m.seed << "\n";
  out << "stop_reason=" << m.stop_reason << "\n";
  out << "standardized=" << (m.standardized ? 1 : 0) << "\n";
  out << "end\n";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) detail::put_f64(out, m.train_inputs(i, j));
  for (Eigen::Index i = 0; i < n; ++i) detail::put_f64(out, m.train_targets[i]);
  for (Eigen::Index i = 0; i < n; ++i) detail::put_f64(out, m.weights[i]);
  for (Eigen::Index j = 0; j < rank; ++j) detail::put_f64(out, m.eta[j]);
  for (Eigen::Index j = 0; j < rank; ++j)
    for (Eigen::Index i = 0; i < n; ++i) detail::put_f64(out, m.directions(i, j));
  if (m.standardized) {
    if (m.x_mean.size() != d || m.x_scale.size() != d)
      throw std::invalid_argument("save_model: bad standardization constants");
    for (Eigen::Index j = 0; j < d; ++j) detail::put_f64(out, m.x_mean[j]);
    for (Eigen::Index j = 0; j < d; ++j) detail::put_f64(out, m.x_scale[j]);
    detail::put_f64(out, m.y_mean);
    detail::put_f64(out, m.y_scale);
  }
  if (!out) throw DataError("write failed: " + path);
}

inline ModelArtifact load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "itergp-model 1")
    throw DataError(path + ": not an itergp model (bad magic line)");
  ModelArtifact m;
  m.params.family =
      [&] {
        const std::string s = detail::expect_kv(in, "kernel", path);
        try {
          return kernel_family_from_string(s);
        } catch (const std::exception&) {
          throw DataError(path + ": unknown kernel '" + s + "'");
        }
      }();
  m.params.lengthscale =
      parse_double(detail::expect_kv(in, "lengthscale", path), path);
  m.params.output_scale =
      parse_double(detail::expect_kv(in, "output_scale", path), path);
  m.noise = parse_double(detail::expect_kv(in, "noise", path), path);
  const long n = detail::parse_count(detail::expect_kv(in, "n", path), path);
  const long d = detail::parse_count(detail::expect_kv(in, "d", path), path);
  const long rank =
      detail::parse_count(detail::expect_kv(in, "rank", path), path);
  if (n < 1 || d < 1 || rank > n)
    throw DataError(path + ": inconsistent shape header");
  m.iterations = detail::parse_count(detail::expect_kv(in, "iterations", path), path);
  m.matvec_count =
      detail::parse_count(detail::expect_kv(in, "matvec_count", path), path);
  m.policy_code = detail::expect_kv(in, "policy", path);
  m.seed = static_cast<std::uint64_t>(
      detail::parse_count(detail::expect_kv(in, "seed", path), path));
  m.stop_reason = detail::expect_kv(in, "stop_reason", path);
  const long standardized =
      detail::parse_count(detail::expect_kv(in, "standardized", path), path);
  if (standardized != 0 && standardized != 1)
    throw DataError(path + ": standardized must be 0 or 1");
  m.standardized = standardized == 1;
  if (!std::getline(in, line) || line != "end")
    throw DataError(path + ": missing header terminator");

  m.train_inputs.resize(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) m.train_inputs(i, j) = detail::get_f64(in, path);
  m.train_targets.resize(n);
  for (long i = 0; i < n; ++i) m.train_targets[i] = detail::get_f64(in, path);
  m.weights.resize(n);
  for (long i = 0; i < n; ++i) m.weights[i] = detail::get_f64(in, path);
  m.eta.resize(rank);
  for (long j = 0; j < rank; ++j) m.eta[j] = detail::get_f64(in, path);
  m.directions.resize(n, rank);
  for (long j = 0; j < rank; ++j)
    for (long i = 0; i < n; ++i) m.directions(i, j) = detail::get_f64(in, path);
  if (m.standardized) {
    m.x_mean.resize(d);
    m.x_scale.resize(d);
    for (long j = 0; j < d; ++j) m.x_mean[j] = detail::get_f64(in, path);
    for (long j = 0; j < d; ++j) m.x_scale[j] = detail::get_f64(in, path);
    m.y_mean = detail::get_f64(in, path);
    m.y_scale = detail::get_f64(in, path);
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataError(path + ": trailing bytes after arrays");

  if (!m.train_inputs.allFinite() || !m.train_targets.allFinite() ||
      !m.weights.allFinite() || !m.directions.allFinite() ||
      !m.eta.allFinite())
    throw DataError(path + ": non-finite array values");
  if ((m.eta.array() <= 0.0).any())
    throw DataError(path + ": eta entries must be positive");
  try {
    m.params.validate();
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!(m.noise >= 0.0)) throw DataError(path + ": negative noise");
  return m;
}

inline CombinedPosterior posterior_from_model(const ModelArtifact& m) {
  LowRankPrecision precision;
  precision.n = m.train_inputs.rows();
  precision.directions = m.directions;
  precision.eta = m.eta;
  return CombinedPosterior(m.params, m.train_inputs, m.train_targets, m.noise,
                           m.weights, std::move(precision));
}

}  // namespace itergp
