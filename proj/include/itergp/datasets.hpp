#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "itergp/errors.hpp"
#include "itergp/random.hpp"

namespace itergp {

struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

inline void validate_dataset(const Dataset& ds) {
  if (ds.x.rows() == 0 || ds.x.cols() == 0)
    throw std::invalid_argument("dataset must be non-empty");
  if (ds.y.size() != ds.x.rows())
    throw std::invalid_argument("dataset inputs/targets size mismatch");
  if (!ds.x.allFinite() || !ds.y.allFinite())
    throw std::invalid_argument("dataset must be finite");
}

// Inputs uniform on [-1, 1]^d, targets sin(pi * sum_k x_k) plus independent
// Gaussian noise with standard deviation noise_std.
inline Dataset synth_sine(Eigen::Index n, Eigen::Index d, double noise_std,
                          std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("synth_sine: bad shape");
  if (!(std::isfinite(noise_std) && noise_std >= 0.0))
    throw std::invalid_argument("synth_sine: bad noise_std");
  Rng rng(seed);
  Dataset ds;
  ds.x = uniform_matrix(rng, n, d, -1.0, 1.0);
  const Eigen::VectorXd noise = standard_normal_vector(rng, n);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ds.y[i] = std::sin(M_PI * ds.x.row(i).sum()) + noise_std * noise[i];
  return ds;
}

// Seeded shuffled split; train_frac is rounded to the nearest row count and
// both sides must end up non-empty.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds,
                                                    double train_frac,
                                                    std::uint64_t seed) {
  validate_dataset(ds);
  const Eigen::Index n = ds.size();
  const Eigen::Index n_train =
      static_cast<Eigen::Index>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n)
    throw std::invalid_argument("split_train_test: degenerate split sizes");
  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Eigen::Index> pick(0, i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  Dataset train, test;
  train.x.resize(n_train, ds.dim());
  train.y.resize(n_train);
  test.x.resize(n - n_train, ds.dim());
  test.y.resize(n - n_train);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    train.x.row(i) = ds.x.row(idx[static_cast<size_t>(i)]);
    train.y[i] = ds.y[idx[static_cast<size_t>(i)]];
  }
  for (Eigen::Index i = n_train; i < n; ++i) {
    test.x.row(i - n_train) = ds.x.row(idx[static_cast<size_t>(i)]);
    test.y[i - n_train] = ds.y[idx[static_cast<size_t>(i)]];
  }
  return {std::move(train), std::move(test)};
}

// Z-score standardization fitted on training data; zero-variance columns keep
// scale 1 so they pass through unchanged.
struct Standardizer {
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;

  static Standardizer fit(const Dataset& ds) {
    validate_dataset(ds);
    Standardizer s;
    s.x_mean = ds.x.colwise().mean();
    Eigen::RowVectorXd var =
        (ds.x.rowwise() - s.x_mean).array().square().colwise().mean();
    s.x_scale = var.array().sqrt();
    for (Eigen::Index j = 0; j < s.x_scale.size(); ++j)
      if (!(s.x_scale[j] > 0.0)) s.x_scale[j] = 1.0;
    s.y_mean = ds.y.mean();
    const double yvar = (ds.y.array() - s.y_mean).square().mean();
    s.y_scale = yvar > 0.0 ? std::sqrt(yvar) : 1.0;
    return s;
  }

  Dataset apply(const Dataset& ds) const {
    Dataset out;
    out.x = (ds.x.rowwise() - x_mean).array().rowwise() / x_scale.array();
    out.y = (ds.y.array() - y_mean) / y_scale;
    return out;
  }

  Eigen::MatrixXd apply_inputs(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - x_mean).array().rowwise() / x_scale.array();
  }
};

inline double rmse(const Eigen::VectorXd& prediction,
                   const Eigen::VectorXd& truth) {
  if (prediction.size() != truth.size() || prediction.size() == 0)
    throw std::invalid_argument("rmse: size mismatch");
  return std::sqrt((prediction - truth).squaredNorm() /
                   static_cast<double>(prediction.size()));
}

// Mean Gaussian negative log-likelihood; variances must be strictly positive.
inline double nll(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance,
                  const Eigen::VectorXd& truth) {
  const Eigen::Index n = truth.size();
  if (mean.size() != n || variance.size() != n || n == 0)
    throw std::invalid_argument("nll: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = variance[i];
    if (!(v > 0.0)) throw std::invalid_argument("nll: nonpositive variance");
    const double diff = truth[i] - mean[i];
    total += 0.5 * std::log(2.0 * M_PI * v) + 0.5 * diff * diff / v;
  }
  return total / static_cast<double>(n);
}

// 17 significant digits: enough to round-trip any finite double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& token, const std::string& where) {
  if (token.empty()) throw DataError(where + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size())
    throw DataError(where + ": bad numeric field '" + token + "'");
  if (!std::isfinite(v))
    throw DataError(where + ": non-finite value '" + token + "'");
  return v;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::string dataset_header(Eigen::Index d, bool with_target) {
  std::string h;
  for (Eigen::Index j = 1; j <= d; ++j)
    h += (j > 1 ? ",x" : "x") + std::to_string(j);
  if (with_target) h += ",y";
  return h;
}

inline void write_csv(const std::string& path, const Dataset& ds) {
  validate_dataset(ds);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << dataset_header(ds.dim(), true) << "\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j)
      out << (j > 0 ? "," : "") << format_double(ds.x(i, j));
    out << "," << format_double(ds.y[i]) << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

// Strict CSV reader shared by datasets (with y) and query inputs (without).
inline Eigen::MatrixXd read_csv_matrix(const std::string& path,
                                       bool with_target) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_line(line);
  const Eigen::Index cols = static_cast<Eigen::Index>(header.size());
  const Eigen::Index d = with_target ? cols - 1 : cols;
  if (d < 1 || line != dataset_header(d, with_target))
    throw DataError(path + ": bad header '" + line + "'");
  std::vector<std::vector<double>> rows;
  Eigen::Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != cols)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": wrong field count");
    std::vector<double> row;
    row.reserve(fields.size());
    for (const std::string& f : fields)
      row.push_back(parse_double(f, path + ":" + std::to_string(lineno)));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return m;
}

inline Dataset read_csv(const std::string& path) {
  const Eigen::MatrixXd m = read_csv_matrix(path, true);
  Dataset ds;
  ds.x = m.leftCols(m.cols() - 1);
  ds.y = m.rightCols(1);
  return ds;
}

inline Eigen::MatrixXd read_query_csv(const std::string& path) {
  return read_csv_matrix(path, false);
}

inline void write_query_csv(const std::string& path, const Eigen::MatrixXd& x) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << dataset_header(x.cols(), false) << "\n";
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out << (j > 0 ? "," : "") << format_double(x(i, j));
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace itergp
