#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace itergp {

using Rng = std::mt19937_64;

inline Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

// Row-major fill so that one row (= one sample point) is a contiguous draw.
inline Eigen::MatrixXd standard_normal_matrix(Rng& rng, Eigen::Index rows,
                                              Eigen::Index cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

inline Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows,
                                      Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> unif(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = unif(rng);
  return m;
}

}  // namespace itergp
