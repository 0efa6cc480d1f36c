#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "itergp/kernels.hpp"
#include "test_helpers.hpp"

using namespace itergp;
using test_helpers::all_families;
using test_helpers::random_points;

TEST_CASE("kernel values at zero distance equal the output scale") {
  const Eigen::MatrixXd x = random_points(6, 3, 11);
  for (const KernelParams& p : all_families())
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      REQUIRE(kernel_eval(p, x.row(i), x.row(i)) == p.output_scale);
}

TEST_CASE("kernel closed-form spot values") {
  KernelParams m12{KernelFamily::Matern12, 1.0, 1.0};
  Eigen::VectorXd a(1), b(1);
  a << 0.0;
  b << 1.0;
  REQUIRE_THAT(kernel_eval(m12, a, b),
               Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));

  KernelParams rbf{KernelFamily::RBF, 2.0, 3.0};
  b << 2.0;
  REQUIRE_THAT(kernel_eval(rbf, a, b),
               Catch::Matchers::WithinAbs(3.0 * std::exp(-0.5), 1e-15));

  KernelParams m32{KernelFamily::Matern32, 1.5, 2.0};
  const double t = std::sqrt(3.0) * 2.0 / 1.5;
  b << 2.0;
  REQUIRE_THAT(kernel_eval(m32, a, b),
               Catch::Matchers::WithinAbs(2.0 * (1.0 + t) * std::exp(-t), 1e-15));

  KernelParams m52{KernelFamily::Matern52, 0.7, 1.1};
  const double u = std::sqrt(5.0) * 2.0 / 0.7;
  REQUIRE_THAT(
      kernel_eval(m52, a, b),
      Catch::Matchers::WithinAbs(1.1 * (1.0 + u + u * u / 3.0) * std::exp(-u),
                                 1e-15));
}

TEST_CASE("kernel evaluation is exactly symmetric") {
  const Eigen::MatrixXd x = random_points(10, 4, 22);
  for (const KernelParams& p : all_families())
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.rows(); ++j)
        REQUIRE(kernel_eval(p, x.row(i), x.row(j)) ==
                kernel_eval(p, x.row(j), x.row(i)));
}

TEST_CASE("kernel matrices plus noise are positive definite") {
  for (const KernelParams& p : all_families())
    for (double noise : {1e-4, 1e-2, 1.0}) {
      const Eigen::MatrixXd x = random_points(20, 2, 33);
      Eigen::MatrixXd k = kernel_cross(p, x, x);
      k.diagonal().array() += noise;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k,
                                                         Eigen::EigenvaluesOnly);
      REQUIRE(eig.eigenvalues().minCoeff() >= noise * (1.0 - 1e-8));
    }
}

TEST_CASE("cross block matches the double-loop evaluation") {
  const Eigen::MatrixXd a = random_points(5, 2, 44);
  const Eigen::MatrixXd b = random_points(3, 2, 45);
  for (const KernelParams& p : all_families()) {
    const Eigen::MatrixXd block = kernel_cross(p, a, b);
    REQUIRE(block.rows() == 5);
    REQUIRE(block.cols() == 3);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        REQUIRE(block(i, j) == kernel_eval(p, a.row(i), b.row(j)));
  }
}

TEST_CASE("kernel eval input validation") {
  KernelParams p;
  Eigen::VectorXd a(2), b(2), c(3);
  a << 0.1, 0.2;
  b << 0.3, std::nan("");
  c << 0.0, 0.0, 0.0;
  REQUIRE_THROWS_AS(kernel_eval(p, a, b), std::invalid_argument);
  REQUIRE_THROWS_AS(kernel_eval(p, a, c), std::invalid_argument);
  KernelParams bad;
  bad.lengthscale = 0.0;
  REQUIRE_THROWS_AS(kernel_eval(bad, a, a), std::invalid_argument);
  bad = {};
  bad.output_scale = -1.0;
  REQUIRE_THROWS_AS(kernel_eval(bad, a, a), std::invalid_argument);
}

TEST_CASE("matrix handle: dense cache matches entrywise evaluation") {
  const Eigen::MatrixXd x = random_points(25, 2, 55);
  const KernelParams p{KernelFamily::Matern32, 0.9, 1.5};
  const double noise = 0.05;
  KernelMatrixHandle handle(p, x, noise);
  REQUIRE(handle.is_dense());
  const Eigen::MatrixXd dense = handle.densify();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const double expected = kernel_eval(p, x.row(i), x.row(j)) +
                              (i == j ? noise : 0.0);
      REQUIRE(dense(i, j) == expected);
    }
  REQUIRE(handle.diagonal_value() == p.output_scale + noise);
}

TEST_CASE("matrix handle: dense and blocked matvecs agree") {
  const Eigen::Index n = 1100;  // spans two row blocks
  const Eigen::MatrixXd x = random_points(n, 2, 66);
  const KernelParams p{KernelFamily::Matern12, 1.2, 1.0};
  KernelMatrixHandle dense(p, x, 0.01, CacheMode::Dense);
  KernelMatrixHandle blocked(p, x, 0.01, CacheMode::Blocked);
  REQUIRE(dense.is_dense());
  REQUIRE_FALSE(blocked.is_dense());
  Rng rng(7);
  const Eigen::VectorXd v = standard_normal_vector(rng, n);
  const Eigen::VectorXd yd = dense.matvec(v);
  const Eigen::VectorXd yb = blocked.matvec(v);
  REQUIRE((yd - yb).norm() <= 1e-12 * yd.norm());
  const Eigen::VectorXd yb2 = blocked.matvec(v);
  REQUIRE((yb - yb2).cwiseAbs().maxCoeff() == 0.0);  // repeat runs are bitwise identical
}

TEST_CASE("matrix handle: matvec counter instruments every product") {
  const Eigen::MatrixXd x = random_points(8, 1, 77);
  KernelMatrixHandle handle({KernelFamily::RBF, 1.0, 1.0}, x, 0.1);
  REQUIRE(handle.matvec_count() == 0);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(8);
  handle.matvec(v);
  handle.matvec(v);
  REQUIRE(handle.matvec_count() == 2);
  REQUIRE_THROWS_AS(handle.matvec(Eigen::VectorXd::Ones(9)),
                    std::invalid_argument);
}

TEST_CASE("matrix handle input validation") {
  const Eigen::MatrixXd x = random_points(4, 2, 88);
  REQUIRE_THROWS_AS(KernelMatrixHandle({KernelFamily::RBF, 1.0, 1.0}, x, -0.1),
                    std::invalid_argument);
  Eigen::MatrixXd bad = x;
  bad(1, 1) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(KernelMatrixHandle({KernelFamily::RBF, 1.0, 1.0}, bad, 0.1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      KernelMatrixHandle({KernelFamily::RBF, 1.0, 1.0}, Eigen::MatrixXd(0, 2), 0.1),
      std::invalid_argument);
}

TEST_CASE("kernel family names round-trip") {
  for (const KernelParams& p : all_families())
    REQUIRE(kernel_family_from_string(to_string(p.family)) == p.family);
  REQUIRE_THROWS_AS(kernel_family_from_string("cubic"), std::invalid_argument);
}
