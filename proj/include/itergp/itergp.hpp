#pragma once

// Computation-aware Gaussian-process regression: a probabilistic linear
// solver whose policy choice reproduces partial Cholesky, (preconditioned)
// CG, eigendecomposition, or inducing-point approximations, and whose
// posterior tracks the uncertainty left by stopping early.

#include "itergp/benchmark.hpp"
#include "itergp/datasets.hpp"
#include "itergp/errors.hpp"
#include "itergp/kernels.hpp"
#include "itergp/model_io.hpp"
#include "itergp/policies.hpp"
#include "itergp/posterior.hpp"
#include "itergp/random.hpp"
#include "itergp/solver.hpp"
