#pragma once

#include <Eigen/Sparse>

#include <functional>
#include <string>
#include <vector>

#include "tightcap/types.h"

namespace tightcap {

// Evaluates one block at state `x`: fills `residual` (dim entries) and, when
// `jacobian` is non-null, the dim x params.size() derivative with respect to a
// tangent increment of the listed parameters. Returns false on failure.
using BlockEvaluator =
    std::function<bool(const Eigen::VectorXd& x, Eigen::VectorXd& residual, Eigen::MatrixXd* jacobian)>;

struct ResidualBlock {
  std::string kind;         // e.g. "point", "arap"; used in diagnostics
  std::vector<int> params;  // tangent-space indices this block depends on
  int dim = 0;
  double weight = 1.0;      // lambda; enters as sqrt(lambda) on the residual
  BlockEvaluator evaluate;
};

// x <- x (+) delta. Defaults to vector addition.
using Retraction = std::function<void(Eigen::VectorXd& x, const Eigen::VectorXd& delta)>;

struct SolveOptions {
  int max_outer_iters = 20;
  int cg_max_iters = 400;
  double cg_tolerance = 1e-10;
  double lm_initial = 1e-4;
  double lm_growth = 10.0;
  double lm_shrink = 0.3;
  int lm_max_retries = 8;
  double convergence_tol = 1e-10;  // on relative cost decrease
};

struct SolveResult {
  Eigen::VectorXd params;
  std::vector<double> cost_history;  // initial cost, then every accepted step
  int iterations = 0;                // accepted steps
  bool converged = false;
  std::string termination;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, int block) : Error(what), block_id(block) {}
  int block_id;
};

// Total weighted cost sum_b lambda_b * |r_b|^2.
double evaluate_cost(const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x);

// Levenberg-damped Gauss-Newton with preconditioned conjugate-gradient inner
// solves. The cost history is non-increasing by construction.
SolveResult solve(const std::vector<ResidualBlock>& blocks, Eigen::VectorXd params, const SolveOptions& opts,
                  const Retraction& plus = {});

// Jacobi-preconditioned CG on a symmetric positive-definite matrix.
struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double relative_residual = 0;
};
CgResult conjugate_gradient(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b, int max_iters,
                            double tolerance);

// Max entrywise relative error of the analytic Jacobian against central
// differences through the retraction; absolute floor 1e-8.
double check_gradient(const ResidualBlock& block, const Eigen::VectorXd& params, double eps,
                      const Retraction& plus = {});

}  // namespace tightcap
