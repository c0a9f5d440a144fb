#include "tightcap/solver.h"

#include <cmath>

#include "tightcap/parallel.h"

namespace tightcap {

namespace {

struct Linearization {
  Eigen::SparseMatrix<double> jtj;
  Eigen::VectorXd jtr;
  double cost = 0;
};

void default_plus(Eigen::VectorXd& x, const Eigen::VectorXd& d) { x += d; }

struct BlockEval {
  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  bool ok = true;
};

Linearization linearize(const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x) {
  const int nb = static_cast<int>(blocks.size());
  std::vector<BlockEval> evals(static_cast<size_t>(nb));
  parallel_for(nb, [&](int b) {
    const auto& blk = blocks[b];
    auto& e = evals[b];
    e.r.resize(blk.dim);
    e.j.resize(blk.dim, static_cast<Eigen::Index>(blk.params.size()));
    e.ok = blk.evaluate(x, e.r, &e.j);
  });
  std::vector<Eigen::Triplet<double>> trip;
  size_t nnz = 0;
  int rows = 0;
  for (int b = 0; b < nb; ++b) {
    if (!evals[b].ok) throw SolverError("residual block " + std::to_string(b) + " (" + blocks[b].kind + ") failed", b);
    if (!evals[b].r.allFinite() || !evals[b].j.allFinite())
      throw SolverError("residual block " + std::to_string(b) + " (" + blocks[b].kind + ") is not finite", b);
    nnz += evals[b].j.size();
    rows += blocks[b].dim;
  }
  trip.reserve(nnz);
  Eigen::VectorXd r(rows);
  double cost = 0;
  int row = 0;
  for (int b = 0; b < nb; ++b) {
    const double s = std::sqrt(blocks[b].weight);
    const auto& e = evals[b];
    for (int i = 0; i < blocks[b].dim; ++i) {
      r(row + i) = s * e.r(i);
      for (size_t c = 0; c < blocks[b].params.size(); ++c) {
        const double v = s * e.j(i, static_cast<Eigen::Index>(c));
        if (v != 0.0) trip.emplace_back(row + i, blocks[b].params[c], v);
      }
    }
    cost += blocks[b].weight * e.r.squaredNorm();
    row += blocks[b].dim;
  }
  Eigen::SparseMatrix<double> j(rows, x.size());
  j.setFromTriplets(trip.begin(), trip.end());
  Linearization lin;
  const Eigen::SparseMatrix<double> jt = j.transpose();
  lin.jtj = jt * j;
  lin.jtr = jt * r;
  lin.cost = cost;
  return lin;
}

}  // namespace

double evaluate_cost(const std::vector<ResidualBlock>& blocks, const Eigen::VectorXd& x) {
  const int nb = static_cast<int>(blocks.size());
  std::vector<double> costs(static_cast<size_t>(nb), 0.0);
  std::vector<char> ok(static_cast<size_t>(nb), 1);
  parallel_for(nb, [&](int b) {
    Eigen::VectorXd r(blocks[b].dim);
    ok[b] = blocks[b].evaluate(x, r, nullptr) && r.allFinite();
    costs[b] = blocks[b].weight * r.squaredNorm();
  });
  double c = 0;
  for (int b = 0; b < nb; ++b) {
    if (!ok[b]) throw SolverError("residual block " + std::to_string(b) + " (" + blocks[b].kind + ") failed", b);
    c += costs[b];
  }
  return c;
}

CgResult conjugate_gradient(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b, int max_iters,
                            double tolerance) {
  const Eigen::Index n = b.size();
  CgResult out;
  out.x = Eigen::VectorXd::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) return out;
  Eigen::VectorXd inv_diag(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = a.coeff(i, i);
    inv_diag(i) = d > 0 ? 1.0 / d : 1.0;
  }
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  int it = 0;
  for (; it < max_iters; ++it) {
    if (r.norm() <= tolerance * bnorm) break;
    const Eigen::VectorXd ap = a * p;
    const double pap = p.dot(ap);
    if (!(pap > 0)) break;
    const double alpha = rz / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    z = inv_diag.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  out.iterations = it;
  out.relative_residual = r.norm() / bnorm;
  return out;
}

SolveResult solve(const std::vector<ResidualBlock>& blocks, Eigen::VectorXd params, const SolveOptions& opts,
                  const Retraction& plus_in) {
  if (blocks.empty()) throw ArgumentError("solve: no residual blocks");
  for (size_t b = 0; b < blocks.size(); ++b)
    for (int p : blocks[b].params)
      if (p < 0 || p >= params.size())
        throw ArgumentError("solve: block " + std::to_string(b) + " references parameter " + std::to_string(p) +
                            " outside the parameter vector");
  const Retraction plus = plus_in ? plus_in : Retraction(default_plus);
  SolveResult res;
  double mu = opts.lm_initial;
  Linearization lin = linearize(blocks, params);
  res.cost_history.push_back(lin.cost);
  res.termination = "max_outer_iters";
  for (int outer = 0; outer < opts.max_outer_iters; ++outer) {
    if (lin.cost == 0.0 || lin.jtr.squaredNorm() == 0.0) {
      res.converged = true;
      res.termination = "zero_gradient";
      break;
    }
    bool accepted = false;
    double new_cost = lin.cost;
    Eigen::VectorXd candidate;
    double max_diag = 0;
    for (Eigen::Index i = 0; i < lin.jtj.rows(); ++i) max_diag = std::max(max_diag, lin.jtj.coeff(i, i));
    for (int attempt = 0; attempt <= opts.lm_max_retries; ++attempt) {
      Eigen::SparseMatrix<double> damped = lin.jtj;
      for (Eigen::Index i = 0; i < damped.rows(); ++i) {
        const double d = std::max(lin.jtj.coeff(i, i), 1e-9 * std::max(max_diag, 1.0));
        damped.coeffRef(i, i) += mu * d;
      }
      const CgResult cg = conjugate_gradient(damped, -lin.jtr, opts.cg_max_iters, opts.cg_tolerance);
      candidate = params;
      plus(candidate, cg.x);
      new_cost = evaluate_cost(blocks, candidate);
      if (std::isfinite(new_cost) && new_cost < lin.cost) {
        accepted = true;
        mu = std::max(mu * opts.lm_shrink, 1e-15);
        break;
      }
      mu *= opts.lm_growth;
    }
    if (!accepted) {
      res.converged = true;
      res.termination = "no_decrease";
      break;
    }
    const double rel = (lin.cost - new_cost) / lin.cost;
    params = std::move(candidate);
    ++res.iterations;
    lin = linearize(blocks, params);
    res.cost_history.push_back(lin.cost);
    if (rel < opts.convergence_tol) {
      res.converged = true;
      res.termination = "relative_decrease";
      break;
    }
  }
  res.params = std::move(params);
  return res;
}

double check_gradient(const ResidualBlock& block, const Eigen::VectorXd& params, double eps,
                      const Retraction& plus_in) {
  if (!(eps > 0)) throw ArgumentError("check_gradient: eps must be positive");
  const Retraction plus = plus_in ? plus_in : Retraction(default_plus);
  Eigen::VectorXd r(block.dim);
  Eigen::MatrixXd j(block.dim, static_cast<Eigen::Index>(block.params.size()));
  if (!block.evaluate(params, r, &j)) throw SolverError("check_gradient: evaluation failed", 0);
  double worst = 0;
  Eigen::VectorXd rp(block.dim), rm(block.dim);
  for (size_t c = 0; c < block.params.size(); ++c) {
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(params.size());
    delta(block.params[c]) = eps;
    Eigen::VectorXd xp = params, xm = params;
    plus(xp, delta);
    plus(xm, -delta);
    block.evaluate(xp, rp, nullptr);
    block.evaluate(xm, rm, nullptr);
    const Eigen::VectorXd fd = (rp - rm) / (2 * eps);
    for (int i = 0; i < block.dim; ++i) {
      const double a = j(i, static_cast<Eigen::Index>(c)), f = fd(i);
      const double diff = std::abs(a - f);
      if (diff <= 1e-8) continue;  // absolute floor
      worst = std::max(worst, diff / std::max(std::abs(a), std::abs(f)));
    }
  }
  return worst;
}

}  // namespace tightcap
