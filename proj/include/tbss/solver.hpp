#pragma once

#include <vector>

#include "tbss/model.hpp"

namespace tbss {

// Whether the first level is additionally fused towards zero.
enum class FusionAnchor { free, zero };

struct PenaltyWeights {
  double lambda1 = 0.0;  // penalty on block differences theta_i
  double lambda2 = 0.0;  // penalty on cumulative levels
  double rho = 0.0;      // segment lasso penalty
  // zero: theta_1 also carries the lambda1 penalty; free: only theta_2..theta_k do.
  FusionAnchor first_block = FusionAnchor::zero;

  void validate() const;
};

enum class StepRule { fixed_lipschitz, backtracking };

struct SolverOptions {
  int max_iter = 2000;
  double tol = 1e-6;
  StepRule step_rule = StepRule::backtracking;

  void validate() const;
};

double soft_threshold(double x, double lam);

// Exact minimizer of 0.5*||z-y||^2 + lam_fuse*sum|z_i - z_{i-1}| + lam_level*sum|z_i|.
// With FusionAnchor::zero the fusion sum starts at i = 1 with z_0 = 0.
Vector fused_lasso_1d(const Vector& y, double lam_fuse, double lam_level,
                      FusionAnchor anchor = FusionAnchor::free);

// Total-variation prox on a raw buffer; `out` may alias `y`. Scratch is resized as needed.
struct TvWorkspace {
  std::vector<double> x, da, db, tm, tp;
};
void tv_prox(const double* y, long n, double lam, FusionAnchor anchor, double* out,
             TvWorkspace& ws);

// Per-block sufficient statistics of the Step 1 least squares loss.
// G[i] = X_i'X_i (pq x pq), C[i] = X_i'Y_i (pq x p), yy[i](r) = sum of y_{t,r}^2,
// where block i collects the retained response times of block i+1.
struct BlockGramStats {
  BlockPartition partition;
  long n = 0;  // number of retained response rows
  long p = 0;
  std::vector<Matrix> G;
  std::vector<Matrix> C;
  std::vector<Vector> yy;
};

// `excluded` (length T, optional) marks response times dropped from the loss.
BlockGramStats compute_block_stats(const TimeSeriesMatrix& ts, const BlockPartition& part,
                                   const std::vector<bool>* excluded = nullptr);

struct Step1Result {
  ThetaEstimate theta;
  bool converged = true;
  int iterations = 0;  // maximum over response rows
  double objective = 0.0;
  std::vector<std::vector<double>> traces;  // per response row, when recorded
};

Step1Result solve_step1_objective(const TimeSeriesMatrix& ts, const BlockPartition& part, int q,
                                  const PenaltyWeights& w, const SolverOptions& opts);

// `warm_levels`, when given, holds k per-block coefficient matrices (p x pq) to start from.
Step1Result solve_step1_stats(const BlockGramStats& st, const PenaltyWeights& w,
                              const SolverOptions& opts,
                              const std::vector<Matrix>* warm_levels = nullptr,
                              bool record_traces = false);

// Objective evaluated directly on the data, independent of the block statistics.
double step1_objective(const TimeSeriesMatrix& ts, const BlockPartition& part,
                       const ThetaEstimate& theta, const PenaltyWeights& w);

// Smallest lambda = lambda1 = lambda2 at which every theta_i vanishes.
double lambda_max(const TimeSeriesMatrix& ts, const BlockPartition& part, int q,
                  FusionAnchor anchor = FusionAnchor::zero);
double lambda_max_stats(const BlockGramStats& st, FusionAnchor anchor = FusionAnchor::zero);

struct LassoResult {
  Vector beta;
  bool converged = true;
  int iterations = 0;
  double kkt_residual = 0.0;
};

// Minimizes (1/N)||y - X beta||^2 + rho*||beta||_1 by cyclic coordinate descent.
LassoResult lasso_solve(const Matrix& X, const Vector& y, double rho, const SolverOptions& opts);

// Same problem given G = X'X, c = X'y and N.
LassoResult lasso_solve_gram(const Matrix& G, const Vector& c, long N, double rho,
                             const SolverOptions& opts, const Vector* warm = nullptr);

double lasso_objective(const Matrix& X, const Vector& y, const Vector& beta, double rho);

struct WeaklySparseResult {
  Vector beta;
  double fill = 0.0;
  bool budget_exceeded = false;
};

WeaklySparseResult weakly_sparse_estimate(const Matrix& X, const Vector& y, double radius,
                                          double q_ball, double rho, const SolverOptions& opts);

}  // namespace tbss
