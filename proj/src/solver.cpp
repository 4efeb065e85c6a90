#include "tbss/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tbss/error.hpp"

namespace tbss {

void PenaltyWeights::validate() const {
  for (double v : {lambda1, lambda2, rho})
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("penalty weights must be finite and >= 0");
}

void SolverOptions::validate() const {
  if (!(tol > 0.0)) throw InvalidInput("solver tolerance must be positive");
  if (max_iter < 1) throw InvalidInput("solver max_iter must be >= 1");
}

double soft_threshold(double x, double lam) {
  if (x > lam) return x - lam;
  if (x < -lam) return x + lam;
  return 0.0;
}

// Dynamic programming over the piecewise-linear derivative of the forward
// messages. Each knot stores the jump (da, db) of the slope/intercept pair;
// the outermost pieces are tracked separately. The two thresholds of every
// step are kept for the backward pass.
void tv_prox(const double* y, long n, double lam, FusionAnchor anchor, double* out,
             TvWorkspace& ws) {
  if (n <= 0) return;
  if (lam <= 0.0) {
    if (out != y) std::copy(y, y + n, out);
    return;
  }
  const long cap = 2 * n + 8;
  if (static_cast<long>(ws.x.size()) < cap) {
    ws.x.resize(cap);
    ws.da.resize(cap);
    ws.db.resize(cap);
  }
  if (static_cast<long>(ws.tm.size()) < n) {
    ws.tm.resize(n);
    ws.tp.resize(n);
  }
  double* x = ws.x.data();
  double* da = ws.da.data();
  double* db = ws.db.data();
  long lo = n + 4, hi = n + 3;
  double af = 1.0, bf = -y[0], al = 1.0, bl = -y[0];
  if (anchor == FusionAnchor::zero) {
    bf -= lam;
    bl += lam;
    lo = hi = n + 4;
    x[lo] = 0.0;
    da[lo] = 0.0;
    db[lo] = 2.0 * lam;
  }

  for (long i = 0; i + 1 < n; ++i) {
    double a = af, b = bf, tm;
    long j = lo;
    for (;;) {
      if (j > hi) {
        tm = (-lam - b) / a;
        break;
      }
      if (a * x[j] + b >= -lam) {
        tm = (-lam - b) / a;
        break;
      }
      a += da[j];
      b += db[j];
      ++j;
      if (a * x[j - 1] + b >= -lam) {
        tm = x[j - 1];
        break;
      }
    }
    lo = j;

    double a2 = al, b2 = bl, tp;
    long h = hi;
    for (;;) {
      if (h < lo) {
        tp = (lam - b2) / a2;
        break;
      }
      if (a2 * x[h] + b2 <= lam) {
        tp = (lam - b2) / a2;
        break;
      }
      a2 -= da[h];
      b2 -= db[h];
      --h;
      if (a2 * x[h + 1] + b2 <= lam) {
        tp = x[h + 1];
        break;
      }
    }
    hi = h;
    tp = std::max(tp, tm);

    --lo;
    x[lo] = tm;
    da[lo] = a;
    db[lo] = b + lam;
    ++hi;
    x[hi] = tp;
    da[hi] = -a2;
    db[hi] = lam - b2;

    ws.tm[i] = tm;
    ws.tp[i] = tp;
    af = 1.0;
    bf = -lam - y[i + 1];
    al = 1.0;
    bl = lam - y[i + 1];
  }

  double a = af, b = bf, xs;
  for (long j = lo;; ++j) {
    if (j > hi || a * x[j] + b >= 0.0) {
      xs = -b / a;
      break;
    }
    a += da[j];
    b += db[j];
    if (a * x[j] + b >= 0.0) {
      xs = x[j];
      break;
    }
  }
  out[n - 1] = xs;
  for (long i = n - 2; i >= 0; --i) out[i] = std::clamp(out[i + 1], ws.tm[i], ws.tp[i]);
}

Vector fused_lasso_1d(const Vector& y, double lam_fuse, double lam_level, FusionAnchor anchor) {
  if (lam_fuse < 0.0 || lam_level < 0.0) throw InvalidInput("penalties must be nonnegative");
  if (y.size() < 1) throw InvalidInput("fused lasso needs at least one value");
  Vector z(y.size());
  TvWorkspace ws;
  tv_prox(y.data(), y.size(), lam_fuse, anchor, z.data(), ws);
  for (long i = 0; i < z.size(); ++i) z(i) = soft_threshold(z(i), lam_level);
  return z;
}

BlockGramStats compute_block_stats(const TimeSeriesMatrix& ts, const BlockPartition& part,
                                   const std::vector<bool>* excluded) {
  if (part.T != ts.T()) throw InvalidInput("partition does not match series length");
  const int q = part.q;
  const long p = ts.p(), d = p * q, k = part.k();
  if (excluded && static_cast<long>(excluded->size()) != ts.T())
    throw InvalidInput("exclusion mask length must equal T");
  const Matrix Z = lag_embed(ts, q);
  BlockGramStats st;
  st.partition = part;
  st.p = p;
  st.G.resize(k);
  st.C.resize(k);
  st.yy.resize(k);
  for (long i = 1; i <= k; ++i) {
    std::vector<long> rows;
    for (long t = part.start(i); t < part.end(i); ++t)
      if (!excluded || !(*excluded)[t]) rows.push_back(t);
    const long m = static_cast<long>(rows.size());
    Matrix X(m, d), Y(m, p);
    for (long r = 0; r < m; ++r) {
      X.row(r) = Z.row(rows[r] - q);
      Y.row(r) = ts.data.row(rows[r]);
    }
    st.G[i - 1] = X.transpose() * X;
    st.C[i - 1] = X.transpose() * Y;
    st.yy[i - 1] = Y.colwise().squaredNorm().transpose();
    st.n += m;
  }
  if (st.n == 0) throw InvalidInput("no response rows retained");
  return st;
}

namespace {

double block_power_lipschitz(const std::vector<Matrix>& G, long n) {
  double best = 0.0;
  for (const Matrix& g : G) {
    const long d = g.rows();
    Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
    double ev = 0.0;
    for (int it = 0; it < 500; ++it) {
      Vector w = g * v;
      const double nw = w.norm();
      if (nw == 0.0) break;
      const double next = v.dot(w);
      v = w / nw;
      if (std::abs(next - ev) <= 1e-10 * std::abs(next)) {
        ev = next;
        break;
      }
      ev = next;
    }
    best = std::max(best, ev);
  }
  // The power estimate approaches the top eigenvalue from below.
  return 1.02 * 2.0 * best / static_cast<double>(n);
}

struct RowProblem {
  const BlockGramStats& st;
  long r;
  double lam1, lam2;
  FusionAnchor anchor;
  TvWorkspace ws;
  std::vector<double> buf;

  double smooth(const Matrix& Z, const Matrix& GZ) const {
    double f = 0.0;
    for (size_t i = 0; i < st.G.size(); ++i)
      f += Z.col(i).dot(GZ.col(i)) - 2.0 * Z.col(i).dot(st.C[i].col(r)) + st.yy[i](r);
    return f / static_cast<double>(st.n);
  }

  double penalty(const Matrix& Z) const {
    const long d = Z.rows(), k = Z.cols();
    double fuse = 0.0, level = 0.0;
    for (long j = 0; j < d; ++j) {
      double prev = 0.0;
      for (long i = 0; i < k; ++i) {
        if (i > 0 || anchor == FusionAnchor::zero) fuse += std::abs(Z(j, i) - prev);
        level += std::abs(Z(j, i));
        prev = Z(j, i);
      }
    }
    return lam1 * fuse + lam2 * level;
  }

  void apply_gram(const Matrix& Z, Matrix& GZ) const {
    for (size_t i = 0; i < st.G.size(); ++i) GZ.col(i).noalias() = st.G[i] * Z.col(i);
  }

  void prox(Matrix& V, double step) {
    const long d = V.rows(), k = V.cols();
    buf.resize(k);
    for (long j = 0; j < d; ++j) {
      for (long i = 0; i < k; ++i) buf[i] = V(j, i);
      tv_prox(buf.data(), k, lam1 * step, anchor, buf.data(), ws);
      for (long i = 0; i < k; ++i) V(j, i) = soft_threshold(buf[i], lam2 * step);
    }
  }
};

}  // namespace

Step1Result solve_step1_stats(const BlockGramStats& st, const PenaltyWeights& w,
                              const SolverOptions& opts, const std::vector<Matrix>* warm_levels,
                              bool record_traces) {
  w.validate();
  opts.validate();
  const long k = static_cast<long>(st.G.size());
  if (k < 1) throw InvalidInput("partition has no blocks");
  const long p = st.p, d = st.G[0].rows();
  if (warm_levels && static_cast<long>(warm_levels->size()) != k)
    throw InvalidInput("warm start must provide one matrix per block");

  const double n = static_cast<double>(st.n);
  double diag_max = 0.0;
  for (const Matrix& g : st.G) diag_max = std::max(diag_max, g.diagonal().maxCoeff());
  const double L_init = opts.step_rule == StepRule::fixed_lipschitz
                            ? block_power_lipschitz(st.G, st.n)
                            : std::max(2.0 * diag_max / n, 1e-12);

  Step1Result res;
  std::vector<Matrix> levels(k, Matrix::Zero(p, d));
  if (record_traces) res.traces.resize(p);

  Matrix X(d, k), GX(d, k), Yp(d, k), GY(d, k), Zn(d, k), GZ(d, k), Cr(d, k), Xn(d, k),
      GXn(d, k), grad(d, k);
  for (long r = 0; r < p; ++r) {
    RowProblem rp{st, r, w.lambda1, w.lambda2, w.first_block, {}, {}};
    for (long i = 0; i < k; ++i) Cr.col(i) = st.C[i].col(r);
    if (warm_levels) {
      for (long i = 0; i < k; ++i) X.col(i) = (*warm_levels)[i].row(r).transpose();
    } else {
      X.setZero();
    }
    rp.apply_gram(X, GX);
    double Fx = rp.smooth(X, GX) + rp.penalty(X);
    Yp = X;
    GY = GX;
    double t = 1.0, L = L_init;
    bool converged = false;
    int it = 0;
    if (record_traces) res.traces[r].push_back(Fx);
    for (; it < opts.max_iter; ++it) {
      grad = (2.0 / n) * (GY - Cr);
      const double fy = rp.smooth(Yp, GY);
      double fz;
      for (;;) {
        Zn = Yp - grad / L;
        rp.prox(Zn, 1.0 / L);
        rp.apply_gram(Zn, GZ);
        fz = rp.smooth(Zn, GZ);
        if (opts.step_rule == StepRule::fixed_lipschitz) break;
        const double dlin = (grad.array() * (Zn - Yp).array()).sum();
        const double quad = 0.5 * L * (Zn - Yp).squaredNorm();
        if (fz <= fy + dlin + quad + 1e-12 * std::abs(fy)) break;
        L *= 2.0;
      }
      const double Fz = fz + rp.penalty(Zn);
      const bool accept = Fz <= Fx;
      double Fn;
      if (accept) {
        Xn = Zn;
        GXn = GZ;
        Fn = Fz;
      } else {
        Xn = X;
        GXn = GX;
        Fn = Fx;
      }
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      const double c1 = t / tn, c2 = (t - 1.0) / tn;
      Yp = Xn + c1 * (Zn - Xn) + c2 * (Xn - X);
      GY = GXn + c1 * (GZ - GXn) + c2 * (GXn - GX);
      const double rel = (Fx - Fn) / std::max(std::abs(Fx), std::numeric_limits<double>::min());
      X.swap(Xn);
      GX.swap(GXn);
      Fx = Fn;
      t = tn;
      if (record_traces) res.traces[r].push_back(Fx);
      if (accept && rel < opts.tol) {
        converged = true;
        ++it;
        break;
      }
    }
    res.converged = res.converged && converged;
    res.iterations = std::max(res.iterations, it);
    res.objective += Fx;
    for (long i = 0; i < k; ++i) levels[i].row(r) = X.col(i).transpose();
  }

  res.theta.partition = st.partition;
  res.theta.thetas.resize(k);
  res.theta.thetas[0] = levels[0];
  for (long i = 1; i < k; ++i) res.theta.thetas[i] = levels[i] - levels[i - 1];
  return res;
}

Step1Result solve_step1_objective(const TimeSeriesMatrix& ts, const BlockPartition& part, int q,
                                  const PenaltyWeights& w, const SolverOptions& opts) {
  if (part.q != q) throw InvalidInput("partition lag order differs from q");
  return solve_step1_stats(compute_block_stats(ts, part), w, opts);
}

double step1_objective(const TimeSeriesMatrix& ts, const BlockPartition& part,
                       const ThetaEstimate& theta, const PenaltyWeights& w) {
  const int q = part.q;
  const long k = part.k();
  if (static_cast<long>(theta.thetas.size()) != k) throw InvalidInput("theta count mismatch");
  std::vector<Matrix> phi(k);
  for (long i = 1; i <= k; ++i) phi[i - 1] = reconstruct_coefficients(theta, i);
  const long p = ts.p();
  double loss = 0.0;
  Vector state(p * q);
  for (long t = q; t < ts.T(); ++t) {
    for (int l = 0; l < q; ++l) state.segment(l * p, p) = ts.data.row(t - 1 - l).transpose();
    loss += (ts.data.row(t).transpose() - phi[part.block_of(t) - 1] * state).squaredNorm();
  }
  loss /= static_cast<double>(ts.T() - q);
  double pen1 = 0.0, pen2 = 0.0;
  for (long i = 0; i < k; ++i) {
    if (i > 0 || w.first_block == FusionAnchor::zero) pen1 += theta.thetas[i].cwiseAbs().sum();
    pen2 += phi[i].cwiseAbs().sum();
  }
  return loss + w.lambda1 * pen1 + w.lambda2 * pen2;
}

namespace {

// Tail-sum interval propagation of the zero-solution optimality conditions.
// S_i = lam * sum_{j>=i} s_j ranges over the level subgradients; each tail
// G_i + S_i must be absorbed by the difference subgradient of block i, which
// is [-lam, lam] for penalized differences and {0} for a free first block.
bool zero_is_optimal(const std::vector<double>& tails, double lam, FusionAnchor anchor) {
  double lo = 0.0, hi = 0.0;
  for (long i = static_cast<long>(tails.size()) - 1; i >= 0; --i) {
    const double slack = (i > 0 || anchor == FusionAnchor::zero) ? lam : 0.0;
    lo = std::max(lo - lam, -tails[i] - slack);
    hi = std::min(hi + lam, -tails[i] + slack);
    if (lo > hi) return false;
  }
  return true;
}

}  // namespace

double lambda_max_stats(const BlockGramStats& st, FusionAnchor anchor) {
  const long k = static_cast<long>(st.C.size());
  const long d = st.C[0].rows(), p = st.p;
  const double n = static_cast<double>(st.n);
  double best = 0.0;
  std::vector<double> tails(k);
  for (long r = 0; r < p; ++r) {
    for (long j = 0; j < d; ++j) {
      double acc = 0.0, hi = 0.0;
      for (long i = k - 1; i >= 0; --i) {
        acc += -2.0 / n * st.C[i](j, r);
        tails[i] = acc;
        hi = std::max(hi, std::abs(acc));
      }
      // the all-zero solution is optimal once lam exceeds k * max |tail|
      hi *= static_cast<double>(k);
      if (hi <= best || zero_is_optimal(tails, best, anchor)) continue;
      double lo = best;
      for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (zero_is_optimal(tails, mid, anchor) ? hi : lo) = mid;
      }
      best = hi;
    }
  }
  if (!(best > 0.0)) throw InvalidInput("degenerate data: all cross moments vanish");

  SolverOptions opts;
  opts.max_iter = 50;
  for (int attempt = 0; attempt < 20; ++attempt) {
    PenaltyWeights w{best, best, 0.0, anchor};
    Step1Result r = solve_step1_stats(st, w, opts);
    bool zero = true;
    for (const Matrix& th : r.theta.thetas) zero = zero && th.isZero(0.0);
    if (zero) return best;
    best *= 1.0 + 1e-9;
  }
  return best;
}

double lambda_max(const TimeSeriesMatrix& ts, const BlockPartition& part, int q,
                  FusionAnchor anchor) {
  if (part.q != q) throw InvalidInput("partition lag order differs from q");
  return lambda_max_stats(compute_block_stats(ts, part), anchor);
}

LassoResult lasso_solve_gram(const Matrix& G, const Vector& c, long N, double rho,
                             const SolverOptions& opts, const Vector* warm) {
  opts.validate();
  if (rho < 0.0) throw InvalidInput("rho must be nonnegative");
  if (N < 1) throw InvalidInput("lasso needs at least one observation");
  const long d = G.rows();
  if (G.cols() != d || c.size() != d) throw InvalidInput("lasso Gram dimensions mismatch");
  LassoResult res;
  res.beta = warm ? *warm : Vector::Zero(d);
  const double nn = static_cast<double>(N);
  const double thr = 0.5 * nn * rho;
  // resid = c - G beta
  Vector resid = c - G * res.beta;
  auto kkt = [&]() {
    double worst = 0.0;
    for (long j = 0; j < d; ++j) {
      const double g = -2.0 / nn * resid(j);
      const double b = res.beta(j);
      const double v = b == 0.0 ? std::max(0.0, std::abs(g) - rho)
                                : std::abs(g + rho * (b > 0.0 ? 1.0 : -1.0));
      worst = std::max(worst, v);
    }
    return worst;
  };
  res.converged = false;
  for (int it = 0; it < opts.max_iter; ++it) {
    for (long j = 0; j < d; ++j) {
      const double gjj = G(j, j);
      const double old = res.beta(j);
      double nb = 0.0;
      if (gjj > 0.0) nb = soft_threshold(resid(j) + gjj * old, thr) / gjj;
      if (nb != old) {
        resid.noalias() -= G.col(j) * (nb - old);
        res.beta(j) = nb;
      }
    }
    res.iterations = it + 1;
    res.kkt_residual = kkt();
    if (res.kkt_residual <= opts.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

LassoResult lasso_solve(const Matrix& X, const Vector& y, double rho, const SolverOptions& opts) {
  if (X.rows() != y.size()) throw InvalidInput("lasso design rows must match response length");
  const Matrix G = X.transpose() * X;
  const Vector c = X.transpose() * y;
  return lasso_solve_gram(G, c, X.rows(), rho, opts);
}

double lasso_objective(const Matrix& X, const Vector& y, const Vector& beta, double rho) {
  return (y - X * beta).squaredNorm() / static_cast<double>(X.rows()) + rho * beta.cwiseAbs().sum();
}

WeaklySparseResult weakly_sparse_estimate(const Matrix& X, const Vector& y, double radius,
                                          double q_ball, double rho, const SolverOptions& opts) {
  if (!(radius > 0.0)) throw InvalidInput("l_q radius must be positive");
  if (!(q_ball > 0.0 && q_ball < 1.0)) throw InvalidInput("l_q exponent must be in (0,1)");
  WeaklySparseResult res;
  res.beta = lasso_solve(X, y, rho, opts).beta;
  double used = 0.0;
  long zeros = 0;
  for (long j = 0; j < res.beta.size(); ++j) {
    if (res.beta(j) == 0.0)
      ++zeros;
    else
      used += std::pow(std::abs(res.beta(j)), q_ball);
  }
  if (used > radius) {
    res.budget_exceeded = true;
    return res;
  }
  if (zeros == 0) return res;
  res.fill = std::pow((radius - used) / static_cast<double>(zeros), 1.0 / q_ball);
  const Vector corr = X.transpose() * y;
  for (long j = 0; j < res.beta.size(); ++j)
    if (res.beta(j) == 0.0) res.beta(j) = (corr(j) < 0.0 ? -1.0 : 1.0) * res.fill;
  return res;
}

}  // namespace tbss
