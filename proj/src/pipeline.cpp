#include "tbss/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "tbss/error.hpp"

namespace tbss {

namespace {

constexpr double kZeroTol = 1e-10;

std::vector<double> log_grid(double hi, double lo, int n) {
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = hi;
    return g;
  }
  const double a = std::log(hi), b = std::log(lo);
  for (int i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * i / (n - 1));
  return g;
}

long count_nonzero(const Matrix& m) { return (m.array().abs() > kZeroTol).count(); }

template <class F>
auto timed(std::map<std::string, double>& timings, const std::string& key, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto out = f();
  timings[key] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Optimal 1-D partition costs for every k <= kmax on sorted data.
struct KMeansDp {
  std::vector<std::vector<double>> cost;  // cost[k][i]: first i points into k clusters
  std::vector<std::vector<int>> arg;
};

KMeansDp kmeans_dp(const std::vector<double>& s, int kmax) {
  const int n = static_cast<int>(s.size());
  std::vector<double> c1(n + 1, 0.0), c2(n + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    c1[i + 1] = c1[i] + s[i];
    c2[i + 1] = c2[i] + s[i] * s[i];
  }
  auto sse = [&](int a, int b) {  // points [a, b)
    const double m = b - a, sum = c1[b] - c1[a];
    return std::max(0.0, (c2[b] - c2[a]) - sum * sum / m);
  };
  const double inf = std::numeric_limits<double>::infinity();
  KMeansDp dp;
  dp.cost.assign(kmax + 1, std::vector<double>(n + 1, inf));
  dp.arg.assign(kmax + 1, std::vector<int>(n + 1, 0));
  dp.cost[0][0] = 0.0;
  for (int k = 1; k <= kmax; ++k)
    for (int i = k; i <= n; ++i)
      for (int j = k - 1; j < i; ++j) {
        const double v = dp.cost[k - 1][j] + sse(j, i);
        if (v < dp.cost[k][i]) {
          dp.cost[k][i] = v;
          dp.arg[k][i] = j;
        }
      }
  return dp;
}

std::vector<double> pipeline_rho_grid(double rho_max, int n, double ratio) {
  if (!(rho_max > 0.0)) return {0.0};
  return log_grid(rho_max, ratio * rho_max, n);
}

struct SegmentDesign {
  Matrix G, C;
  Vector yy;
  long N = 0;
};

SegmentDesign segment_design(const Matrix& Z, const TimeSeriesMatrix& ts, int q, long lo, long hi) {
  SegmentDesign d;
  d.N = hi - lo + 1;
  const auto X = Z.middleRows(lo - q, d.N);
  const auto Y = ts.data.middleRows(lo, d.N);
  d.G = X.transpose() * X;
  d.C = X.transpose() * Y;
  d.yy = Y.colwise().squaredNorm().transpose();
  return d;
}

}  // namespace

void TuningConfig::validate() const {
  for (const auto* g : {&lambda1_grid, &lambda2_scale_grid, &rho_grid})
    for (size_t i = 0; i < g->size(); ++i) {
      if (!((*g)[i] > 0.0)) throw ConfigError("tuning grids must be positive");
      if (i > 0 && (*g)[i] >= (*g)[i - 1]) throw ConfigError("tuning grids must be decreasing");
    }
  if (block_size < 0) throw ConfigError("block size must be nonnegative");
  if (trim_radius != 0 && block_size != 0 && trim_radius < block_size)
    throw ConfigError("trim radius must be at least the block size");
  if (!(cv_holdout_fraction > 0.0 && cv_holdout_fraction < 1.0))
    throw ConfigError("hold-out fraction must be in (0,1)");
  if (cv_rotations < 1) throw ConfigError("cross-validation needs at least one rotation");
  if (k1 < 1 || k2 < 1) throw ConfigError("grid sizes must be positive");
  if (rho_grid_size < 1) throw ConfigError("rho grid size must be positive");
  if (!(rho_min_ratio > 0.0 && rho_min_ratio <= 1.0)) throw ConfigError("rho ratio must be in (0,1]");
  if (gap_references < 1) throw ConfigError("gap statistic needs at least one reference set");
  if (cluster_split_blocks < 0) throw ConfigError("cluster split distance must be nonnegative");
  if (lambda1 && !(*lambda1 >= 0.0)) throw ConfigError("lambda1 must be nonnegative");
  if (lambda2 && !(*lambda2 >= 0.0)) throw ConfigError("lambda2 must be nonnegative");
  try {
    solver.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

void DetectConfig::validate() const {
  if (q < 1) throw ConfigError("lag order must be positive");
  tuning.validate();
  if (stability) {
    if (n_subsamples < 2) throw ConfigError("stability selection needs at least 2 subsamples");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must be in (0,1)");
  }
}

long default_block_size(long T, int q) {
  const long b = static_cast<long>(std::floor(std::sqrt(static_cast<double>(T))));
  return std::clamp(b, 1L, std::max(1L, T - q));
}

TuneResult tune_lambdas(const TimeSeriesMatrix& ts, int q, const TuningConfig& tuning) {
  tuning.validate();
  const long T = ts.T(), p = ts.p();
  const long b = tuning.block_size > 0 ? tuning.block_size : default_block_size(T, q);
  const BlockPartition part = make_partition(T, q, b);
  const long k = part.k();

  // Every `stride`-th block, starting at a random offset, loses its last time point.
  const long stride = std::max(1L, std::lround(1.0 / tuning.cv_holdout_fraction));
  std::mt19937_64 rng(tuning.seed);
  const long offset = std::uniform_int_distribution<long>(0, std::min(stride, k) - 1)(rng);
  const long rotations = std::min<long>(tuning.cv_rotations, std::min(stride, k));
  std::vector<BlockGramStats> stats;
  std::vector<std::vector<long>> held(rotations);
  for (long r = 0; r < rotations; ++r) {
    std::vector<bool> excluded(T, false);
    for (long i = (offset + r) % std::min(stride, k) + 1; i <= k; i += stride) {
      excluded[part.end(i) - 1] = true;
      held[r].push_back(part.end(i) - 1);
    }
    stats.push_back(compute_block_stats(ts, part, &excluded));
  }

  TuneResult res;
  res.lambda_max = lambda_max_stats(stats[0], tuning.first_block);
  const double eps = b <= 2 * p ? 1e-3 : 1e-4;
  res.lambda1_grid = tuning.lambda1_grid.empty() ? log_grid(res.lambda_max, eps * res.lambda_max, tuning.k1)
                                                 : tuning.lambda1_grid;
  const std::vector<double> cgrid =
      tuning.lambda2_scale_grid.empty() ? log_grid(0.1, 1e-3 * 0.1, tuning.k2) : tuning.lambda2_scale_grid;
  const double scale = std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(T));
  for (double c : cgrid) res.lambda2_grid.push_back(c * scale);

  const Matrix Z = lag_embed(ts, q);
  const long K1 = static_cast<long>(res.lambda1_grid.size()), K2 = static_cast<long>(res.lambda2_grid.size());
  res.mspe = Matrix::Zero(K1, K2);
  long n_held = 0;
  for (long r = 0; r < rotations; ++r) {
    n_held += static_cast<long>(held[r].size());
    for (long j = 0; j < K2; ++j) {
      std::vector<Matrix> warm;
      for (long i = 0; i < K1; ++i) {
        PenaltyWeights w{res.lambda1_grid[i], res.lambda2_grid[j], 0.0, tuning.first_block};
        Step1Result fit = solve_step1_stats(stats[r], w, tuning.solver, warm.empty() ? nullptr : &warm);
        warm.assign(k, Matrix());
        warm[0] = fit.theta.thetas[0];
        for (long l = 1; l < k; ++l) warm[l] = warm[l - 1] + fit.theta.thetas[l];
        for (long t : held[r]) {
          const Matrix& phi = warm[part.block_of(t) - 1];
          res.mspe(i, j) += (ts.data.row(t).transpose() - phi * Z.row(t - q).transpose()).squaredNorm();
        }
      }
    }
  }
  res.mspe /= static_cast<double>(n_held * p);
  double best = std::numeric_limits<double>::infinity();
  long bi = -1, bj = -1;
  for (long j = 0; j < K2; ++j)
    for (long i = 0; i < K1; ++i)
      if (std::isfinite(res.mspe(i, j)) && res.mspe(i, j) < best) {
        best = res.mspe(i, j);
        bi = i;
        bj = j;
      }
  if (bi < 0) {
    res.warnings.push_back("all cross-validation fits degenerate; using grid midpoint");
    bi = K1 / 2;
    bj = K2 / 2;
  }
  res.lambda1 = res.lambda1_grid[bi];
  res.lambda2 = res.lambda2_grid[bj];
  return res;
}

Step1Output step1_candidates(const TimeSeriesMatrix& ts, int q, const TuningConfig& tuning,
                             TuneResult* tuning_out) {
  tuning.validate();
  const long b = tuning.block_size > 0 ? tuning.block_size : default_block_size(ts.T(), q);
  const BlockPartition part = make_partition(ts.T(), q, b);
  Step1Output out;
  if (tuning.lambda1 && tuning.lambda2) {
    out.lambda1 = *tuning.lambda1;
    out.lambda2 = *tuning.lambda2;
  } else {
    TuneResult tr = tune_lambdas(ts, q, tuning);
    out.lambda1 = tuning.lambda1.value_or(tr.lambda1);
    out.lambda2 = tuning.lambda2.value_or(tr.lambda2);
    if (tuning_out) *tuning_out = std::move(tr);
  }
  const BlockGramStats st = compute_block_stats(ts, part);
  Step1Result fit = solve_step1_stats(st, {out.lambda1, out.lambda2, 0.0, tuning.first_block}, tuning.solver);
  out.theta = std::move(fit.theta);
  out.converged = fit.converged;
  out.candidates.stage = Stage::candidate;
  for (long i = 2; i <= part.k(); ++i)
    if (count_nonzero(out.theta.thetas[i - 1]) > 0) out.candidates.points.push_back(part.start(i));
  return out;
}

std::pair<BreakPointSet, JumpProfile> step2_threshold(const ThetaEstimate& theta,
                                                      const TimeSeriesMatrix& ts,
                                                      const BreakPointSet& candidates,
                                                      Step2Baseline baseline) {
  const BlockPartition& part = theta.partition;
  const long k = part.k();
  JumpProfile prof;
  prof.jumps.assign(k, 0.0);
  for (long i = 2; i <= k; ++i) prof.jumps[i - 1] = theta.thetas[i - 1].squaredNorm();

  BreakPointSet out;
  out.stage = Stage::thresholded;
  std::set<double> distinct(prof.jumps.begin(), prof.jumps.end());
  if (distinct.size() < 2) {
    prof.degenerate = true;
    out.points = candidates.points;
    return {out, prof};
  }

  // Each segment between retained jumps is refit by least squares on the support of its Step-1 levels.
  const BlockGramStats st = compute_block_stats(ts, part);
  const long p = ts.p(), d = st.G[0].rows();
  std::vector<Matrix> level(k);
  level[0] = theta.thetas[0];
  for (long i = 1; i < k; ++i) level[i] = level[i - 1] + theta.thetas[i];
  const double Tp = static_cast<double>(ts.T() * p);
  const double logT = std::log(static_cast<double>(ts.T()));
  auto bic = [&](const std::vector<bool>& keep) {
    double rss = 0.0;
    long nnz = 0;
    long first = 0;
    for (long i = 1; i <= k; ++i) {
      if (i < k && !keep[i]) continue;
      Matrix G = Matrix::Zero(d, d), C = Matrix::Zero(d, p);
      Vector yy = Vector::Zero(p);
      std::vector<std::vector<bool>> supp(p, std::vector<bool>(d, false));
      for (long j = first; j < i; ++j) {
        G += st.G[j];
        C += st.C[j];
        yy += st.yy[j];
        for (long r = 0; r < p; ++r)
          for (long c = 0; c < d; ++c)
            if (std::abs(level[j](r, c)) > kZeroTol) supp[r][c] = true;
      }
      const double ridge = 1e-10 * std::max(G.trace(), 1.0);
      for (long r = 0; r < p; ++r) {
        std::vector<long> idx;
        for (long c = 0; c < d; ++c)
          if (supp[r][c]) idx.push_back(c);
        double res = yy(r);
        if (!idx.empty()) {
          const long m = static_cast<long>(idx.size());
          Matrix Gs(m, m);
          Vector cs(m);
          for (long u = 0; u < m; ++u) {
            cs(u) = C(idx[u], r);
            for (long v = 0; v < m; ++v) Gs(u, v) = G(idx[u], idx[v]);
          }
          Gs.diagonal().array() += ridge;
          const Vector beta = Gs.ldlt().solve(cs);
          res -= cs.dot(beta);
        }
        rss += std::max(res, 0.0);
        nnz += static_cast<long>(idx.size());
      }
      first = i;
    }
    rss = std::max(rss, std::numeric_limits<double>::min());
    return Tp * std::log(rss / Tp) + logT * static_cast<double>(nnz);
  };

  std::vector<long> remaining(k);
  std::iota(remaining.begin(), remaining.end(), 1L);
  std::vector<bool> in_j(k, false);
  double bic_old = baseline == Step2Baseline::empty_set ? bic(in_j) : std::numeric_limits<double>::infinity();
  prof.bic_baseline = bic_old;
  while (remaining.size() >= 2) {
    std::vector<double> vals;
    for (long i : remaining) vals.push_back(prof.jumps[i - 1]);
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) break;
    auto dp = kmeans_dp(sorted, 2);
    const long split = dp.arg[2][sorted.size()];  // sorted[split..] is the large cluster
    const double eta = 0.5 * (sorted[split] + sorted[split - 1]);
    std::vector<bool> trial = in_j;
    std::vector<long> rest;
    for (long i : remaining) {
      if (prof.jumps[i - 1] >= sorted[split])
        trial[i - 1] = true;
      else
        rest.push_back(i);
    }
    const double bic_new = bic(trial);
    if (bic_new - bic_old >= 0.0) break;
    bic_old = bic_new;
    in_j = std::move(trial);
    remaining = std::move(rest);
    prof.threshold = eta;
    prof.bic_trace.push_back(bic_new);
  }
  for (long i = 1; i <= k; ++i)
    if (in_j[i - 1]) prof.selected.push_back(i);
  for (long t : candidates.points)
    if (in_j[part.block_of(t) - 1]) out.points.push_back(t);
  return {out, prof};
}

std::pair<double, std::vector<int>> kmeans_1d(const std::vector<double>& x, int k) {
  const int n = static_cast<int>(x.size());
  if (k < 1 || k > n) throw InvalidInput("k-means needs 1 <= k <= n");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) s[i] = x[order[i]];
  auto dp = kmeans_dp(s, k);
  std::vector<int> labels(n);
  int end = n;
  for (int c = k; c >= 1; --c) {
    const int start = dp.arg[c][end];
    for (int i = start; i < end; ++i) labels[order[i]] = c - 1;
    end = start;
  }
  return {dp.cost[k][n], labels};
}

ClusterSet step3_cluster(const BreakPointSet& survivors, const BlockPartition& part,
                         std::uint64_t seed, int n_references, int split_blocks) {
  ClusterSet cs;
  if (survivors.points.empty()) return cs;
  std::vector<double> x(survivors.points.begin(), survivors.points.end());
  std::sort(x.begin(), x.end());
  const int n = static_cast<int>(x.size());
  const int kmax = std::min(n, 10);
  int chosen = 1;
  if (n > 1) {
    // Reference sets are drawn over the whole range of admissible candidate times.
    const double lo = static_cast<double>(part.start(std::min(2L, part.k())));
    const double hi = static_cast<double>(part.start(part.k()));
    const double range = std::max(hi - lo, 1.0);
    const double floor_w = 1e-12 * range * range;
    auto logw = [&](const std::vector<double>& s) {
      auto dp = kmeans_dp(s, kmax);
      std::vector<double> out(kmax);
      for (int k = 1; k <= kmax; ++k) out[k - 1] = std::log(std::max(dp.cost[k][n], floor_w));
      return out;
    };
    const std::vector<double> lw = logw(x);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    std::vector<std::vector<double>> ref(n_references);
    for (int r = 0; r < n_references; ++r) {
      std::vector<double> s(n);
      for (auto& v : s) v = ud(rng);
      std::sort(s.begin(), s.end());
      ref[r] = logw(s);
    }
    std::vector<double> sk(kmax);
    cs.gap.resize(kmax);
    for (int k = 0; k < kmax; ++k) {
      double m = 0.0;
      for (int r = 0; r < n_references; ++r) m += ref[r][k];
      m /= n_references;
      double v = 0.0;
      for (int r = 0; r < n_references; ++r) v += (ref[r][k] - m) * (ref[r][k] - m);
      sk[k] = std::sqrt(v / n_references) * std::sqrt(1.0 + 1.0 / n_references);
      cs.gap[k] = m - lw[k];
    }
    chosen = kmax;
    for (int k = 1; k < kmax; ++k)
      if (cs.gap[k - 1] >= cs.gap[k] - sk[k]) {
        chosen = k;
        break;
      }
  } else {
    cs.gap = {0.0};
  }
  if (split_blocks > 0) {
    int runs = 1;
    for (int i = 1; i < n; ++i)
      if (x[i] - x[i - 1] > static_cast<double>(split_blocks) * static_cast<double>(part.b)) ++runs;
    chosen = std::max(chosen, runs);
  }
  auto [w, labels] = kmeans_1d(x, chosen);
  cs.clusters.assign(chosen, {});
  for (int i = 0; i < n; ++i) cs.clusters[labels[i]].push_back(static_cast<long>(x[i]));

  const long b = part.b;
  for (const auto& c : cs.clusters) {
    long l, u;
    if (c.size() == 1) {
      l = c[0] - b;
      u = c[0] + b;
    } else {
      l = c.front();
      u = c.back();
    }
    cs.search_intervals.emplace_back(std::max<long>(l, part.q), std::min<long>(u, part.T));
  }
  return cs;
}

Step4Output step4_refine(const TimeSeriesMatrix& ts, int q, const ThetaEstimate& theta,
                         ClusterSet& clusters) {
  Step4Output out;
  out.refined.stage = Stage::refined;
  const BlockPartition& part = theta.partition;
  const long k = part.k();

  std::vector<size_t> keep;
  for (size_t i = 0; i < clusters.clusters.size(); ++i) {
    const auto [l, u] = clusters.search_intervals[i];
    if (u - l < 2)
      out.warnings.push_back("cluster " + std::to_string(i + 1) + " has an empty search interval; dropped");
    else
      keep.push_back(i);
  }
  ClusterSet kept;
  kept.gap = clusters.gap;
  for (size_t i : keep) {
    kept.clusters.push_back(clusters.clusters[i]);
    kept.search_intervals.push_back(clusters.search_intervals[i]);
  }
  const size_t m = kept.clusters.size();
  if (m == 0) {
    clusters = std::move(kept);
    return out;
  }

  // Blocks overlapping each open search interval; J_0 = {1}, J_{m+1} = {k}.
  std::vector<std::pair<long, long>> J;  // (min, max) block index
  J.emplace_back(1, 1);
  for (const auto& [l, u] : kept.search_intervals) {
    long jmin = k, jmax = 1;
    for (long i = 1; i <= k; ++i)
      if (part.start(i) < u && part.end(i) > l + 1) {
        jmin = std::min(jmin, i);
        jmax = std::max(jmax, i);
      }
    if (jmin > jmax) jmin = jmax = part.block_of(std::clamp(l + 1, static_cast<long>(q), part.T - 1));
    J.emplace_back(jmin, jmax);
  }
  J.emplace_back(k, k);
  std::vector<Matrix> local(m + 1);
  kept.midpoints.resize(m + 1);
  for (size_t i = 1; i <= m + 1; ++i) {
    const double mid = 0.5 * static_cast<double>(J[i - 1].second + J[i].first);
    const long w = std::clamp(static_cast<long>(std::floor(mid + 0.5)), 1L, k);
    kept.midpoints[i - 1] = w;
    local[i - 1] = reconstruct_coefficients(theta, w);
  }

  const Matrix Z = lag_embed(ts, q);
  for (size_t i = 0; i < m; ++i) {
    const auto [l, u] = kept.search_intervals[i];
    const long len = u - l;
    std::vector<double> pre_old(len + 1, 0.0), pre_new(len + 1, 0.0);
    for (long t = l; t < u; ++t) {
      const auto x = Z.row(t - q).transpose();
      const auto y = ts.data.row(t).transpose();
      pre_old[t - l + 1] = pre_old[t - l] + (y - local[i] * x).squaredNorm();
      pre_new[t - l + 1] = pre_new[t - l] + (y - local[i + 1] * x).squaredNorm();
    }
    long best_s = l + 1;
    double best = std::numeric_limits<double>::infinity();
    for (long s = l + 1; s < u; ++s) {
      const double v = pre_old[s - l] + (pre_new[len] - pre_new[s - l]);
      if (v < best) {
        best = v;
        best_s = s;
      }
    }
    out.refined.points.push_back(best_s);
  }
  clusters = std::move(kept);
  return out;
}

namespace {

// Least squares restricted to the nonzero pattern of `beta`.
Vector support_refit(const Matrix& G, const Vector& c, const Vector& beta) {
  std::vector<long> S;
  for (long k = 0; k < beta.size(); ++k)
    if (std::abs(beta(k)) > kZeroTol) S.push_back(k);
  Vector out = Vector::Zero(beta.size());
  if (S.empty()) return out;
  const long s = static_cast<long>(S.size());
  Matrix GS(s, s);
  Vector cS(s);
  for (long i = 0; i < s; ++i) {
    cS(i) = c(S[i]);
    for (long j = 0; j < s; ++j) GS(i, j) = G(S[i], S[j]);
  }
  GS.diagonal().array() += 1e-10 * std::max(GS.trace(), 1.0) / static_cast<double>(s);
  const Vector b = GS.ldlt().solve(cS);
  for (long i = 0; i < s; ++i) out(S[i]) = b(i);
  return out;
}

}  // namespace

Step5Output step5_estimate(const TimeSeriesMatrix& ts, int q, const BreakPointSet& refined,
                           long trim_radius, const std::vector<double>& rho_grid,
                           const SolverOptions& opts, int rho_grid_size, double rho_min_ratio,
                           RhoCriterion criterion, bool refit) {
  if (trim_radius < 0) throw InvalidInput("trim radius must be nonnegative");
  const long T = ts.T(), p = ts.p();
  std::vector<long> pts = refined.points;
  std::sort(pts.begin(), pts.end());
  // Response t is used only when t, t-1, ..., t-q all lie farther than R from every break.
  std::vector<std::pair<long, long>> bounds;
  long lo = q;
  for (size_t j = 0; j <= pts.size(); ++j) {
    const long hi = j < pts.size() ? pts[j] - trim_radius - 1 : T - 1;
    if (hi < lo) {
      const std::string left = j == 0 ? "series start" : "break " + std::to_string(pts[j - 1]);
      const std::string right = j < pts.size() ? "break " + std::to_string(pts[j]) : "series end";
      throw InvalidInput("segment between " + left + " and " + right + " is empty after trimming");
    }
    bounds.emplace_back(lo, hi);
    if (j < pts.size()) lo = pts[j] + trim_radius + 1 + q;
  }

  const Matrix Z = lag_embed(ts, q);
  Step5Output out;
  out.segments.segment_bounds = bounds;
  for (const auto& [a, b] : bounds) {
    SegmentDesign d = segment_design(Z, ts, q, a, b);
    const double N = static_cast<double>(d.N);
    std::vector<double> grid = rho_grid;
    if (grid.empty()) {
      const double rmax = 2.0 / N * d.C.cwiseAbs().maxCoeff();
      grid = pipeline_rho_grid(rmax, rho_grid_size, rho_min_ratio);
    }
    Matrix net = Matrix::Zero(p, p * q);
    std::vector<double> chosen(p, grid.front());
    const double lpq = std::lgamma(static_cast<double>(p * q) + 1.0);
    for (long r = 0; r < p; ++r) {
      const Vector c = d.C.col(r);
      Vector warm = Vector::Zero(p * q);
      double best = std::numeric_limits<double>::infinity();
      for (double rho : grid) {
        LassoResult lr = lasso_solve_gram(d.G, c, d.N, rho, opts, &warm);
        warm = lr.beta;
        Vector beta = refit ? support_refit(d.G, c, lr.beta) : lr.beta;
        const double rss = std::max(d.yy(r) - 2.0 * beta.dot(c) + beta.dot(d.G * beta),
                                    std::numeric_limits<double>::min());
        const double df = static_cast<double>((lr.beta.array().abs() > kZeroTol).count());
        double bic = N * std::log(rss / N) + std::log(N) * df;
        if (criterion == RhoCriterion::extended_bic)
          bic += 2.0 * (lpq - std::lgamma(df + 1.0) - std::lgamma(static_cast<double>(p * q) - df + 1.0));
        if (bic < best) {
          best = bic;
          net.row(r) = beta.transpose();
          chosen[r] = rho;
        }
      }
    }
    out.segments.networks.push_back(std::move(net));
    out.segments.stability_mask.emplace_back(std::nullopt);
    out.rho_grids.push_back(std::move(grid));
    out.selected_rho.push_back(std::move(chosen));
  }
  return out;
}

BoolMatrix stability_mask(const Matrix& prob, double tau) {
  return (prob.array() >= tau).matrix();
}

StabilityResult step6_stability(const TimeSeriesMatrix& ts, int q, const Step5Output& est,
                                const std::vector<double>& rho_grid, int n_subsamples, double tau,
                                std::uint64_t seed, const SolverOptions& opts) {
  if (n_subsamples < 2) throw InvalidInput("stability selection needs at least 2 subsamples");
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("tau must be in (0,1)");
  const long p = ts.p();
  const Matrix Z = lag_embed(ts, q);
  StabilityResult res;
  res.tau = tau;
  res.n_subsamples = n_subsamples;
  const auto& bounds = est.segments.segment_bounds;
  for (size_t j = 0; j < bounds.size(); ++j) {
    const auto [a, b] = bounds[j];
    const long N = b - a + 1, half = N / 2;
    Matrix prob = Matrix::Zero(p, p * q);
    if (half < 2) {
      res.warnings.push_back("segment " + std::to_string(j + 1) + " too short to halve; excluded");
      res.segment_included.push_back(false);
      res.selection_prob.push_back(prob);
      res.stable_mask.push_back(BoolMatrix::Constant(p, p * q, false));
      res.filtered_networks.push_back(Matrix::Zero(p, p * q));
      continue;
    }
    std::mt19937_64 rng(seed + 7919 * (j + 1));
    std::uniform_int_distribution<long> start(a, b - half + 1);
    std::vector<long> starts(n_subsamples);
    for (auto& s : starts) s = start(rng);

    for (long r = 0; r < p; ++r) {
      std::vector<double> grid;
      if (!rho_grid.empty()) {
        grid = rho_grid;
      } else {
        for (double v : est.rho_grids[j])
          if (v >= est.selected_rho[j][r]) grid.push_back(v);
      }
      Matrix counts = Matrix::Zero(grid.size(), p * q);
      for (long s : starts) {
        const auto X = Z.middleRows(s - q, half);
        const auto y = ts.data.col(r).segment(s, half);
        const Matrix G = X.transpose() * X;
        const Vector c = X.transpose() * y;
        Vector warm = Vector::Zero(p * q);
        for (size_t g = 0; g < grid.size(); ++g) {
          LassoResult lr = lasso_solve_gram(G, c, half, grid[g], opts, &warm);
          warm = lr.beta;
          for (long e = 0; e < p * q; ++e)
            if (std::abs(lr.beta(e)) > kZeroTol) counts(g, e) += 1.0;
        }
      }
      prob.row(r) = counts.colwise().maxCoeff() / static_cast<double>(n_subsamples);
    }
    res.segment_included.push_back(true);
    BoolMatrix mask = stability_mask(prob, tau);
    res.selection_prob.push_back(prob);
    res.filtered_networks.push_back(est.segments.networks[j].array() * mask.cast<double>().array());
    res.stable_mask.push_back(std::move(mask));
  }
  return res;
}

BlockSizeChoice select_block_size(const TimeSeriesMatrix& ts, int q, int K, const TuningConfig& tuning) {
  if (K < 2) throw InvalidInput("block-size search needs K >= 2");
  BlockSizeChoice out;
  const double T = static_cast<double>(ts.T());
  auto count_for = [&](long b) {
    TuningConfig t = tuning;
    t.block_size = b;
    Step1Output s1 = step1_candidates(ts, q, t);
    auto [thr, prof] = step2_threshold(s1.theta, ts, s1.candidates, t.step2_baseline);
    ClusterSet cs = step3_cluster(thr, s1.theta.partition, t.seed, t.gap_references, t.cluster_split_blocks);
    if (cs.clusters.empty()) return 0L;
    return static_cast<long>(step4_refine(ts, q, s1.theta, cs).refined.points.size());
  };
  for (int j = 0; j < K; ++j) {
    const long b = std::clamp(static_cast<long>(std::floor(std::pow(T, 0.5 - j / (2.0 * K)))), 1L,
                              ts.T() - q);
    out.tried.push_back(b);
    out.counts.push_back(count_for(b));
    if (j > 0 && out.counts[j] == out.counts[j - 1]) {
      out.block_size = out.tried[j - 1];
      return out;
    }
  }
  out.block_size = default_block_size(ts.T(), q);
  out.warnings.push_back("no block-size agreement found; using floor(sqrt(T))");
  return out;
}

LagChoice select_lag(const TimeSeriesMatrix& ts, int d_max, const TuningConfig& tuning) {
  if (d_max < 1) throw InvalidInput("maximum lag must be >= 1");
  LagChoice out;
  double best = std::numeric_limits<double>::infinity();
  const long p = ts.p();
  int effective = 1;
  for (int d = 1; d <= d_max; ++d) {
    DetectConfig cfg;
    cfg.q = d;
    cfg.tuning = tuning;
    double total = 0.0;
    bool ok = true;
    int highest = 1;
    try {
      DetectReport rep = detect(ts, cfg);
      const Matrix Z = lag_embed(ts, d);
      const auto& seg = rep.estimate->segments;
      for (size_t j = 0; j < seg.networks.size() && ok; ++j) {
        // shift every start to the window available at the largest lag
        const long a = seg.segment_bounds[j].first + (d_max - d), b = seg.segment_bounds[j].second;
        const long N = b - a + 1;
        if (N < 1) {
          ok = false;
          break;
        }
        Matrix resid = ts.data.middleRows(a, N) - Z.middleRows(a - d, N) * seg.networks[j].transpose();
        Matrix cov = resid.transpose() * resid / static_cast<double>(N) + 1e-6 * Matrix::Identity(p, p);
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success) {
          ok = false;
          break;
        }
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        for (int l = d; l > highest; --l)
          if (count_nonzero(seg.networks[j].middleCols((l - 1) * p, p)) > 0) {
            highest = l;
            break;
          }
        total += logdet + std::log(static_cast<double>(N)) * static_cast<double>(count_nonzero(seg.networks[j]));
      }
    } catch (const std::exception& e) {
      out.warnings.push_back("lag " + std::to_string(d) + " skipped: " + e.what());
      ok = false;
    }
    if (!ok) {
      out.bic.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.bic.push_back(total);
    if (total < best) {
      best = total;
      out.q = d;
      effective = highest;
    }
  }
  // a fit whose top lag blocks are all zero is a lower-order model
  out.q = std::min(out.q, effective);
  return out;
}

DetectReport detect(const TimeSeriesMatrix& ts, const DetectConfig& config) {
  config.validate();
  const int q = config.q;
  if (ts.T() <= q + 1) throw InvalidInput("series too short for the lag order");
  DetectReport rep;
  rep.T = ts.T();
  rep.p = ts.p();
  rep.q = q;
  TuningConfig tuning = config.tuning;
  rep.block_size = tuning.block_size > 0 ? tuning.block_size : default_block_size(ts.T(), q);
  tuning.block_size = rep.block_size;
  rep.trim_radius = tuning.trim_radius > 0 ? tuning.trim_radius : rep.block_size;

  auto guard = [](const char* step, auto&& f) {
    try {
      return f();
    } catch (const PipelineError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(step, e.what());
    }
  };

  TuneResult tr;
  Step1Output s1 = guard("step1", [&] {
    return timed(rep.timings_ms, "step1", [&] { return step1_candidates(ts, q, tuning, &tr); });
  });
  for (auto& w : tr.warnings) rep.warnings.push_back(w);
  rep.lambda1 = s1.lambda1;
  rep.lambda2 = s1.lambda2;
  rep.step1_converged = s1.converged;
  if (!s1.converged) rep.warnings.push_back("step 1 solver reached max_iter before converging");
  rep.candidates = s1.candidates;
  rep.theta = std::move(s1.theta);

  auto [thr, prof] = guard("step2", [&] {
    return timed(rep.timings_ms, "step2", [&] { return step2_threshold(rep.theta, ts, rep.candidates, tuning.step2_baseline); });
  });
  rep.thresholded = thr;
  rep.jumps = prof;

  rep.clusters = guard("step3", [&] {
    return timed(rep.timings_ms, "step3", [&] {
      return step3_cluster(rep.thresholded, rep.theta.partition, tuning.seed, tuning.gap_references,
                           tuning.cluster_split_blocks);
    });
  });

  rep.refined.stage = Stage::refined;
  if (!rep.clusters.clusters.empty()) {
    Step4Output s4 = guard("step4", [&] {
      return timed(rep.timings_ms, "step4", [&] { return step4_refine(ts, q, rep.theta, rep.clusters); });
    });
    rep.refined = s4.refined;
    for (auto& w : s4.warnings) rep.warnings.push_back(w);
  } else {
    rep.timings_ms["step4"] = 0.0;
  }

  if (config.estimate_segments) {
    rep.estimate = guard("step5", [&] {
      return timed(rep.timings_ms, "step5", [&] {
        return step5_estimate(ts, q, rep.refined, rep.trim_radius, tuning.rho_grid, tuning.solver,
                              tuning.rho_grid_size, tuning.rho_min_ratio, tuning.rho_criterion,
                              tuning.refit_support);
      });
    });
    if (config.stability) {
      rep.stability = guard("step6", [&] {
        return timed(rep.timings_ms, "step6", [&] {
          return step6_stability(ts, q, *rep.estimate, tuning.rho_grid, config.n_subsamples, config.tau,
                                 tuning.seed, tuning.solver);
        });
      });
      for (size_t j = 0; j < rep.stability->stable_mask.size(); ++j)
        rep.estimate->segments.stability_mask[j] = rep.stability->stable_mask[j];
      for (auto& w : rep.stability->warnings) rep.warnings.push_back(w);
    }
  }
  return rep;
}

}  // namespace tbss
