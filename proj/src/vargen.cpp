#include "tbss/vargen.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "tbss/error.hpp"

namespace tbss {

extern const char* const kScenarioFPattern;

namespace {

Matrix companion(const Matrix& a) {
  const long p = a.rows(), pq = a.cols();
  Matrix c = Matrix::Zero(pq, pq);
  c.topRows(p) = a;
  if (pq > p) c.bottomLeftCorner(pq - p, pq - p).setIdentity();
  return c;
}

Matrix scale_lags(const Matrix& a, double c) { return a * c; }

Matrix noise_factor(const Matrix& cov) {
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw InvalidInput("noise covariance not symmetric");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw InvalidInput("noise covariance not positive definite");
  return llt.matrixL();
}

std::vector<long> absolute_breaks(const std::vector<double>& rel, long T) {
  std::vector<long> out;
  for (double r : rel) out.push_back(std::lround(r * static_cast<double>(T)));
  return out;
}

Matrix off_diagonal(long p, double mag, int segment) {
  Matrix a = Matrix::Zero(p, p);
  for (long i = 0; i + 1 < p; ++i) a(i, i + 1) = ((i + segment) % 2 == 0 ? 1.0 : -1.0) * mag;
  return a;
}

// Sparse random transition: about `density` of entries nonzero with magnitudes in
// [0.5, 0.9] and random signs, redrawn until rescaling to radius 0.8 keeps the
// entries on a comparable scale.
Matrix random_sparse(long p, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.5, 0.9);
  std::bernoulli_distribution sign(0.5);
  const long nnz = std::max<long>(1, std::lround(density * static_cast<double>(p * p)));
  std::vector<long> cells(p * p);
  for (long i = 0; i < p * p; ++i) cells[i] = i;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::shuffle(cells.begin(), cells.end(), rng);
    Matrix a = Matrix::Zero(p, p);
    for (long e = 0; e < nnz; ++e)
      a(cells[e] / p, cells[e] % p) = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    const double r = companion_spectral_radius(a);
    if (r > 1e-6 && 0.8 / r >= 0.5 && 0.8 / r <= 1.25) return a;
  }
  throw InvalidInput("could not draw a random transition with nonzero spectral radius");
}

std::vector<std::vector<int>> load_f_pattern() {
  std::istringstream in(kScenarioFPattern);
  std::vector<std::vector<int>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<int> r;
    int v;
    while (ls >> v) r.push_back(v);
    rows.push_back(std::move(r));
  }
  return rows;
}

Scenario linear_scenario(ScenarioSpec spec) {
  Scenario sc;
  sc.model.q = spec.q;
  sc.model.break_points = absolute_breaks(spec.relative_breaks, spec.T);
  sc.model.noise_cov = spec.noise_variance * Matrix::Identity(spec.p, spec.p);
  const long p = spec.p;
  const size_t nseg = spec.relative_breaks.size() + 1;
  std::mt19937_64 rng(spec.seed);
  switch (spec.pattern) {
    case SparsityPattern::one_off_diagonal:
      for (size_t j = 0; j < nseg; ++j) {
        Matrix a(p, p * spec.q);
        if (spec.q == 1) {
          a = off_diagonal(p, spec.magnitudes[j][0], static_cast<int>(j));
        } else {
          // Multi-lag schedules carry explicit signed magnitudes per lag.
          a.setZero();
          for (int l = 0; l < spec.q; ++l)
            for (long i = 0; i + 1 < p; ++i) a(i, l * p + i + 1) = spec.magnitudes[j][l];
        }
        sc.model.transitions.push_back(std::move(a));
      }
      break;
    case SparsityPattern::diagonal:
      for (size_t j = 0; j < nseg; ++j)
        sc.model.transitions.push_back(spec.magnitudes[j][0] * Matrix::Identity(p, p));
      break;
    case SparsityPattern::random: {
      for (size_t j = 0; j < nseg; ++j) {
        Matrix a = random_sparse(p, 0.05, rng);
        sc.model.transitions.push_back(std::move(a));
      }
      sc.model.transitions = rescale_spectral_radius(sc.model.transitions, 0.8);
      break;
    }
    case SparsityPattern::brain_like: {
      auto codes = load_f_pattern();
      if (static_cast<long>(codes.size()) != p) throw InvalidInput("scenario F pattern size mismatch");
      std::uniform_real_distribution<double> mag(0.3, 0.6);
      std::bernoulli_distribution sign(0.5);
      Matrix base = Matrix::Zero(p, p);
      for (long i = 0; i < p; ++i)
        for (long c = 0; c < p; ++c)
          if (codes[i][c] != 0) base(i, c) = (i == c || sign(rng) ? 1.0 : -1.0) * mag(rng);
      // Segments alternate between the two states, starting with closed eyes.
      for (size_t j = 0; j < nseg; ++j) {
        const int drop = (j % 2 == 0) ? 3 : 2;
        Matrix a = base;
        for (long i = 0; i < p; ++i)
          for (long c = 0; c < p; ++c)
            if (codes[i][c] == drop) a(i, c) = 0.0;
        sc.model.transitions.push_back(std::move(a));
      }
      sc.model.transitions = rescale_spectral_radius(sc.model.transitions, 0.8);
      break;
    }
    case SparsityPattern::nonlinear_g:
      throw InvalidInput("nonlinear pattern has no linear transitions");
  }
  sc.spec = std::move(spec);
  sc.model.validate();
  return sc;
}

ScenarioSpec base_spec(const std::string& name, long p, long T, long b,
                       std::vector<double> rel) {
  ScenarioSpec s;
  s.name = name;
  s.p = p;
  s.T = T;
  s.block_size = b;
  s.relative_breaks = std::move(rel);
  s.magnitudes.assign(s.relative_breaks.size() + 1, {0.8});
  return s;
}

}  // namespace

double companion_spectral_radius(const Matrix& transition) {
  Eigen::EigenSolver<Matrix> es(companion(transition), false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

std::vector<Matrix> rescale_spectral_radius(const std::vector<Matrix>& transitions,
                                            double target) {
  if (!(target > 0.0 && target < 1.0)) throw InvalidInput("target radius must be in (0,1)");
  std::vector<Matrix> out;
  for (size_t j = 0; j < transitions.size(); ++j) {
    const Matrix& a = transitions[j];
    if (!a.allFinite()) throw InvalidInput("transition not finite");
    const double r0 = companion_spectral_radius(a);
    if (r0 <= 1e-12)
      throw InvalidInput("transition " + std::to_string(j) + " has zero spectral radius");
    const long p = a.rows();
    if (a.cols() == p) {
      out.push_back(a * (target / r0));
      continue;
    }
    double lo = 0.0, hi = 1.0;
    while (companion_spectral_radius(scale_lags(a, hi)) < target) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (companion_spectral_radius(scale_lags(a, mid)) < target ? lo : hi) = mid;
    }
    out.push_back(scale_lags(a, 0.5 * (lo + hi)));
  }
  return out;
}

SimulationResult simulate_piecewise_var(const PiecewiseVarModel& model, long T, long burn_in,
                                        std::uint64_t seed) {
  model.validate();
  if (T < 2) throw InvalidInput("series length must be at least 2");
  if (burn_in < 0) throw InvalidInput("burn-in must be nonnegative");
  if (!model.break_points.empty() && model.break_points.back() >= T)
    throw InvalidInput("break point beyond series length");
  const long p = model.p();
  const int q = model.q;
  SimulationResult res{TimeSeriesMatrix(), {}};
  for (size_t j = 0; j < model.transitions.size(); ++j) {
    const double r = companion_spectral_radius(model.transitions[j]);
    if (r >= 1.0)
      res.warnings.push_back("segment " + std::to_string(j) + " has spectral radius " +
                             std::to_string(r) + " >= 1");
  }
  const Matrix L = noise_factor(model.noise_cov);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);

  const long total = burn_in + T;
  Matrix y = Matrix::Zero(total, p);
  Vector z(p), state(p * q);
  size_t seg = 0;
  for (long t = 0; t < total; ++t) {
    const long tt = t - burn_in;
    while (tt >= 0 && seg < model.break_points.size() && tt >= model.break_points[seg]) ++seg;
    for (long i = 0; i < p; ++i) z(i) = nd(rng);
    Vector yt = L * z;
    if (t >= q) {
      for (int l = 0; l < q; ++l) state.segment(l * p, p) = y.row(t - 1 - l).transpose();
      yt += model.transitions[seg] * state;
    }
    y.row(t) = yt.transpose();
  }
  Matrix out = y.bottomRows(T);
  if (!out.allFinite()) throw InvalidInput("simulated series diverged");
  res.series = TimeSeriesMatrix(std::move(out));
  return res;
}

Vector nonlinear_g_step(const NonlinearGParams::Triple& g, const Vector& x) {
  const long p = x.size();
  Vector out = Vector::Zero(p);
  for (long l = 0; l + 1 < p; ++l) {
    const double v = x(l + 1);
    out(l) = (g.alpha + g.beta * std::exp(-g.gamma * v * v)) * v;
  }
  return out;
}

TimeSeriesMatrix simulate_nonlinear_g(const NonlinearGParams& params, long p, long T,
                                      long break_point, std::uint64_t seed,
                                      double noise_variance, long burn_in) {
  if (p < 2) throw InvalidInput("nonlinear scenario needs p >= 2");
  if (T < 2) throw InvalidInput("series length must be at least 2");
  if (params.segments.size() != 2) throw InvalidInput("nonlinear scenario needs two segments");
  if (break_point <= 0 || break_point >= T) throw InvalidInput("break point outside (0, T)");
  if (noise_variance < 0.0) throw InvalidInput("noise variance must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double sd = std::sqrt(noise_variance);
  Matrix y(T, p);
  Vector x = Vector::Zero(p);
  for (long t = -burn_in; t < T; ++t) {
    const auto& g = params.segments[t < break_point ? 0 : 1];
    Vector nx = nonlinear_g_step(g, x);
    for (long i = 0; i < p; ++i) nx(i) += sd * nd(rng);
    x = nx;
    if (t >= 0) y.row(t) = x.transpose();
  }
  return TimeSeriesMatrix(std::move(y));
}

std::vector<std::string> scenario_names() {
  return {"A.1", "A.2", "A.3", "B.1", "C.1", "C.2", "C.3", "C.4", "D.1", "D.2",
          "E.1", "E.2", "F.1", "G.1", "M",   "R.10", "R.20"};
}

Scenario scenario_catalog(const std::string& name) {
  const std::vector<double> a_breaks{0.2, 0.4, 0.6, 0.8};
  if (name == "A.1") return linear_scenario(base_spec(name, 20, 6000, 60, a_breaks));
  if (name == "A.2") return linear_scenario(base_spec(name, 20, 6000, 80, a_breaks));
  if (name == "A.3") return linear_scenario(base_spec(name, 20, 6000, 100, a_breaks));
  if (name == "B.1") {
    std::vector<double> rel;
    for (int i = 1; i <= 6; ++i) rel.push_back(3000.0 * i / 21000.0);
    return linear_scenario(base_spec(name, 20, 21000, 144, rel));
  }
  if (name == "C.1") return linear_scenario(base_spec(name, 40, 1000, 31, {0.5}));
  if (name == "C.2") return linear_scenario(base_spec(name, 60, 1000, 31, {0.5}));
  if (name == "C.3") return linear_scenario(base_spec(name, 200, 1000, 31, {0.5}));
  if (name == "C.4") return linear_scenario(base_spec(name, 100, 1000, 31, {0.333, 0.666}));
  if (name == "D.1") {
    auto s = base_spec(name, 20, 3000, 55, {1000.0 / 3000.0, 2000.0 / 3000.0});
    s.q = 2;
    s.magnitudes = {{0.6, 0.3}, {-0.6, 0.3}, {0.6, 0.3}};
    return linear_scenario(s);
  }
  if (name == "D.2") {
    auto s = base_spec(name, 20, 2000, 45, {0.5});
    s.q = 2;
    s.magnitudes = {{0.5, 0.35}, {-0.6, -0.3}};
    return linear_scenario(s);
  }
  if (name == "E.1" || name == "E.2") {
    auto s = base_spec(name, 20, 1000, 31, {0.333, 0.667});
    s.pattern = SparsityPattern::random;
    s.seed = name == "E.1" ? 1001 : 2002;
    return linear_scenario(s);
  }
  if (name == "F.1") {
    auto s = base_spec(name, 21, 6000, 80, a_breaks);
    s.pattern = SparsityPattern::brain_like;
    s.seed = 3003;
    return linear_scenario(s);
  }
  if (name == "G.1") {
    Scenario sc;
    sc.spec = base_spec(name, 10, 400, 20, {0.5});
    sc.spec.pattern = SparsityPattern::nonlinear_g;
    sc.spec.noise_variance = 0.01;
    sc.spec.magnitudes.clear();
    sc.nonlinear = NonlinearGParams{{{-1.0, -1.4, 1.0}, {-1.0, -1.8, 0.01}}};
    sc.model.q = 1;
    sc.model.break_points = {200};
    sc.model.noise_cov = 0.01 * Matrix::Identity(10, 10);
    return sc;
  }
  if (name == "M") {
    auto s = base_spec(name, 20, 600, 24, {});
    s.noise_variance = 0.01;
    return linear_scenario(s);
  }
  if (name == "R.10" || name == "R.20") {
    const long p = name == "R.10" ? 10 : 20;
    return linear_scenario(base_spec(name, p, 20000, 141, a_breaks));
  }
  throw InvalidInput("unknown scenario '" + name + "'");
}

TimeSeriesMatrix simulate_scenario(const Scenario& sc, std::uint64_t seed, long burn_in) {
  if (sc.nonlinear)
    return simulate_nonlinear_g(*sc.nonlinear, sc.spec.p, sc.spec.T, sc.model.break_points.at(0),
                                seed, sc.spec.noise_variance, burn_in);
  return simulate_piecewise_var(sc.model, sc.spec.T, burn_in, seed).series;
}

}  // namespace tbss
