#include <catch_amalgamated.hpp>
#include <Eigen/Eigenvalues>
#include <random>

#include "tbss/error.hpp"
#include "tbss/vargen.hpp"

using namespace tbss;

namespace {

double companion_radius_oracle(const Matrix& a) {
  const long p = a.rows(), pq = a.cols();
  Matrix c = Matrix::Zero(pq, pq);
  c.topRows(p) = a;
  for (long i = p; i < pq; ++i) c(i, i - p) = 1.0;
  return Eigen::ComplexEigenSolver<Matrix>(c).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("spectral rescaling of scalar and diagonal transitions") {
  auto s = rescale_spectral_radius({Matrix::Constant(1, 1, 2.0)}, 0.8);
  CHECK(std::abs(s[0](0, 0) - 0.8) < 1e-12);
  auto d = rescale_spectral_radius({0.5 * Matrix::Identity(3, 3)}, 0.8);
  CHECK((d[0] - 0.8 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("spectral rescaling of lag-2 transitions hits the target radius") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a(3, 6);
    for (long i = 0; i < a.size(); ++i) a.data()[i] = 0.3 * nd(rng);
    auto r = rescale_spectral_radius({a}, 0.8);
    CHECK(std::abs(companion_radius_oracle(r[0]) - 0.8) < 1e-8);
    auto again = rescale_spectral_radius(r, 0.8);
    CHECK((again[0] - r[0]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("spectral rescaling rejects a zero radius") {
  CHECK_THROWS_AS(rescale_spectral_radius({Matrix::Zero(2, 2)}, 0.8), InvalidInput);
  CHECK_THROWS_AS(rescale_spectral_radius({Matrix::Identity(2, 2)}, 1.5), InvalidInput);
}

TEST_CASE("zero model without noise yields a zero series") {
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = Matrix::Zero(2, 2);
  m.transitions = {Matrix::Zero(2, 2)};
  auto r = simulate_piecewise_var(m, 50, 10, 1);
  CHECK(r.series.data.isZero(0.0));
}

TEST_CASE("stationary AR(1) autocorrelation") {
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = 0.1 * Matrix::Identity(2, 2);
  m.transitions = {0.5 * Matrix::Identity(2, 2)};
  auto y = simulate_piecewise_var(m, 10000, 500, 99).series.data;
  for (long c = 0; c < 2; ++c) {
    Vector v = y.col(c).array() - y.col(c).mean();
    const double ac = v.head(9999).dot(v.tail(9999)) / v.squaredNorm();
    CHECK(std::abs(ac - 0.5) < 0.05);
    const double var = v.squaredNorm() / 10000.0;
    CHECK(std::abs(var - 0.1 / 0.75) < 0.1 * 0.1 / 0.75);
  }
}

TEST_CASE("non positive definite noise covariance is rejected") {
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = Matrix{{1.0, 2.0}, {2.0, 1.0}};
  m.transitions = {0.5 * Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(simulate_piecewise_var(m, 50, 10, 1), InvalidInput);
}

TEST_CASE("unstable segments produce a warning") {
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = 0.1 * Matrix::Identity(1, 1);
  m.transitions = {Matrix::Constant(1, 1, 1.01)};
  auto r = simulate_piecewise_var(m, 50, 0, 1);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("scenario catalog entries") {
  auto a1 = scenario_catalog("A.1");
  CHECK(a1.spec.p == 20);
  CHECK(a1.spec.T == 6000);
  CHECK(a1.spec.block_size == 60);
  CHECK(a1.model.break_points == std::vector<long>{1200, 2400, 3600, 4800});
  CHECK(a1.model.transitions.size() == 5);
  CHECK(std::abs(a1.model.transitions[0](0, 1)) == 0.8);
  CHECK(a1.model.transitions[0](0, 1) == -a1.model.transitions[1](0, 1));
  CHECK(a1.model.transitions[0](0, 1) == -a1.model.transitions[0](1, 2));

  auto d2 = scenario_catalog("D.2");
  CHECK(d2.model.q == 2);
  CHECK(d2.model.transitions[0](0, 1) == 0.5);
  CHECK(d2.model.transitions[0](0, 21) == 0.35);
  CHECK(d2.model.transitions[1](0, 1) == -0.6);
  CHECK(d2.model.transitions[1](0, 21) == -0.3);

  auto m = scenario_catalog("M");
  CHECK(m.model.break_points.empty());
  CHECK(m.spec.p == 20);
  CHECK(m.spec.T == 600);
  CHECK(std::abs(m.model.transitions[0](3, 4)) == 0.8);

  for (const auto& name : {"E.1", "E.2", "F.1"}) {
    auto sc = scenario_catalog(name);
    for (const auto& t : sc.model.transitions)
      CHECK(std::abs(companion_radius_oracle(t) - 0.8) < 1e-8);
  }
  for (const auto& name : scenario_names()) CHECK_NOTHROW(scenario_catalog(name));
  CHECK_THROWS_AS(scenario_catalog("Z.9"), InvalidInput);
}

TEST_CASE("scenario simulation has the catalog dimensions and is deterministic") {
  auto a1 = scenario_catalog("A.1");
  auto y1 = simulate_scenario(a1, 7);
  CHECK(y1.T() == 6000);
  CHECK(y1.p() == 20);
  auto y2 = simulate_scenario(a1, 7);
  CHECK(y1.data == y2.data);
  auto y3 = simulate_scenario(a1, 8);
  CHECK(y1.data != y3.data);
}

TEST_CASE("long segments look stationary") {
  auto b1 = scenario_catalog("B.1");
  auto y = simulate_scenario(b1, 5).data;
  std::vector<long> bounds{0};
  for (long b : b1.model.break_points) bounds.push_back(b);
  bounds.push_back(y.rows());
  for (size_t j = 0; j + 1 < bounds.size(); ++j) {
    const long len = bounds[j + 1] - bounds[j];
    REQUIRE(len >= 2000);
    const long h = len / 2;
    auto cov = [&](long s) {
      Matrix blk = y.middleRows(s, h);
      Matrix c = blk.rowwise() - blk.colwise().mean();
      return Matrix(c.transpose() * c / static_cast<double>(h));
    };
    Matrix c1 = cov(bounds[j]), c2 = cov(bounds[j] + h);
    CHECK((c1 - c2).norm() / c1.norm() < 0.2);
  }
}

TEST_CASE("nonlinear map") {
  NonlinearGParams zero{{{0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}}};
  auto y = simulate_nonlinear_g(zero, 4, 20, 10, 1, 0.0);
  CHECK(y.data.isZero(0.0));

  NonlinearGParams::Triple g{-1.0, -1.4, 1.0};
  Vector x(3);
  x << 0.3, -0.7, 1.2;
  Vector f = nonlinear_g_step(g, x);
  CHECK(f(0) == Catch::Approx((-1.0 - 1.4 * std::exp(-0.49)) * -0.7).epsilon(1e-15));
  CHECK(f(1) == Catch::Approx((-1.0 - 1.4 * std::exp(-1.44)) * 1.2).epsilon(1e-15));
  CHECK(f(2) == 0.0);

  auto g1 = scenario_catalog("G.1");
  REQUIRE(g1.nonlinear.has_value());
  CHECK(g1.nonlinear->segments[0].beta == -1.4);
  CHECK(g1.nonlinear->segments[1].beta == -1.8);
  CHECK(g1.nonlinear->segments[1].gamma == 0.01);
  auto s = simulate_scenario(g1, 3);
  CHECK(s.T() == 400);
  CHECK(s.p() == 10);
  CHECK_THROWS_AS(simulate_nonlinear_g(zero, 1, 20, 10, 1), InvalidInput);
}
