#include <catch_amalgamated.hpp>
#include <random>

#include "tbss/error.hpp"
#include "tbss/model.hpp"

using namespace tbss;

TEST_CASE("lag embedding with q = 1 reproduces the rows") {
  TimeSeriesMatrix ts(Matrix{{1.0}, {2.0}, {3.0}});
  Matrix y = lag_embed(ts, 1);
  REQUIRE(y.rows() == 3);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(1, 0) == 2.0);
  CHECK(y(2, 0) == 3.0);
}

TEST_CASE("lag embedding with q = 2 stacks newest first") {
  TimeSeriesMatrix ts(Matrix{{1.0}, {2.0}, {3.0}});
  Matrix y = lag_embed(ts, 2);
  REQUIRE(y.rows() == 2);
  CHECK(y.row(0) == Eigen::RowVector2d(2, 1));
  CHECK(y.row(1) == Eigen::RowVector2d(3, 2));
}

TEST_CASE("lag embedding matches an index-by-index loop") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int q = 1; q <= 3; ++q) {
    Matrix m(7, 2);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    TimeSeriesMatrix ts(m);
    Matrix y = lag_embed(ts, q);
    REQUIRE(y.rows() == 7 - q + 1);
    REQUIRE(y.cols() == 2 * q);
    std::vector<int> seen(m.size(), 0);
    for (long l = q - 1; l < 7; ++l)
      for (int lag = 0; lag < q; ++lag)
        for (long c = 0; c < 2; ++c) {
          CHECK(y(l - q + 1, lag * 2 + c) == m(l - lag, c));
          ++seen[(l - lag) * 2 + c];
        }
    // each entry appears once for every admissible (row, lag) pair
    for (long t = 0; t < 7; ++t) {
      int expected = 0;
      for (int lag = 0; lag < q; ++lag)
        if (t + lag >= q - 1 && t + lag <= 6) ++expected;
      CHECK(seen[t * 2] == expected);
    }
  }
}

TEST_CASE("lag embedding rejects short series") {
  TimeSeriesMatrix ts(Matrix{{1.0}, {2.0}});
  CHECK_THROWS_AS(lag_embed(ts, 2), InvalidInput);
}

TEST_CASE("time series rejects non-finite values") {
  Matrix m{{1.0}, {std::nan("")}};
  CHECK_THROWS_AS(TimeSeriesMatrix(m), InvalidInput);
}

TEST_CASE("partition of 600 responses into blocks of 25") {
  BlockPartition part = make_partition(601, 1, 25);
  REQUIRE(part.k() == 24);
  for (long i = 0; i <= 24; ++i) CHECK(part.ends[i] == 1 + 25 * i);
}

TEST_CASE("partition with block size spanning all responses has one block") {
  BlockPartition part = make_partition(11, 1, 10);
  CHECK(part.k() == 1);
  CHECK(part.ends.front() == 1);
  CHECK(part.ends.back() == 11);
}

TEST_CASE("partition block lengths sum to T - q") {
  BlockPartition part = make_partition(100, 2, 7);
  CHECK(part.k() == 14);
  long total = 0;
  for (long i = 1; i <= part.k(); ++i) total += part.length(i);
  CHECK(total == 98);
  for (long T = 20; T < 80; T += 7)
    for (long b = 1; b <= T - 3; b += 3) {
      auto pt = make_partition(T, 3, b);
      long s = 0;
      for (long i = 1; i <= pt.k(); ++i) {
        s += pt.length(i);
        if (i < pt.k()) CHECK(pt.length(i) == b);
        CHECK(pt.length(i) >= b);
      }
      CHECK(s == T - 3);
    }
}

TEST_CASE("partition rejects out-of-range block sizes") {
  CHECK_THROWS_AS(make_partition(10, 1, 0), InvalidInput);
  CHECK_THROWS_AS(make_partition(10, 1, 10), InvalidInput);
}

TEST_CASE("block lookup agrees with block bounds") {
  auto part = make_partition(50, 2, 6);
  for (long i = 1; i <= part.k(); ++i)
    for (long t = part.start(i); t < part.end(i); ++t) CHECK(part.block_of(t) == i);
}

TEST_CASE("coefficient reconstruction") {
  ThetaEstimate th;
  th.partition = make_partition(40, 1, 8);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 5; ++i) {
    Matrix m(2, 2);
    for (long j = 0; j < 4; ++j) m.data()[j] = nd(rng);
    th.thetas.push_back(m);
  }
  CHECK(reconstruct_coefficients(th, 1) == th.thetas[0]);
  Matrix acc = Matrix::Zero(2, 2);
  for (long i = 1; i <= 5; ++i) {
    acc = acc + th.thetas[i - 1];
    CHECK((reconstruct_coefficients(th, i) - acc).norm() == 0.0);
  }
  CHECK_THROWS_AS(reconstruct_coefficients(th, 0), InvalidInput);
  CHECK_THROWS_AS(reconstruct_coefficients(th, 6), InvalidInput);

  ThetaEstimate flat = th;
  for (size_t i = 1; i < flat.thetas.size(); ++i) flat.thetas[i].setZero();
  for (long i = 1; i <= 5; ++i) CHECK(reconstruct_coefficients(flat, i) == flat.thetas[0]);

  ThetaEstimate tail;
  tail.thetas = {th.thetas[0], Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  CHECK(reconstruct_coefficients(tail, 3) == th.thetas[0]);
}

TEST_CASE("model validation rejects identical consecutive segments") {
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = Matrix::Identity(2, 2);
  m.transitions = {Matrix::Identity(2, 2) * 0.5, Matrix::Identity(2, 2) * 0.5};
  m.break_points = {10};
  CHECK_THROWS_AS(m.validate(), InvalidInput);
  m.transitions[1] *= -1.0;
  CHECK_NOTHROW(m.validate());
}
