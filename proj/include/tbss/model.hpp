#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace tbss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Observed series. Row t holds y_t (0-based time), columns are the p series.
struct TimeSeriesMatrix {
  Matrix data;

  TimeSeriesMatrix() = default;
  explicit TimeSeriesMatrix(Matrix m);

  long T() const { return data.rows(); }
  long p() const { return data.cols(); }
};

// Piecewise VAR(q). Segment j governs times [t_{j-1}, t_j) with t_0 = 0 and
// t_{m0+1} = T; a break point t_j is the first sample of the new regime.
// Each transition is p x pq, lag blocks ordered [Phi_1 | Phi_2 | ... | Phi_q].
struct PiecewiseVarModel {
  int q = 1;
  std::vector<long> break_points;
  std::vector<Matrix> transitions;
  Matrix noise_cov;

  long p() const { return noise_cov.rows(); }
  void validate() const;
};

// Blocks cover response times: block i (1-based) spans [ends[i-1], ends[i]),
// with ends[0] = q and ends[k] = T. The final block absorbs any remainder.
struct BlockPartition {
  long T = 0;
  int q = 1;
  long b = 1;
  std::vector<long> ends;

  long k() const { return static_cast<long>(ends.size()) - 1; }
  long start(long i) const { return ends[i - 1]; }
  long end(long i) const { return ends[i]; }
  long length(long i) const { return ends[i] - ends[i - 1]; }
  // 1-based block holding response time t; t must lie in [q, T).
  long block_of(long t) const;
};

struct ThetaEstimate {
  std::vector<Matrix> thetas;  // thetas[i-1] is theta_i, each p x pq
  BlockPartition partition;
};

enum class Stage { candidate, thresholded, clustered, refined };

struct BreakPointSet {
  std::vector<long> points;
  Stage stage = Stage::candidate;
};

struct SegmentNetworkSet {
  std::vector<Matrix> networks;
  std::vector<std::pair<long, long>> segment_bounds;  // inclusive response-time ranges
  std::vector<std::optional<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>>> stability_mask;
};

const char* stage_name(Stage s);

// Rows are Y_l = (y_l', ..., y_{l-q+1}')' for l = q-1 .. T-1 (row index l-q+1).
Matrix lag_embed(const TimeSeriesMatrix& ts, int q);

BlockPartition make_partition(long T, int q, long b);

// Sum of theta_1 .. theta_upto (1-based).
Matrix reconstruct_coefficients(const ThetaEstimate& theta, long upto_block);

}  // namespace tbss
