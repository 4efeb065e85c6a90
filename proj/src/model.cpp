#include "tbss/model.hpp"

#include <algorithm>
#include <string>

#include "tbss/error.hpp"

namespace tbss {

TimeSeriesMatrix::TimeSeriesMatrix(Matrix m) : data(std::move(m)) {
  if (data.rows() < 2) throw InvalidInput("time series needs at least 2 rows");
  if (data.cols() < 1) throw InvalidInput("time series needs at least 1 column");
  if (!data.allFinite()) throw InvalidInput("time series contains non-finite values");
}

void PiecewiseVarModel::validate() const {
  if (q < 1) throw InvalidInput("lag order must be positive");
  const long pp = noise_cov.rows();
  if (pp < 1 || noise_cov.cols() != pp) throw InvalidInput("noise covariance must be square");
  if (transitions.size() != break_points.size() + 1)
    throw InvalidInput("need one transition matrix per segment");
  for (size_t j = 0; j < transitions.size(); ++j) {
    const Matrix& a = transitions[j];
    if (a.rows() != pp || a.cols() != pp * q)
      throw InvalidInput("transition " + std::to_string(j) + " has wrong shape");
    if (!a.allFinite()) throw InvalidInput("transition " + std::to_string(j) + " not finite");
    if (j > 0 && a == transitions[j - 1])
      throw InvalidInput("segments " + std::to_string(j - 1) + " and " + std::to_string(j) +
                         " share the same transition matrix");
  }
  for (size_t j = 0; j < break_points.size(); ++j) {
    if (break_points[j] <= q) throw InvalidInput("break point must exceed the lag order");
    if (j > 0 && break_points[j] <= break_points[j - 1])
      throw InvalidInput("break points must be strictly increasing");
  }
}

long BlockPartition::block_of(long t) const {
  auto it = std::upper_bound(ends.begin(), ends.end(), t);
  long i = static_cast<long>(it - ends.begin());
  return std::clamp(i, 1L, k());
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::candidate: return "candidate";
    case Stage::thresholded: return "thresholded";
    case Stage::clustered: return "clustered";
    case Stage::refined: return "refined";
  }
  return "unknown";
}

Matrix lag_embed(const TimeSeriesMatrix& ts, int q) {
  const long T = ts.T(), p = ts.p();
  if (q < 1) throw InvalidInput("lag order must be positive");
  if (T <= q) throw InvalidInput("series length must exceed the lag order");
  Matrix out(T - q + 1, p * q);
  for (long l = q - 1; l < T; ++l)
    for (int lag = 0; lag < q; ++lag)
      out.block(l - q + 1, lag * p, 1, p) = ts.data.row(l - lag);
  return out;
}

BlockPartition make_partition(long T, int q, long b) {
  if (q < 1) throw InvalidInput("lag order must be positive");
  if (b < 1 || b > T - q)
    throw InvalidInput("block size " + std::to_string(b) + " outside [1, " +
                       std::to_string(T - q) + "]");
  BlockPartition part;
  part.T = T;
  part.q = q;
  part.b = b;
  const long k = (T - q) / b;
  part.ends.resize(k + 1);
  for (long i = 0; i < k; ++i) part.ends[i] = q + i * b;
  part.ends[k] = T;
  return part;
}

Matrix reconstruct_coefficients(const ThetaEstimate& theta, long upto_block) {
  const long k = static_cast<long>(theta.thetas.size());
  if (upto_block < 1 || upto_block > k)
    throw InvalidInput("block index " + std::to_string(upto_block) + " outside [1, " +
                       std::to_string(k) + "]");
  Matrix acc = theta.thetas[0];
  for (long i = 1; i < upto_block; ++i) acc += theta.thetas[i];
  return acc;
}

}  // namespace tbss
