#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tbss/model.hpp"
#include "tbss/pipeline.hpp"

namespace tbss {

struct EstimationReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double sen = 0.0, spc = 0.0, mcc = 0.0;
  double re = 0.0;
  bool degenerate = false;  // some ratio had a zero denominator and was reported as 0
};

// Support comparison entry by entry; |x| > zero_tol counts as nonzero.
EstimationReport confusion_metrics(const Matrix& est, const Matrix& truth, double zero_tol = 1e-10);
EstimationReport confusion_from_counts(long tp, long fp, long fn, long tn);

double relative_error(const Matrix& est, const Matrix& truth);

struct BreakMatch {
  std::vector<bool> success;    // per true point
  std::vector<long> matched;    // credited estimate per true point, -1 if none
};

// Selection interval of true point j: [t_j - (t_j - t_{j-1})/5, t_j + (t_{j+1} - t_j)/5].
BreakMatch match_breaks(const std::vector<long>& est, const std::vector<long>& truth, long T);
std::vector<bool> detection_success(const std::vector<long>& est, const std::vector<long>& truth,
                                    long T);

// One-sided: max over b in B of the distance to the nearest a in A.
double hausdorff(const std::vector<long>& A, const std::vector<long>& B);

double hamming_network(const BoolMatrix& a, const BoolMatrix& b);

// Compares each estimated segment with the true regime it overlaps most.
EstimationReport score_segments(const SegmentNetworkSet& est, const PiecewiseVarModel& truth, long T,
                                double zero_tol = 1e-10);

struct BreakStats {
  long truth = 0;
  double relative_truth = 0.0;
  double mean = 0.0, sd = 0.0, rate = 0.0;
  int hits = 0;
};

struct EstimationSummary {
  double sen = 0.0, spc = 0.0, mcc = 0.0, re = 0.0;
  double re_median = 0.0;
  int scored = 0;
};

struct SweepPoint {
  long block_size = 0;
  double time_mean = 0.0, time_sd = 0.0;
  double rate_mean = 0.0;
  int failures = 0;
};

struct ReplicateRecord {
  std::uint64_t seed = 0;
  std::vector<long> refined;
  double seconds = 0.0;
  std::optional<EstimationReport> estimation;
  std::string error;
};

struct BenchmarkReport {
  std::string scenario;
  long T = 0, p = 0;
  int q = 1;
  long block_size = 0;
  int replicates = 0;
  int failures = 0;
  std::vector<BreakStats> breaks;
  double false_detection_rate = 0.0;  // replicates with an estimate outside every selection interval
  double time_mean = 0.0, time_sd = 0.0;
  std::optional<EstimationSummary> estimation;
  std::vector<SweepPoint> sweep;
  std::vector<ReplicateRecord> records;
};

struct BenchmarkOptions {
  int replicates = 10;
  std::uint64_t seed = 1;
  DetectConfig config;               // block size 0 uses the scenario's own
  std::vector<long> sweep_blocks;    // nonempty: time the pipeline at each block size
  long burn_in = 500;
};

BenchmarkReport run_benchmark(const std::string& scenario, const BenchmarkOptions& options);

// Plain-text table: CP, mean, sd, rate, time, SEN, SPC, MCC, RE.
std::string format_table(const BenchmarkReport& report);

}  // namespace tbss
