#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tbss/model.hpp"
#include "tbss/solver.hpp"

namespace tbss {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct JumpProfile {
  std::vector<double> jumps;     // v_1 .. v_k, v_1 = 0
  std::vector<long> selected;    // 1-based block indices in J
  double threshold = 0.0;        // last accepted eta
  std::vector<double> bic_trace; // accepted BIC values, strictly decreasing
  double bic_baseline = 0.0;     // starting value of the stopping rule
  bool degenerate = false;
};

// Starting value of the Step 2 stopping rule: +infinity (the first large-jump
// cluster is always kept) or the BIC of the fit without any increments.
enum class Step2Baseline { infinite, empty_set };

// Per-row criterion for choosing rho in Step 5. The extended form adds
// 2 log C(pq, df) to the ordinary BIC penalty.
enum class RhoCriterion { bic, extended_bic };

struct ClusterSet {
  std::vector<std::vector<long>> clusters;               // candidate times, ascending
  std::vector<std::pair<long, long>> search_intervals;   // open intervals (l, u)
  std::vector<long> midpoints;                           // w_1 .. w_{m+1}, block indices
  std::vector<double> gap;                               // Gap(k), k = 1..k_max
};

struct TuningConfig {
  std::vector<double> lambda1_grid;        // empty: log-spaced from lambda_max
  std::vector<double> lambda2_scale_grid;  // values of c in lambda2 = c*sqrt(log p / T)
  std::vector<double> rho_grid;            // empty: per-segment automatic grid
  std::optional<double> lambda1;           // fixed values bypass cross-validation
  std::optional<double> lambda2;
  long block_size = 0;                     // 0: floor(sqrt(T))
  long trim_radius = 0;                    // 0: equal to the block size
  double cv_holdout_fraction = 0.2;
  int cv_rotations = 1;                    // held-out block sets averaged, each shifted by one block
  int k1 = 10;
  int k2 = 5;
  int rho_grid_size = 20;
  double rho_min_ratio = 1e-3;
  int gap_references = 50;
  FusionAnchor first_block = FusionAnchor::zero;
  // Survivors more than this many block lengths apart never share a cluster; 0 disables.
  int cluster_split_blocks = 4;
  Step2Baseline step2_baseline = Step2Baseline::empty_set;
  RhoCriterion rho_criterion = RhoCriterion::extended_bic;
  bool refit_support = true;               // least-squares refit on the selected lasso support
  std::uint64_t seed = 0;
  SolverOptions solver;

  void validate() const;
};

struct StabilityResult {
  std::vector<Matrix> selection_prob;
  std::vector<BoolMatrix> stable_mask;
  std::vector<Matrix> filtered_networks;  // step 5 networks restricted to the stable mask
  std::vector<bool> segment_included;
  double tau = 0.8;
  int n_subsamples = 0;
  std::vector<std::string> warnings;
};

struct Step1Output {
  ThetaEstimate theta;
  BreakPointSet candidates;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool converged = true;
};

struct TuneResult {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_max = 0.0;
  std::vector<double> lambda1_grid;
  std::vector<double> lambda2_grid;
  Matrix mspe;  // K1 x K2
  std::vector<std::string> warnings;
};

struct Step4Output {
  BreakPointSet refined;
  std::vector<std::string> warnings;
};

struct Step5Output {
  SegmentNetworkSet segments;
  std::vector<std::vector<double>> rho_grids;     // per segment
  std::vector<std::vector<double>> selected_rho;  // per segment, per response row
};

struct DetectConfig {
  int q = 1;
  TuningConfig tuning;
  bool stability = false;
  int n_subsamples = 50;
  double tau = 0.8;
  bool estimate_segments = true;

  void validate() const;
};

struct DetectReport {
  long T = 0, p = 0;
  int q = 1;
  long block_size = 0;
  long trim_radius = 0;
  double lambda1 = 0.0, lambda2 = 0.0;
  bool step1_converged = true;
  ThetaEstimate theta;
  BreakPointSet candidates, thresholded, refined;
  JumpProfile jumps;
  ClusterSet clusters;
  std::optional<Step5Output> estimate;
  std::optional<StabilityResult> stability;
  std::map<std::string, double> timings_ms;
  std::vector<std::string> warnings;
};

// Default block size floor(sqrt(T)), clipped to the admissible range.
long default_block_size(long T, int q);

Step1Output step1_candidates(const TimeSeriesMatrix& ts, int q, const TuningConfig& tuning,
                             TuneResult* tuning_out = nullptr);

std::pair<BreakPointSet, JumpProfile> step2_threshold(const ThetaEstimate& theta,
                                                      const TimeSeriesMatrix& ts,
                                                      const BreakPointSet& candidates,
                                                      Step2Baseline baseline = Step2Baseline::empty_set);

// Optimal 1-D k-means; returns the within-cluster sum of squares and labels.
std::pair<double, std::vector<int>> kmeans_1d(const std::vector<double>& x, int k);

ClusterSet step3_cluster(const BreakPointSet& survivors, const BlockPartition& part,
                         std::uint64_t seed, int n_references = 50, int split_blocks = 4);

Step4Output step4_refine(const TimeSeriesMatrix& ts, int q, const ThetaEstimate& theta,
                         ClusterSet& clusters);

Step5Output step5_estimate(const TimeSeriesMatrix& ts, int q, const BreakPointSet& refined,
                           long trim_radius, const std::vector<double>& rho_grid,
                           const SolverOptions& opts = {}, int rho_grid_size = 20,
                           double rho_min_ratio = 1e-3,
                           RhoCriterion criterion = RhoCriterion::extended_bic, bool refit = true);

StabilityResult step6_stability(const TimeSeriesMatrix& ts, int q, const Step5Output& est,
                                const std::vector<double>& rho_grid, int n_subsamples, double tau,
                                std::uint64_t seed, const SolverOptions& opts = {});

// Applies a threshold to precomputed selection probabilities.
BoolMatrix stability_mask(const Matrix& prob, double tau);

TuneResult tune_lambdas(const TimeSeriesMatrix& ts, int q, const TuningConfig& tuning);

struct BlockSizeChoice {
  long block_size = 0;
  std::vector<long> tried;
  std::vector<long> counts;
  std::vector<std::string> warnings;
};
BlockSizeChoice select_block_size(const TimeSeriesMatrix& ts, int q, int K,
                                  const TuningConfig& tuning);

struct LagChoice {
  int q = 1;
  std::vector<double> bic;  // index d-1; NaN when skipped
  std::vector<std::string> warnings;
};
LagChoice select_lag(const TimeSeriesMatrix& ts, int d_max, const TuningConfig& tuning);

DetectReport detect(const TimeSeriesMatrix& ts, const DetectConfig& config);

}  // namespace tbss
