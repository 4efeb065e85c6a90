#include "tbss/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "tbss/error.hpp"
#include "tbss/vargen.hpp"

namespace tbss {

namespace {

double ratio(double a, double b, bool& degenerate) {
  if (b == 0.0) {
    degenerate = true;
    return 0.0;
  }
  return a / b;
}

void mean_sd(const std::vector<double>& x, double& mean, double& sd) {
  mean = sd = 0.0;
  if (x.empty()) return;
  mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() < 2) return;
  double v = 0.0;
  for (double e : x) v += (e - mean) * (e - mean);
  sd = std::sqrt(v / static_cast<double>(x.size() - 1));
}

double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

}  // namespace

EstimationReport confusion_from_counts(long tp, long fp, long fn, long tn) {
  if (tp < 0 || fp < 0 || fn < 0 || tn < 0) throw InvalidInput("confusion counts must be nonnegative");
  EstimationReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  const double TP = tp, FP = fp, FN = fn, TN = tn;
  r.sen = ratio(TP, TP + FN, r.degenerate);
  r.spc = ratio(TN, TN + FP, r.degenerate);
  const double den = std::sqrt((TP + FP) * (TP + FN) * (TN + FP) * (TN + FN));
  r.mcc = ratio(TP * TN - FP * FN, den, r.degenerate);
  return r;
}

EstimationReport confusion_metrics(const Matrix& est, const Matrix& truth, double zero_tol) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw InvalidInput("confusion metrics need matching shapes");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (long i = 0; i < est.rows(); ++i)
    for (long j = 0; j < est.cols(); ++j) {
      const bool e = std::abs(est(i, j)) > zero_tol, t = std::abs(truth(i, j)) > zero_tol;
      if (e && t) ++tp;
      else if (e) ++fp;
      else if (t) ++fn;
      else ++tn;
    }
  return confusion_from_counts(tp, fp, fn, tn);
}

double relative_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw InvalidInput("relative error needs matching shapes");
  const double nt = truth.norm();
  if (nt == 0.0) throw InvalidInput("relative error is undefined for an all-zero truth");
  return (est - truth).norm() / nt;
}

BreakMatch match_breaks(const std::vector<long>& est, const std::vector<long>& truth, long T) {
  const size_t m = truth.size();
  BreakMatch out{std::vector<bool>(m, false), std::vector<long>(m, -1)};
  // (distance, true index, estimate index) for every estimate inside a selection interval
  std::vector<std::tuple<long, size_t, size_t>> pairs;
  for (size_t j = 0; j < m; ++j) {
    const long prev = j == 0 ? 0 : truth[j - 1];
    const long next = j + 1 == m ? T : truth[j + 1];
    const double lo = truth[j] - (truth[j] - prev) / 5.0;
    const double hi = truth[j] + (next - truth[j]) / 5.0;
    for (size_t e = 0; e < est.size(); ++e)
      if (est[e] >= lo && est[e] <= hi) pairs.emplace_back(std::abs(est[e] - truth[j]), j, e);
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> used(est.size(), false);
  for (const auto& [dist, j, e] : pairs) {
    if (out.success[j] || used[e]) continue;
    out.success[j] = true;
    out.matched[j] = est[e];
    used[e] = true;
  }
  return out;
}

std::vector<bool> detection_success(const std::vector<long>& est, const std::vector<long>& truth,
                                    long T) {
  return match_breaks(est, truth, T).success;
}

double hausdorff(const std::vector<long>& A, const std::vector<long>& B) {
  if (B.empty()) return 0.0;
  if (A.empty()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (long b : B) {
    long best = std::numeric_limits<long>::max();
    for (long a : A) best = std::min(best, std::abs(b - a));
    worst = std::max(worst, static_cast<double>(best));
  }
  return worst;
}

double hamming_network(const BoolMatrix& a, const BoolMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("hamming distance needs matching shapes");
  if (a.size() == 0) return 0.0;
  long diff = 0;
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j) diff += a(i, j) != b(i, j);
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

EstimationReport score_segments(const SegmentNetworkSet& est, const PiecewiseVarModel& truth, long T,
                                double zero_tol) {
  if (est.networks.empty()) throw InvalidInput("no estimated segments to score");
  std::vector<long> edges{0};
  edges.insert(edges.end(), truth.break_points.begin(), truth.break_points.end());
  edges.push_back(T);
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double re = 0.0;
  for (size_t s = 0; s < est.networks.size(); ++s) {
    const auto [lo, hi] = est.segment_bounds[s];
    size_t best = 0;
    long best_overlap = -1;
    for (size_t j = 0; j + 1 < edges.size(); ++j) {
      const long ov = std::min(hi + 1, edges[j + 1]) - std::max(lo, edges[j]);
      if (ov > best_overlap) {
        best_overlap = ov;
        best = j;
      }
    }
    const EstimationReport r = confusion_metrics(est.networks[s], truth.transitions[best], zero_tol);
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
    tn += r.tn;
    re += relative_error(est.networks[s], truth.transitions[best]);
  }
  EstimationReport out = confusion_from_counts(tp, fp, fn, tn);
  out.re = re / static_cast<double>(est.networks.size());
  return out;
}

namespace {

struct ReplicateRun {
  std::vector<ReplicateRecord> records;
  double time_mean = 0.0, time_sd = 0.0;
  int failures = 0;
};

ReplicateRun run_replicates(const Scenario& sc, const BenchmarkOptions& opt, long block_size) {
  ReplicateRun run;
  std::vector<double> times;
  for (int r = 0; r < opt.replicates; ++r) {
    ReplicateRecord rec;
    rec.seed = opt.seed + static_cast<std::uint64_t>(r);
    DetectConfig cfg = opt.config;
    cfg.q = sc.spec.q;
    cfg.tuning.block_size = block_size;
    cfg.tuning.seed = rec.seed;
    try {
      const TimeSeriesMatrix ts = simulate_scenario(sc, rec.seed, opt.burn_in);
      const auto t0 = std::chrono::steady_clock::now();
      const DetectReport rep = detect(ts, cfg);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      times.push_back(rec.seconds);
      rec.refined = rep.refined.points;
      if (rep.estimate && !sc.nonlinear)
        rec.estimation = score_segments(rep.estimate->segments, sc.model, sc.spec.T);
    } catch (const std::exception& e) {
      rec.error = e.what();
      ++run.failures;
    }
    run.records.push_back(std::move(rec));
  }
  mean_sd(times, run.time_mean, run.time_sd);
  return run;
}

}  // namespace

BenchmarkReport run_benchmark(const std::string& scenario, const BenchmarkOptions& options) {
  if (options.replicates < 1) throw ConfigError("benchmark needs at least one replicate");
  options.config.validate();
  const Scenario sc = scenario_catalog(scenario);
  const long T = sc.spec.T;
  const std::vector<long>& truth = sc.model.break_points;

  BenchmarkReport rep;
  rep.scenario = scenario;
  rep.T = T;
  rep.p = sc.spec.p;
  rep.q = sc.spec.q;
  rep.block_size = options.config.tuning.block_size > 0 ? options.config.tuning.block_size : sc.spec.block_size;
  rep.replicates = options.replicates;

  ReplicateRun run = run_replicates(sc, options, rep.block_size);
  rep.failures = run.failures;
  rep.time_mean = run.time_mean;
  rep.time_sd = run.time_sd;

  std::vector<std::vector<double>> locs(truth.size());
  int false_runs = 0, ok_runs = 0;
  std::vector<double> sen, spc, mcc, re;
  for (const auto& rec : run.records) {
    if (!rec.error.empty()) continue;
    ++ok_runs;
    const BreakMatch bm = match_breaks(rec.refined, truth, T);
    for (size_t j = 0; j < truth.size(); ++j)
      if (bm.success[j]) locs[j].push_back(static_cast<double>(bm.matched[j]) / static_cast<double>(T));
    const long matched = std::count(bm.success.begin(), bm.success.end(), true);
    if (static_cast<long>(rec.refined.size()) > matched) ++false_runs;
    if (rec.estimation) {
      sen.push_back(rec.estimation->sen);
      spc.push_back(rec.estimation->spc);
      mcc.push_back(rec.estimation->mcc);
      re.push_back(rec.estimation->re);
    }
  }
  for (size_t j = 0; j < truth.size(); ++j) {
    BreakStats b;
    b.truth = truth[j];
    b.relative_truth = static_cast<double>(truth[j]) / static_cast<double>(T);
    b.hits = static_cast<int>(locs[j].size());
    b.rate = static_cast<double>(b.hits) / static_cast<double>(options.replicates);
    mean_sd(locs[j], b.mean, b.sd);
    rep.breaks.push_back(b);
  }
  rep.false_detection_rate = ok_runs ? static_cast<double>(false_runs) / ok_runs : 0.0;
  if (!re.empty()) {
    EstimationSummary s;
    double sd;
    mean_sd(sen, s.sen, sd);
    mean_sd(spc, s.spc, sd);
    mean_sd(mcc, s.mcc, sd);
    mean_sd(re, s.re, sd);
    s.re_median = median(re);
    s.scored = static_cast<int>(re.size());
    rep.estimation = s;
  }
  rep.records = std::move(run.records);

  for (long b : options.sweep_blocks) {
    ReplicateRun sw = run_replicates(sc, options, b);
    SweepPoint pt;
    pt.block_size = b;
    pt.time_mean = sw.time_mean;
    pt.time_sd = sw.time_sd;
    pt.failures = sw.failures;
    double hits = 0.0;
    for (const auto& rec : sw.records) {
      if (!rec.error.empty() || truth.empty()) continue;
      const auto ok = detection_success(rec.refined, truth, T);
      hits += static_cast<double>(std::count(ok.begin(), ok.end(), true)) / static_cast<double>(truth.size());
    }
    pt.rate_mean = truth.empty() ? 0.0 : hits / options.replicates;
    rep.sweep.push_back(pt);
  }
  return rep;
}

std::string format_table(const BenchmarkReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "scenario %s  p=%ld T=%ld q=%d b=%ld  replicates=%d failures=%d\n",
                report.scenario.c_str(), report.p, report.T, report.q, report.block_size, report.replicates,
                report.failures);
  os << line;
  std::snprintf(line, sizeof line, "%-6s %8s %8s %6s %8s %6s %6s %6s %6s\n", "CP", "mean", "sd", "rate",
                "time", "SEN", "SPC", "MCC", "RE");
  os << line;
  auto metric = [&](double v) {
    char b[16];
    std::snprintf(b, sizeof b, "%6.3f", v);
    return std::string(b);
  };
  const std::string dash = "     -";
  const auto& e = report.estimation;
  if (report.breaks.empty()) {
    std::snprintf(line, sizeof line, "%-6s %8s %8s %6s %8.3f %s %s %s %s\n", "-", "-", "-", "-", report.time_mean,
                  e ? metric(e->sen).c_str() : dash.c_str(), e ? metric(e->spc).c_str() : dash.c_str(),
                  e ? metric(e->mcc).c_str() : dash.c_str(), e ? metric(e->re).c_str() : dash.c_str());
    os << line;
  }
  for (size_t j = 0; j < report.breaks.size(); ++j) {
    const BreakStats& b = report.breaks[j];
    const bool first = j == 0;
    std::snprintf(line, sizeof line, "%-6zu %8.3f %8.3f %6.2f %8s %s %s %s %s\n", j + 1, b.mean, b.sd, b.rate,
                  first ? std::to_string(report.time_mean).substr(0, 8).c_str() : "",
                  first && e ? metric(e->sen).c_str() : dash.c_str(), first && e ? metric(e->spc).c_str() : dash.c_str(),
                  first && e ? metric(e->mcc).c_str() : dash.c_str(), first && e ? metric(e->re).c_str() : dash.c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "false detection rate %.3f\n", report.false_detection_rate);
  os << line;
  for (const auto& s : report.sweep) {
    std::snprintf(line, sizeof line, "sweep b=%ld  time %.3f +- %.3f s  rate %.2f  failures %d\n", s.block_size,
                  s.time_mean, s.time_sd, s.rate_mean, s.failures);
    os << line;
  }
  return os.str();
}

}  // namespace tbss
