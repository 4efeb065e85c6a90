#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "tbss/error.hpp"
#include "tbss/io.hpp"

namespace tbss::cli {

using nlohmann::json;

namespace {

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

json points_json(const std::vector<long>& pts, long T) {
  json a = json::array();
  for (long t : pts) a.push_back({{"index", t + 1}, {"relative", round3(static_cast<double>(t) / T)}});
  return a;
}

json estimation_json(const EstimationReport& e) {
  return {{"tp", e.tp}, {"fp", e.fp}, {"fn", e.fn}, {"tn", e.tn}, {"sen", e.sen},
          {"spc", e.spc}, {"mcc", e.mcc}, {"re", e.re}, {"degenerate", e.degenerate}};
}

std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what(), 0, 0);
  }
}

Scenario lookup_scenario(const std::string& name) {
  const auto names = scenario_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string all;
    for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError("unknown scenario '" + name + "' (known: " + all + ")");
  }
  return scenario_catalog(name);
}

struct TuningFlags {
  long block_size = 0;
  long trim_radius = 0;
  std::optional<double> lambda1, lambda2;
  double holdout = 0.2;
  int cv_rotations = 1;
  int k1 = 10, k2 = 5;
  int gap_references = 50;
  int split_blocks = 4;
  int max_iter = 0;
  double tol = 0.0;
  std::string anchor = "zero";

  void add(CLI::App* app) {
    app->add_option("--block-size", block_size, "block size b_T (0: floor(sqrt(T)))");
    app->add_option("--trim-radius", trim_radius, "segment trimming radius (0: block size)");
    app->add_option("--lambda1", lambda1, "fixed lambda1, skips cross-validation");
    app->add_option("--lambda2", lambda2, "fixed lambda2, skips cross-validation");
    app->add_option("--holdout", holdout, "cross-validation hold-out fraction");
    app->add_option("--cv-rotations", cv_rotations, "shifted hold-out sets averaged");
    app->add_option("--k1", k1, "lambda1 grid size");
    app->add_option("--k2", k2, "lambda2 grid size");
    app->add_option("--gap-references", gap_references, "gap statistic reference sets");
    app->add_option("--cluster-split-blocks", split_blocks, "cluster split distance in blocks (0: off)");
    app->add_option("--max-iter", max_iter, "solver iteration cap (0: library default)");
    app->add_option("--tol", tol, "solver tolerance (0: library default)");
    app->add_option("--first-block", anchor, "penalty on the first block: zero or free")
        ->check(CLI::IsMember({"zero", "free"}));
  }

  TuningConfig apply(TuningConfig t) const {
    t.block_size = block_size;
    t.trim_radius = trim_radius;
    t.lambda1 = lambda1;
    t.lambda2 = lambda2;
    t.cv_holdout_fraction = holdout;
    t.cv_rotations = cv_rotations;
    t.k1 = k1;
    t.k2 = k2;
    t.gap_references = gap_references;
    t.cluster_split_blocks = split_blocks;
    if (max_iter > 0) t.solver.max_iter = max_iter;
    if (tol > 0.0) t.solver.tol = tol;
    t.first_block = anchor == "free" ? FusionAnchor::free : FusionAnchor::zero;
    return t;
  }
};

struct SimulateArgs {
  std::string scenario, model, output, truth_output;
  std::uint64_t seed = 0;
  long T = 0;
  long burn_in = 500;
};

struct DetectArgs {
  std::string input, output, truth;
  std::optional<std::uint64_t> seed;
  int lag = 1;
  int lag_max = 0;
  int block_candidates = 0;
  bool stability = false;
  int subsamples = 50;
  double tau = 0.8;
  bool no_estimate = false;
  TuningFlags tuning;
};

struct BenchmarkArgs {
  std::string scenario, output, table, sweep_output;
  std::uint64_t seed = 0;
  int replicates = 10;
  std::vector<long> sweep;
  long burn_in = 500;
  bool stability = false;
  int subsamples = 50;
  double tau = 0.8;
  TuningFlags tuning;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  PiecewiseVarModel model;
  TimeSeriesMatrix ts;
  long T = a.T;
  bool nonlinear = false;
  std::string name = a.scenario;
  if (!a.scenario.empty()) {
    const Scenario sc = lookup_scenario(a.scenario);
    ts = simulate_scenario(sc, a.seed, a.burn_in);
    model = sc.model;
    T = sc.spec.T;
    nonlinear = sc.nonlinear.has_value();
  } else {
    long file_T = 0;
    model = model_from_json(read_json(a.model), &file_T);
    if (T == 0) T = file_T;
    if (T <= 0) throw ConfigError("inline model needs a positive T");
    name = "inline";
    try {
      model.validate();
      const SimulationResult sim = simulate_piecewise_var(model, T, a.burn_in, a.seed);
      for (const auto& w : sim.warnings) out << "warning: " << w << '\n';
      ts = sim.series;
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  const std::string truth_path = a.truth_output.empty() ? sibling(a.output, ".truth.json") : a.truth_output;
  write_file_atomic(a.output, format_csv(ts));
  write_file_atomic(truth_path, truth_json(model, T, name, a.seed, nonlinear).dump(2) + "\n");
  out << "wrote " << ts.T() << "x" << ts.p() << " series to " << a.output << " and truth to " << truth_path << '\n';
  return ok;
}

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  const CsvTable table = ingest_csv(a.input);
  TimeSeriesMatrix series;
  try {
    series = table.series();
  } catch (const InvalidInput& e) {
    throw PipelineError("input", e.what());
  }
  const std::uint64_t seed = a.seed ? *a.seed : std::random_device{}();
  if (!a.seed) out << "seed " << seed << '\n';

  DetectConfig cfg;
  cfg.q = a.lag;
  cfg.tuning = a.tuning.apply(cfg.tuning);
  cfg.tuning.seed = seed;
  cfg.stability = a.stability;
  cfg.n_subsamples = a.subsamples;
  cfg.tau = a.tau;
  cfg.estimate_segments = !a.no_estimate;
  cfg.validate();

  std::optional<json> truth;
  if (!a.truth.empty()) truth = read_json(a.truth);

  json extra = json::object();
  DetectReport rep;
  try {
    if (a.lag_max > 0) {
      const LagChoice lc = select_lag(series, a.lag_max, cfg.tuning);
      cfg.q = lc.q;
      json bic = json::array();
      for (double v : lc.bic) bic.push_back(std::isnan(v) ? json(nullptr) : json(v));
      extra["lag_bic"] = bic;
    }
    if (a.block_candidates > 0) {
      const BlockSizeChoice bc = select_block_size(series, cfg.q, a.block_candidates, cfg.tuning);
      cfg.tuning.block_size = bc.block_size;
      extra["block_size_search"] = {{"tried", bc.tried}, {"counts", bc.counts}};
    }
    rep = detect(series, cfg);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("detect", e.what());
  }

  json j = detect_json(rep, seed);
  for (auto& [k, v] : extra.items()) j["tuning"][k] = v;
  if (!table.names.empty()) j["series_names"] = table.names;
  if (truth) {
    long T = 0;
    const PiecewiseVarModel model = model_from_json(*truth, &T);
    if (T != rep.T) throw ConfigError("truth T does not match the input series");
    const BreakMatch bm = match_breaks(rep.refined.points, model.break_points, T);
    json ev = {{"success", bm.success},
               {"hausdorff_truth_to_estimate", hausdorff(rep.refined.points, model.break_points)},
               {"hausdorff_estimate_to_truth", hausdorff(model.break_points, rep.refined.points)}};
    if (std::isinf(ev["hausdorff_truth_to_estimate"].get<double>())) ev["hausdorff_truth_to_estimate"] = nullptr;
    if (std::isinf(ev["hausdorff_estimate_to_truth"].get<double>())) ev["hausdorff_estimate_to_truth"] = nullptr;
    const bool nonlinear = truth->value("nonlinear", false);
    if (rep.estimate && !nonlinear && !model.transitions.empty())
      ev["estimation"] = estimation_json(score_segments(rep.estimate->segments, model, T));
    j["evaluation"] = ev;
  }
  write_file_atomic(a.output, j.dump(2) + "\n");
  out << rep.refined.points.size() << " break point(s):";
  for (long t : rep.refined.points) out << ' ' << t + 1;
  out << "\nreport written to " << a.output << '\n';
  return ok;
}

int cmd_benchmark(const BenchmarkArgs& a, std::ostream& out) {
  lookup_scenario(a.scenario);
  BenchmarkOptions opt;
  opt.replicates = a.replicates;
  opt.seed = a.seed;
  opt.burn_in = a.burn_in;
  opt.sweep_blocks = a.sweep;
  opt.config.tuning = a.tuning.apply(opt.config.tuning);
  opt.config.stability = a.stability;
  opt.config.n_subsamples = a.subsamples;
  opt.config.tau = a.tau;
  const BenchmarkReport rep = run_benchmark(a.scenario, opt);

  const std::string table = format_table(rep);
  out << table;
  if (!a.output.empty()) write_file_atomic(a.output, benchmark_json(rep, a.seed).dump(2) + "\n");
  if (!a.table.empty()) write_file_atomic(a.table, table);
  if (!rep.sweep.empty()) {
    std::string csv = "block_size,time_mean,time_sd,rate_mean,failures\n";
    char line[160];
    for (const auto& s : rep.sweep) {
      std::snprintf(line, sizeof line, "%ld,%.6f,%.6f,%.4f,%d\n", s.block_size, s.time_mean, s.time_sd, s.rate_mean,
                    s.failures);
      csv += line;
    }
    std::string path = a.sweep_output;
    if (path.empty()) path = a.output.empty() ? "sweep.csv" : sibling(a.output, ".sweep.csv");
    write_file_atomic(path, csv);
    out << "sweep written to " << path << '\n';
  }
  for (const auto& r : rep.records)
    if (!r.error.empty()) out << "replicate seed " << r.seed << " failed: " << r.error << '\n';
  if (2 * rep.failures > rep.replicates) {
    out << "systematic failure: " << rep.failures << " of " << rep.replicates << " replicates\n";
    return pipeline_error;
  }
  return ok;
}

}  // namespace

json matrix_json(const Matrix& m) {
  json v = json::array();
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", v}};
}

Matrix matrix_from_json(const json& j) {
  const long r = j.at("rows").get<long>(), c = j.at("cols").get<long>();
  const auto& v = j.at("values");
  if (r < 0 || c < 0 || static_cast<long>(v.size()) != r * c) throw ConfigError("matrix values do not match rows x cols");
  Matrix m(r, c);
  for (long i = 0; i < r; ++i)
    for (long k = 0; k < c; ++k) m(i, k) = v[i * c + k].get<double>();
  return m;
}

json truth_json(const PiecewiseVarModel& model, long T, const std::string& scenario, std::uint64_t seed,
                bool nonlinear) {
  json tr = json::array();
  if (!nonlinear)
    for (const auto& A : model.transitions) tr.push_back(matrix_json(A));
  return {{"schema_version", schema_version},
          {"kind", "truth"},
          {"scenario", scenario},
          {"seed", seed},
          {"T", T},
          {"p", model.p()},
          {"q", model.q},
          {"nonlinear", nonlinear},
          {"break_points", points_json(model.break_points, T)},
          {"transitions", tr},
          {"noise_cov", matrix_json(model.noise_cov)}};
}

PiecewiseVarModel model_from_json(const json& j, long* T_out) {
  try {
    PiecewiseVarModel m;
    m.q = j.value("q", 1);
    for (const auto& b : j.at("break_points")) m.break_points.push_back(b.at("index").get<long>() - 1);
    for (const auto& t : j.at("transitions")) m.transitions.push_back(matrix_from_json(t));
    m.noise_cov = matrix_from_json(j.at("noise_cov"));
    if (T_out) *T_out = j.value("T", 0L);
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model document: ") + e.what());
  }
}

json detect_json(const DetectReport& rep, std::uint64_t seed) {
  json segs = json::array();
  if (rep.estimate) {
    const auto& s = rep.estimate->segments;
    for (size_t i = 0; i < s.networks.size(); ++i) {
      json seg = {{"bounds", {s.segment_bounds[i].first + 1, s.segment_bounds[i].second + 1}},
                  {"network", matrix_json(s.networks[i])},
                  {"support", (s.networks[i].array() != 0.0).count()},
                  {"rho", rep.estimate->selected_rho[i]}};
      if (rep.stability) {
        const auto& st = *rep.stability;
        seg["stability"] = {{"included", static_cast<bool>(st.segment_included[i])},
                            {"selection_prob", matrix_json(st.selection_prob[i])},
                            {"filtered_network", matrix_json(st.filtered_networks[i])}};
      }
      segs.push_back(seg);
    }
  }
  auto one_based = [](const std::vector<long>& v) {
    std::vector<long> o(v);
    for (auto& x : o) ++x;
    return o;
  };
  json tuning = {{"q", rep.q},
                 {"block_size", rep.block_size},
                 {"trim_radius", rep.trim_radius},
                 {"lambda1", rep.lambda1},
                 {"lambda2", rep.lambda2},
                 {"step1_converged", rep.step1_converged},
                 {"jump_threshold", rep.jumps.threshold},
                 {"gap", rep.clusters.gap}};
  if (rep.stability) tuning["stability"] = {{"tau", rep.stability->tau}, {"subsamples", rep.stability->n_subsamples}};
  return {{"schema_version", schema_version},
          {"kind", "detect"},
          {"T", rep.T},
          {"p", rep.p},
          {"seed", seed},
          {"break_points", points_json(rep.refined.points, rep.T)},
          {"candidates", one_based(rep.candidates.points)},
          {"thresholded", one_based(rep.thresholded.points)},
          {"segments", segs},
          {"tuning", tuning},
          {"timings_ms", rep.timings_ms},
          {"warnings", rep.warnings}};
}

json benchmark_json(const BenchmarkReport& rep, std::uint64_t seed) {
  json breaks = json::array();
  for (const auto& b : rep.breaks)
    breaks.push_back({{"index", b.truth + 1},
                      {"relative", round3(b.relative_truth)},
                      {"mean", b.mean},
                      {"sd", b.sd},
                      {"rate", b.rate},
                      {"hits", b.hits}});
  json est = nullptr;
  if (rep.estimation) {
    const auto& e = *rep.estimation;
    est = {{"sen", e.sen}, {"spc", e.spc}, {"mcc", e.mcc}, {"re", e.re}, {"re_median", e.re_median}, {"scored", e.scored}};
  }
  json sweep = json::array();
  for (const auto& s : rep.sweep)
    sweep.push_back({{"block_size", s.block_size},
                     {"time_mean", s.time_mean},
                     {"time_sd", s.time_sd},
                     {"rate_mean", s.rate_mean},
                     {"failures", s.failures}});
  json records = json::array();
  for (const auto& r : rep.records) {
    json rec = {{"seed", r.seed}, {"break_points", points_json(r.refined, rep.T)}, {"seconds", r.seconds}};
    if (r.estimation) rec["estimation"] = estimation_json(*r.estimation);
    if (!r.error.empty()) rec["error"] = r.error;
    records.push_back(rec);
  }
  return {{"schema_version", schema_version},
          {"kind", "benchmark"},
          {"scenario", rep.scenario},
          {"seed", seed},
          {"T", rep.T},
          {"p", rep.p},
          {"q", rep.q},
          {"block_size", rep.block_size},
          {"replicates", rep.replicates},
          {"failures", rep.failures},
          {"breaks", breaks},
          {"false_detection_rate", rep.false_detection_rate},
          {"time", {{"mean", rep.time_mean}, {"sd", rep.time_sd}}},
          {"estimation", est},
          {"sweep", sweep},
          {"records", records}};
}

namespace {

// Flat key=value files; keys belong to whichever subcommand was invoked.
class FlatConfig : public CLI::ConfigINI {
 public:
  explicit FlatConfig(const CLI::App* app) : app_(app) {}
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    const auto subs = app_->get_subcommands();
    if (subs.empty()) return items;
    for (auto& it : items)
      if (it.parents.empty() || (it.parents.size() == 1 && it.parents[0] == "default"))
        it.parents = {subs.front()->get_name()};
    return items;
  }

 private:
  const CLI::App* app_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block segmentation of high-dimensional piecewise VAR series", "tbss_cli"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  app.set_config("--config", "", "key=value file, keys are the long flag names; flags win");
  app.config_formatter(std::make_shared<FlatConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "generate a scenario series and its truth");
  sim->allow_config_extras(CLI::config_extras_mode::error);
  auto* sim_src = sim->add_option("--scenario", sa.scenario, "catalog scenario name");
  sim->add_option("--model", sa.model, "model JSON in the truth format")->excludes(sim_src);
  sim->add_option("--seed", sa.seed, "random seed");
  sim->add_option("-T,--length", sa.T, "series length for --model");
  sim->add_option("--burn-in", sa.burn_in, "discarded warm-up samples");
  sim->add_option("--output", sa.output, "series CSV")->required();
  sim->add_option("--truth-output", sa.truth_output, "truth JSON (default <output>.truth.json)");

  DetectArgs da;
  auto* det = app.add_subcommand("detect", "detect break points in a CSV series");
  det->allow_config_extras(CLI::config_extras_mode::error);
  det->add_option("--input", da.input, "series CSV, rows = time")->required();
  det->add_option("--output", da.output, "JSON report")->required();
  det->add_option("--truth", da.truth, "truth JSON for scoring");
  det->add_option("--seed", da.seed, "random seed (default: drawn and logged)");
  auto* lag = det->add_option("--lag", da.lag, "VAR lag order");
  det->add_option("--lag-max", da.lag_max, "choose the lag by BIC up to this order")->excludes(lag);
  det->add_option("--block-size-candidates", da.block_candidates, "data-driven block size search over K sizes");
  det->add_flag("--stability", da.stability, "run stability selection");
  det->add_option("--subsamples", da.subsamples, "stability subsamples N_s");
  det->add_option("--tau", da.tau, "stability threshold");
  det->add_flag("--no-estimate", da.no_estimate, "skip segment network estimation");
  da.tuning.add(det);

  BenchmarkArgs ba;
  auto* ben = app.add_subcommand("benchmark", "replicate a catalog scenario");
  ben->allow_config_extras(CLI::config_extras_mode::error);
  ben->add_option("--scenario", ba.scenario, "catalog scenario name")->required();
  ben->add_option("--seed", ba.seed, "base seed, replicate r uses seed + r")->required();
  ben->add_option("--replicates", ba.replicates, "number of replicates")->check(CLI::PositiveNumber);
  ben->add_option("--output", ba.output, "JSON report");
  ben->add_option("--table", ba.table, "text table file");
  ben->add_option("--sweep-blocksize", ba.sweep, "block sizes for the runtime sweep")->delimiter(',');
  ben->add_option("--sweep-output", ba.sweep_output, "sweep CSV (default <output>.sweep.csv)");
  ben->add_option("--burn-in", ba.burn_in, "discarded warm-up samples");
  ben->add_flag("--stability", ba.stability, "run stability selection");
  ben->add_option("--subsamples", ba.subsamples, "stability subsamples N_s");
  ben->add_option("--tau", ba.tau, "stability threshold");
  ba.tuning.add(ben);

  for (auto* sub : {sim, det, ben}) sub->fallthrough();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }

  try {
    if (*sim) {
      if (sa.scenario.empty() == sa.model.empty()) throw ConfigError("simulate needs exactly one of --scenario, --model");
      return cmd_simulate(sa, out);
    }
    if (*det) return cmd_detect(da, out);
    return cmd_benchmark(ba, out);
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return parse_error;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    err << "pipeline error: " << e.what() << '\n';
    return pipeline_error;
  }
}

}  // namespace tbss::cli
